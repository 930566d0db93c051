#pragma once

// KL-regularised reconstruction autoencoder.
//
// Two architectures share one parameter layout convention:
//   affine: mean = W x + b, log_variance = W' x + b', x_hat = D z + d
//   hidden: one tanh layer of `hidden_width` units on each side.
// Training loss per volume: mean|x - x_hat| + ssim_weight * (1 - SSIM) +
// gamma_kl * KL(N(mean, exp(log_variance)) || N(0, I)), with z sampled by
// reparameterisation during training and z = mean everywhere else.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <numbers>
#include <vector>

#include "mrextrap/core.hpp"
#include "mrextrap/optim.hpp"
#include "mrextrap/phantom.hpp"
#include "mrextrap/rng.hpp"
#include "mrextrap/ssim.hpp"

namespace mrextrap {

enum class AEArchitecture { affine, hidden };
enum class AEInit { pca, random };

struct AEConfig {
  double gamma_kl = 1e-5;
  double ssim_weight = 1.0;
  double learning_rate = 2e-6;
  int epochs = 8;
  int batch_size = 8;
  std::uint64_t seed = 0;
  AEArchitecture architecture = AEArchitecture::affine;
  std::size_t hidden_width = 64;
  std::size_t latent_channels = 4;
  std::size_t downsample = 8;
  AEInit init = AEInit::pca;
  double init_logvar = -10.0;
  double init_scale = 1.0;
  double rms_decay = 0.99;
  std::size_t ssim_window = 7;
  double dynamic_range = 1.0;
  bool sample_latent = true;
  bool pca_noise_floor = true;

  void validate() const {
    if (!(gamma_kl >= 0.0)) throw Error(Errc::invalid_config, "gamma_kl must be >= 0");
    if (!(ssim_weight >= 0.0)) throw Error(Errc::invalid_config, "ssim_weight must be >= 0");
    if (!(learning_rate >= 0.0)) throw Error(Errc::invalid_config, "learning_rate must be >= 0");
    if (epochs < 0 || batch_size < 1) throw Error(Errc::invalid_config, "epochs/batch_size");
    if (latent_channels == 0 || downsample == 0) throw Error(Errc::invalid_config, "latent shape");
    if (architecture == AEArchitecture::hidden && hidden_width == 0) {
      throw Error(Errc::invalid_config, "hidden_width must be positive");
    }
  }
};

struct EncodedDistribution {
  LatentGrid mean;
  LatentGrid log_variance;
};

struct AELossTerms {
  double total = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;  // 1 - SSIM
  double kl = 0.0;    // unweighted divergence
};

/// Loss of one reconstruction; optional gradients with respect to the
/// reconstruction, the latent mean and the latent log-variance.
struct AELossGradient {
  std::vector<double> d_reconstruction, d_mean, d_log_variance;
};

template <typename T, typename U>
AELossTerms ae_loss_terms(std::span<const T> x, std::span<const T> recon, const std::vector<std::size_t>& shape,
                          std::span<const U> mean, std::span<const U> log_variance, const AEConfig& config,
                          AELossGradient* grad = nullptr) {
  if (x.size() != recon.size() || mean.size() != log_variance.size()) {
    throw Error(Errc::shape_mismatch, "ae_loss operand sizes differ");
  }
  auto finite = [](auto span) {
    return std::all_of(span.begin(), span.end(), [](auto v) { return std::isfinite(static_cast<double>(v)); });
  };
  if (!finite(x) || !finite(recon) || !finite(mean) || !finite(log_variance)) {
    throw Error(Errc::non_finite, "ae_loss received non-finite input");
  }
  const std::size_t nv = x.size();
  AELossTerms out;
  for (std::size_t i = 0; i < nv; ++i) out.l1 += std::abs(static_cast<double>(recon[i]) - x[i]);
  out.l1 /= static_cast<double>(nv);

  const SsimOptions so{config.ssim_window, config.dynamic_range};
  std::vector<double> gssim;
  if (grad) gssim.assign(nv, 0.0);
  const double s = detail::ssim_impl<T>(x, recon, shape, so, gssim);
  out.ssim = 1.0 - s;

  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double m = mean[i], lv = log_variance[i];
    out.kl += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
  }
  out.total = out.l1 + config.ssim_weight * out.ssim + config.gamma_kl * out.kl;

  if (grad) {
    grad->d_reconstruction.resize(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      const double diff = static_cast<double>(recon[i]) - x[i];
      const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      grad->d_reconstruction[i] = sgn / static_cast<double>(nv) - config.ssim_weight * gssim[i];
    }
    grad->d_mean.resize(mean.size());
    grad->d_log_variance.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
      grad->d_mean[i] = config.gamma_kl * mean[i];
      grad->d_log_variance[i] = config.gamma_kl * 0.5 * (std::exp(static_cast<double>(log_variance[i])) - 1.0);
    }
  }
  return out;
}

inline AELossTerms ae_loss(const VolumeGrid& x, const VolumeGrid& recon, const EncodedDistribution& dist,
                           const AEConfig& config) {
  require_same_shape(x, recon, "ae_loss: reconstruction shape differs from input");
  require_same_shape(dist.mean, dist.log_variance, "ae_loss: mean/log_variance shapes differ");
  return ae_loss_terms<float, double>(x.values(), recon.values(), x.dims(), dist.mean.values(),
                                      dist.log_variance.values(), config);
}

struct TrainingReport {
  std::vector<double> loss_curve;  // [0] = before any update, then per-epoch means
};

/// Median of the Marchenko-Pastur law with unit variance and aspect ratio
/// gamma in (0, 1].
inline double marchenko_pastur_median(double gamma) {
  const double lo = (1.0 - std::sqrt(gamma)) * (1.0 - std::sqrt(gamma));
  const double hi = (1.0 + std::sqrt(gamma)) * (1.0 + std::sqrt(gamma));
  constexpr int steps = 20000;
  const double h = (hi - lo) / steps;
  double mass = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double x = lo + (i + 0.5) * h;
    mass += std::sqrt((hi - x) * (x - lo)) / (2.0 * std::numbers::pi * gamma * x) * h;
    if (mass >= 0.5) return x;
  }
  return hi;
}

/// Number of Gram-matrix eigenvalues (ascending, from n centred samples of
/// p varying coordinates) above the Marchenko-Pastur edge of an isotropic
/// noise bulk. The noise scale is the median eigenvalue over the law's median.
/// When that median is not in the bulk (most components carry signal), or
/// there are fewer coordinates than samples, every component is kept.
inline Eigen::Index components_above_noise(const Eigen::VectorXd& ascending, Eigen::Index p) {
  const Eigen::Index n = ascending.size();
  const Eigen::Index m = n - 1;  // centring removes one dimension
  if (m < 2 || p <= m) return n;
  std::vector<double> top(ascending.data() + 1, ascending.data() + n);
  std::nth_element(top.begin(), top.begin() + m / 2, top.end());
  const double gamma = static_cast<double>(m) / static_cast<double>(p);
  const double scale = top[static_cast<std::size_t>(m / 2)] / marchenko_pastur_median(gamma);
  const double edge = scale * (1.0 + std::sqrt(gamma)) * (1.0 + std::sqrt(gamma));
  Eigen::Index above = 0;
  for (Eigen::Index i = 0; i < n; ++i) above += ascending(i) > edge;
  return 2 * above <= m ? above : n;
}

template <typename T = float>
class Autoencoder {
 public:
  Autoencoder(AEConfig config, std::vector<std::size_t> input_dims)
      : config_(std::move(config)), input_dims_(std::move(input_dims)) {
    config_.validate();
    if (input_dims_.size() != 3) throw Error(Errc::invalid_argument, "autoencoder input must be rank 3");
    latent_dims_ = {config_.latent_channels};
    for (auto d : input_dims_) {
      if (d % config_.downsample != 0) throw Error(Errc::invalid_argument, "input not divisible by downsample");
      latent_dims_.push_back(d / config_.downsample);
    }
    const auto nv = static_cast<Eigen::Index>(input_size());
    const auto nl = static_cast<Eigen::Index>(latent_size());
    if (config_.architecture == AEArchitecture::affine) {
      params_.add("enc_mu.weight", nl, nv);
      params_.add("enc_mu.bias", nl, 1);
      params_.add("enc_logvar.weight", nl, nv);
      params_.add("enc_logvar.bias", nl, 1);
      params_.add("dec.weight", nv, nl);
      params_.add("dec.bias", nv, 1);
    } else {
      const auto h = static_cast<Eigen::Index>(config_.hidden_width);
      params_.add("enc_hidden.weight", h, nv);
      params_.add("enc_hidden.bias", h, 1);
      params_.add("enc_mu.weight", nl, h);
      params_.add("enc_mu.bias", nl, 1);
      params_.add("enc_logvar.weight", nl, h);
      params_.add("enc_logvar.bias", nl, 1);
      params_.add("dec_hidden.weight", h, nl);
      params_.add("dec_hidden.bias", h, 1);
      params_.add("dec.weight", nv, h);
      params_.add("dec.bias", nv, 1);
    }
  }

  const AEConfig& config() const { return config_; }
  const std::vector<std::size_t>& input_dims() const { return input_dims_; }
  const std::vector<std::size_t>& latent_dims() const { return latent_dims_; }
  std::size_t input_size() const { return Grid<float, VolumeTag>::element_count(input_dims_); }
  std::size_t latent_size() const { return Grid<float, VolumeTag>::element_count(latent_dims_); }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  TrainingReport& report() { return report_; }
  const TrainingReport& report() const { return report_; }

  void initialize_random(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < params_.names.size(); ++i) {
      auto& m = params_.values[i];
      if (params_.names[i].ends_with(".weight")) {
        fill_normal(m, rng, config_.init_scale / std::sqrt(static_cast<double>(m.cols())));
      } else {
        m.setZero();
      }
    }
    params_["enc_logvar.weight"].setZero();
    params_["enc_logvar.bias"].setConstant(static_cast<T>(config_.init_logvar));
  }

  /// Principal-subspace initialisation of the affine map from training volumes
  /// (columns of `data`): encoder = U^T (x - mean), decoder = U z + mean.
  /// With pca_noise_floor, components inside the noise bulk are left at zero.
  void initialize_pca(const Mat<T>& data) {
    if (config_.architecture != AEArchitecture::affine) {
      throw Error(Errc::invalid_config, "PCA initialisation requires the affine architecture");
    }
    const Eigen::Index n = data.cols();
    Eigen::VectorXd mean = data.template cast<double>().rowwise().mean();
    Eigen::MatrixXd centered = data.template cast<double>().colwise() - mean;
    Eigen::MatrixXd gram = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const Eigen::Index nl = static_cast<Eigen::Index>(latent_size());
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(centered.rows(), nl);
    const double top = n > 0 ? eig.eigenvalues()(n - 1) : 0.0;
    Eigen::Index keep = std::min(nl, n);
    if (config_.pca_noise_floor) {
      Eigen::Index varying = 0;
      for (Eigen::Index r = 0; r < centered.rows(); ++r) varying += centered.row(r).squaredNorm() > 0.0;
      keep = std::min(keep, components_above_noise(eig.eigenvalues(), varying));
    }
    for (Eigen::Index k = 0; k < keep; ++k) {
      const Eigen::Index idx = n - 1 - k;
      const double lambda = eig.eigenvalues()(idx);
      if (!(lambda > 1e-12 * top) || lambda <= 0.0) break;
      basis.col(k) = centered * eig.eigenvectors().col(idx) / std::sqrt(lambda);
    }
    params_["enc_mu.weight"] = basis.transpose().template cast<T>();
    params_["enc_mu.bias"] = (-(basis.transpose() * mean)).template cast<T>();
    params_["enc_logvar.weight"].setZero();
    params_["enc_logvar.bias"].setConstant(static_cast<T>(config_.init_logvar));
    params_["dec.weight"] = basis.template cast<T>();
    params_["dec.bias"] = mean.template cast<T>();
  }

  // Batched maps; columns are samples.
  std::pair<Mat<T>, Mat<T>> encode_batch(const Mat<T>& x) const {
    check_rows(x, input_size(), "encode: input shape does not match the model");
    if (config_.architecture == AEArchitecture::affine) {
      Mat<T> mu = (params_["enc_mu.weight"] * x).colwise() + params_["enc_mu.bias"].col(0);
      Mat<T> lv = (params_["enc_logvar.weight"] * x).colwise() + params_["enc_logvar.bias"].col(0);
      return {std::move(mu), std::move(lv)};
    }
    Mat<T> h = ((params_["enc_hidden.weight"] * x).colwise() + params_["enc_hidden.bias"].col(0)).array().tanh();
    Mat<T> mu = (params_["enc_mu.weight"] * h).colwise() + params_["enc_mu.bias"].col(0);
    Mat<T> lv = (params_["enc_logvar.weight"] * h).colwise() + params_["enc_logvar.bias"].col(0);
    return {std::move(mu), std::move(lv)};
  }

  Mat<T> decode_batch(const Mat<T>& z) const {
    check_rows(z, latent_size(), "decode: latent shape does not match the model");
    if (config_.architecture == AEArchitecture::affine) {
      return (params_["dec.weight"] * z).colwise() + params_["dec.bias"].col(0);
    }
    Mat<T> g = ((params_["dec_hidden.weight"] * z).colwise() + params_["dec_hidden.bias"].col(0)).array().tanh();
    return (params_["dec.weight"] * g).colwise() + params_["dec.bias"].col(0);
  }

  EncodedDistribution encode(const VolumeGrid& volume) const {
    if (volume.dims() != input_dims_) throw Error(Errc::shape_mismatch, "encode: volume shape mismatch");
    Mat<T> x(static_cast<Eigen::Index>(input_size()), 1);
    for (std::size_t i = 0; i < volume.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = static_cast<T>(volume[i]);
    auto [mu, lv] = encode_batch(x);
    EncodedDistribution d{LatentGrid(latent_dims_), LatentGrid(latent_dims_)};
    for (std::size_t i = 0; i < latent_size(); ++i) {
      d.mean[i] = static_cast<double>(mu(static_cast<Eigen::Index>(i), 0));
      d.log_variance[i] = static_cast<double>(lv(static_cast<Eigen::Index>(i), 0));
    }
    return d;
  }

  VolumeGrid decode(const LatentGrid& latent) const {
    if (latent.dims() != latent_dims_) throw Error(Errc::shape_mismatch, "decode: latent shape mismatch");
    Mat<T> z(static_cast<Eigen::Index>(latent_size()), 1);
    for (std::size_t i = 0; i < latent.size(); ++i) z(static_cast<Eigen::Index>(i), 0) = static_cast<T>(latent[i]);
    const Mat<T> x = decode_batch(z);
    VolumeGrid out(input_dims_);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(x(static_cast<Eigen::Index>(i), 0));
    return out;
  }

  VolumeGrid reconstruct(const VolumeGrid& volume) const { return decode(encode(volume).mean); }

  /// Mean loss over the batch and its parameter gradients. `noise` (latent x
  /// batch) is the reparameterisation draw; pass an empty matrix to decode the mean.
  AELossTerms loss_and_gradient(const Mat<T>& x, const Mat<T>& noise, ParamSet<T>* grad) const {
    const Eigen::Index b = x.cols();
    const bool sampled = noise.size() > 0;
    const bool hidden = config_.architecture == AEArchitecture::hidden;

    Mat<T> h;
    Mat<T> mu, lv;
    if (hidden) {
      h = ((params_["enc_hidden.weight"] * x).colwise() + params_["enc_hidden.bias"].col(0)).array().tanh();
      mu = (params_["enc_mu.weight"] * h).colwise() + params_["enc_mu.bias"].col(0);
      lv = (params_["enc_logvar.weight"] * h).colwise() + params_["enc_logvar.bias"].col(0);
    } else {
      std::tie(mu, lv) = encode_batch(x);
    }
    Mat<T> std_dev, z = mu;
    if (sampled) {
      std_dev = (lv.array() * T(0.5)).exp();
      z.array() += std_dev.array() * noise.array();
    }
    Mat<T> g;
    Mat<T> recon;
    if (hidden) {
      g = ((params_["dec_hidden.weight"] * z).colwise() + params_["dec_hidden.bias"].col(0)).array().tanh();
      recon = (params_["dec.weight"] * g).colwise() + params_["dec.bias"].col(0);
    } else {
      recon = decode_batch(z);
    }

    AELossTerms mean_terms;
    Mat<T> d_recon(recon.rows(), b), d_mu(mu.rows(), b), d_lv(lv.rows(), b);
    const double inv_b = 1.0 / static_cast<double>(b);
    for (Eigen::Index c = 0; c < b; ++c) {
      AELossGradient lg;
      const auto terms = ae_loss_terms<T, T>(
          std::span<const T>(x.col(c).data(), static_cast<std::size_t>(x.rows())),
          std::span<const T>(recon.col(c).data(), static_cast<std::size_t>(recon.rows())), input_dims_,
          std::span<const T>(mu.col(c).data(), static_cast<std::size_t>(mu.rows())),
          std::span<const T>(lv.col(c).data(), static_cast<std::size_t>(lv.rows())), config_, grad ? &lg : nullptr);
      mean_terms.total += terms.total * inv_b;
      mean_terms.l1 += terms.l1 * inv_b;
      mean_terms.ssim += terms.ssim * inv_b;
      mean_terms.kl += terms.kl * inv_b;
      if (grad) {
        for (Eigen::Index i = 0; i < recon.rows(); ++i) d_recon(i, c) = static_cast<T>(lg.d_reconstruction[i] * inv_b);
        for (Eigen::Index i = 0; i < mu.rows(); ++i) {
          d_mu(i, c) = static_cast<T>(lg.d_mean[i] * inv_b);
          d_lv(i, c) = static_cast<T>(lg.d_log_variance[i] * inv_b);
        }
      }
    }
    if (!grad) return mean_terms;

    *grad = params_.zeros_like();
    auto& G = *grad;
    Mat<T> d_z;
    if (hidden) {
      G["dec.weight"].noalias() = d_recon * g.transpose();
      G["dec.bias"] = d_recon.rowwise().sum();
      Mat<T> d_g_pre = (params_["dec.weight"].transpose() * d_recon).array() * (T(1) - g.array().square());
      G["dec_hidden.weight"].noalias() = d_g_pre * z.transpose();
      G["dec_hidden.bias"] = d_g_pre.rowwise().sum();
      d_z = params_["dec_hidden.weight"].transpose() * d_g_pre;
    } else {
      G["dec.weight"].noalias() = d_recon * z.transpose();
      G["dec.bias"] = d_recon.rowwise().sum();
      d_z = params_["dec.weight"].transpose() * d_recon;
    }
    d_mu += d_z;
    if (sampled) d_lv.array() += d_z.array() * noise.array() * std_dev.array() * T(0.5);

    const Mat<T>& enc_in = hidden ? h : x;
    G["enc_mu.weight"].noalias() = d_mu * enc_in.transpose();
    G["enc_mu.bias"] = d_mu.rowwise().sum();
    G["enc_logvar.weight"].noalias() = d_lv * enc_in.transpose();
    G["enc_logvar.bias"] = d_lv.rowwise().sum();
    if (hidden) {
      Mat<T> d_h = params_["enc_mu.weight"].transpose() * d_mu + params_["enc_logvar.weight"].transpose() * d_lv;
      Mat<T> d_h_pre = d_h.array() * (T(1) - h.array().square());
      G["enc_hidden.weight"].noalias() = d_h_pre * x.transpose();
      G["enc_hidden.bias"] = d_h_pre.rowwise().sum();
    }
    return mean_terms;
  }

 private:
  static void check_rows(const Mat<T>& m, std::size_t rows, const char* what) {
    if (static_cast<std::size_t>(m.rows()) != rows) throw Error(Errc::shape_mismatch, what);
  }

  AEConfig config_;
  std::vector<std::size_t> input_dims_;
  std::vector<std::size_t> latent_dims_;
  ParamSet<T> params_;
  TrainingReport report_;
};

template <typename T>
Mat<T> volumes_to_matrix(std::span<const VolumeGrid> volumes) {
  if (volumes.empty()) return {};
  Mat<T> x(static_cast<Eigen::Index>(volumes.front().size()), static_cast<Eigen::Index>(volumes.size()));
  for (std::size_t c = 0; c < volumes.size(); ++c) {
    if (volumes[c].dims() != volumes.front().dims()) throw Error(Errc::shape_mismatch, "training volumes differ");
    for (std::size_t i = 0; i < volumes[c].size(); ++i) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = static_cast<T>(volumes[c][i]);
    }
  }
  return x;
}

/// Trains on individual volumes (cross-sectional). Deterministic given config.seed.
template <typename T = float>
Autoencoder<T> train_autoencoder(std::span<const VolumeGrid> volumes, const AEConfig& config) {
  if (volumes.empty()) throw Error(Errc::insufficient_data, "no training volumes");
  Autoencoder<T> model(config, volumes.front().dims());
  const Mat<T> data = volumes_to_matrix<T>(volumes);
  if (config.init == AEInit::pca) {
    model.initialize_pca(data);
  } else {
    model.initialize_random(derive_seed(config.seed, {11}));
  }

  const Eigen::Index n = data.cols();
  const Eigen::Index nl = static_cast<Eigen::Index>(model.latent_size());
  Rng rng(derive_seed(config.seed, {12}));
  RmsProp<T> opt(config.learning_rate, config.rms_decay);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  auto draw_noise = [&](Eigen::Index cols) {
    Mat<T> e;
    if (config.sample_latent) {
      e.resize(nl, cols);
      fill_normal(e, rng, 1.0);
    }
    return e;
  };
  auto batch_of = [&](Eigen::Index start, Eigen::Index count) {
    Mat<T> xb(data.rows(), count);
    for (Eigen::Index c = 0; c < count; ++c) xb.col(c) = data.col(order[static_cast<std::size_t>(start + c)]);
    return xb;
  };
  auto check = [](double loss) {
    if (!std::isfinite(loss)) throw Error(Errc::divergence, "autoencoder loss became non-finite");
  };

  auto& curve = model.report().loss_curve;
  {
    double initial = 0.0;
    for (Eigen::Index s = 0; s < n; s += config.batch_size) {
      const Eigen::Index cnt = std::min<Eigen::Index>(config.batch_size, n - s);
      initial += model.loss_and_gradient(batch_of(s, cnt), draw_noise(cnt), nullptr).total * cnt;
    }
    check(initial);
    curve.push_back(initial / static_cast<double>(n));
  }
  ParamSet<T> grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_loss = 0.0;
    for (Eigen::Index s = 0; s < n; s += config.batch_size) {
      const Eigen::Index cnt = std::min<Eigen::Index>(config.batch_size, n - s);
      const auto terms = model.loss_and_gradient(batch_of(s, cnt), draw_noise(cnt), &grad);
      check(terms.total);
      opt.step(model.params(), grad);
      epoch_loss += terms.total * cnt;
    }
    curve.push_back(epoch_loss / static_cast<double>(n));
  }
  return model;
}

/// Cross-sectional training on every scan of the cohort's train split.
template <typename T = float>
Autoencoder<T> train_autoencoder(const Cohort& cohort, const AEConfig& config) {
  std::vector<VolumeGrid> volumes;
  for (const auto* s : cohort.in_split(Split::train)) {
    for (const auto& scan : s->scans) volumes.push_back(render_scan(cohort, *s, scan));
  }
  if (volumes.empty()) throw Error(Errc::insufficient_data, "cohort train split is empty");
  return train_autoencoder<T>(volumes, config);
}

}  // namespace mrextrap
