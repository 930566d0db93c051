#pragma once

// Amortised Gaussian prior over the progression rate given one scan:
// p(beta | z, a) = N(mu(z, a), sigma^2(z, a)), trained on rate triplets.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <vector>

#include "mrextrap/core.hpp"
#include "mrextrap/mlp.hpp"
#include "mrextrap/optim.hpp"
#include "mrextrap/progression.hpp"
#include "mrextrap/rng.hpp"
#include "mrextrap/tensor_io.hpp"

namespace mrextrap {

struct GaussianPriorConfig {
  std::size_t hidden_width = 64;
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 32;
  double nll_weight = 1e-3;
  double rms_decay = 0.99;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden_width == 0) throw Error(Errc::invalid_config, "hidden_width must be positive");
    if (!(learning_rate >= 0.0)) throw Error(Errc::invalid_config, "learning_rate must be >= 0");
    if (epochs < 0 || batch_size < 1) throw Error(Errc::invalid_config, "epochs/batch_size");
    if (!(nll_weight >= 0.0)) throw Error(Errc::invalid_config, "nll_weight must be >= 0");
  }
};

/// Mean over elements of |mu - beta| + w ((beta - mu)^2 / sigma^2 + log sigma^2).
/// Optional gradients are of that mean.
inline double gaussian_prior_loss(std::span<const double> pred_mean, std::span<const double> pred_logvar,
                                  std::span<const double> target, double nll_weight,
                                  std::span<double> d_mean = {}, std::span<double> d_logvar = {}) {
  if (pred_mean.size() != target.size() || pred_logvar.size() != target.size()) {
    throw Error(Errc::shape_mismatch, "prior loss inputs differ in size");
  }
  const bool grad = !d_mean.empty();
  const double n = static_cast<double>(target.size());
  double sum = 0.0;
  for (std::size_t e = 0; e < target.size(); ++e) {
    const double diff = pred_mean[e] - target[e];
    const double inv_var = std::exp(-pred_logvar[e]);
    sum += std::abs(diff) + nll_weight * (diff * diff * inv_var + pred_logvar[e]);
    if (grad) {
      const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      d_mean[e] = (sgn + 2.0 * nll_weight * diff * inv_var) / n;
      d_logvar[e] = nll_weight * (1.0 - diff * diff * inv_var) / n;
    }
  }
  const double loss = sum / n;
  if (!std::isfinite(loss)) throw Error(Errc::non_finite, "prior loss is not finite");
  return loss;
}

inline double gaussian_prior_loss(const Beta& pred_mean, const Beta& pred_logvar, const Beta& target,
                                  double nll_weight) {
  require_same_shape(pred_mean, target, "prior mean and target shapes differ");
  require_same_shape(pred_logvar, target, "prior log-variance and target shapes differ");
  return gaussian_prior_loss(pred_mean.values(), pred_logvar.values(), target.values(), nll_weight);
}

/// Columns [standardised latent; normalised age] for a set of (latent, age) pairs.
inline Mat<double> condition_matrix(std::span<const LatentGrid* const> latents, std::span<const double> ages,
                                    const Standardizer& zs) {
  const auto L = zs.mean.size();
  Mat<double> raw(L, static_cast<Eigen::Index>(latents.size()));
  for (std::size_t c = 0; c < latents.size(); ++c) {
    if (static_cast<Eigen::Index>(latents[c]->size()) != L) {
      throw Error(Errc::shape_mismatch, "latent size does not match the network");
    }
    for (Eigen::Index e = 0; e < L; ++e) raw(e, static_cast<Eigen::Index>(c)) = (*latents[c])[static_cast<std::size_t>(e)];
  }
  Mat<double> out(L + 1, raw.cols());
  out.topRows(L) = zs.apply(raw);
  for (std::size_t c = 0; c < ages.size(); ++c) out(L, static_cast<Eigen::Index>(c)) = normalize_age(ages[c]);
  return out;
}

/// Rounds every value to float precision so that checkpoints reload exactly.
inline void round_to_float(Mat<double>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}
inline void round_to_float(Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<double>(static_cast<float>(v(i)));
}

class GaussianPriorNet {
 public:
  GaussianPriorNet() = default;
  GaussianPriorNet(GaussianPriorConfig config, std::vector<std::size_t> beta_dims)
      : config_(config), dims_(std::move(beta_dims)) {
    config_.validate();
    const auto L = static_cast<Eigen::Index>(Beta::element_count(dims_));
    mlp_ = Mlp(L + 1, static_cast<Eigen::Index>(config_.hidden_width), 2 * L);
    z_std_.mean = Eigen::VectorXd::Zero(L);
    z_std_.scale = Eigen::VectorXd::Ones(L);
    beta_std_ = z_std_;
  }

  const GaussianPriorConfig& config() const { return config_; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t size() const { return Beta::element_count(dims_); }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }
  Standardizer& latent_standardizer() { return z_std_; }
  const Standardizer& latent_standardizer() const { return z_std_; }
  Standardizer& beta_standardizer() { return beta_std_; }
  const Standardizer& beta_standardizer() const { return beta_std_; }
  std::vector<double>& loss_curve() { return loss_curve_; }
  const std::vector<double>& loss_curve() const { return loss_curve_; }

  /// Output starts at the training-set mean rate with the training-set variance.
  void initialize(std::uint64_t seed) {
    mlp_.initialize(seed);
    const auto L = static_cast<Eigen::Index>(size());
    mlp_.params()["w2"].setZero();
    auto& b2 = mlp_.params()["b2"];
    for (Eigen::Index e = 0; e < L; ++e) b2(L + e, 0) = 2.0 * std::log(beta_std_.scale(e));
  }

  /// Mean and log-variance rows (L each) for condition columns.
  std::pair<Mat<double>, Mat<double>> forward(const Mat<double>& cond, Mat<double>* hidden = nullptr,
                                              Mat<double>* raw_var = nullptr) const {
    const auto L = static_cast<Eigen::Index>(size());
    Mat<double> out = mlp_.forward(cond, hidden);
    Mat<double> mean = beta_std_.invert(out.topRows(L));
    Mat<double> r = out.bottomRows(L);
    Mat<double> logvar = (r.array().exp() + kVarianceFloor).log();
    if (raw_var) *raw_var = std::move(r);
    return {std::move(mean), std::move(logvar)};
  }

  /// Mean loss over the columns; fills parameter gradients when `grad` is set.
  double loss(const Mat<double>& cond, const Mat<double>& targets, ParamSet<double>* grad) const {
    const auto L = static_cast<Eigen::Index>(size());
    Mat<double> hidden, r;
    auto [mean, logvar] = forward(cond, &hidden, &r);
    const double B = static_cast<double>(cond.cols());
    Mat<double> d_out(2 * L, cond.cols());
    std::vector<double> dm(static_cast<std::size_t>(L)), dl(static_cast<std::size_t>(L));
    double total = 0.0;
    for (Eigen::Index c = 0; c < cond.cols(); ++c) {
      total += gaussian_prior_loss(std::span<const double>(mean.col(c).data(), L),
                                   std::span<const double>(logvar.col(c).data(), L),
                                   std::span<const double>(targets.col(c).data(), L), config_.nll_weight, dm, dl);
      if (grad) {
        for (Eigen::Index e = 0; e < L; ++e) {
          d_out(e, c) = dm[static_cast<std::size_t>(e)] * beta_std_.scale(e) / B;
          const double er = std::exp(r(e, c));
          d_out(L + e, c) = dl[static_cast<std::size_t>(e)] * er / (er + kVarianceFloor) / B;
        }
      }
    }
    if (grad) *grad = mlp_.backward(cond, hidden, d_out);
    return total / B;
  }

 private:
  GaussianPriorConfig config_;
  std::vector<std::size_t> dims_;
  Mlp mlp_;
  Standardizer z_std_, beta_std_;
  std::vector<double> loss_curve_;
};

struct TripletMatrices {
  Mat<double> latents;  // L x N raw
  Mat<double> betas;    // L x N raw
  std::vector<double> ages;
};

inline TripletMatrices triplet_matrices(std::span<const TrainingTriplet> triplets) {
  if (triplets.empty()) throw Error(Errc::insufficient_data, "no training triplets");
  const auto L = static_cast<Eigen::Index>(triplets.front().beta.size());
  TripletMatrices m{Mat<double>(L, static_cast<Eigen::Index>(triplets.size())),
                    Mat<double>(L, static_cast<Eigen::Index>(triplets.size())), {}};
  for (std::size_t c = 0; c < triplets.size(); ++c) {
    const auto& t = triplets[c];
    require_same_shape(t.beta, triplets.front().beta, "triplet rates differ in shape");
    require_same_shape(t.latent, t.beta, "triplet latent and rate shapes differ");
    for (Eigen::Index e = 0; e < L; ++e) {
      m.latents(e, static_cast<Eigen::Index>(c)) = t.latent[static_cast<std::size_t>(e)];
      m.betas(e, static_cast<Eigen::Index>(c)) = t.beta[static_cast<std::size_t>(e)];
    }
    m.ages.push_back(t.age);
  }
  return m;
}

inline Mat<double> conditions_from(const TripletMatrices& m, const Standardizer& zs) {
  const auto L = m.latents.rows();
  Mat<double> cond(L + 1, m.latents.cols());
  cond.topRows(L) = zs.apply(m.latents);
  for (Eigen::Index c = 0; c < cond.cols(); ++c) cond(L, c) = normalize_age(m.ages[static_cast<std::size_t>(c)]);
  return cond;
}

template <typename F>
void for_each_batch(std::size_t n, int batch_size, std::vector<std::size_t>& order, F&& f) {
  for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(batch_size)) {
    const std::size_t cnt = std::min<std::size_t>(static_cast<std::size_t>(batch_size), n - s);
    f(std::span<const std::size_t>(order.data() + s, cnt));
  }
}

inline Mat<double> gather_columns(const Mat<double>& m, std::span<const std::size_t> idx) {
  Mat<double> out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(static_cast<Eigen::Index>(idx[c]));
  return out;
}

/// loss_curve[0] is the full-data loss before training, then one entry per epoch.
inline GaussianPriorNet train_gaussian_prior(std::span<const TrainingTriplet> triplets,
                                             const GaussianPriorConfig& config) {
  config.validate();
  const TripletMatrices data = triplet_matrices(triplets);
  GaussianPriorNet net(config, triplets.front().beta.dims());
  net.latent_standardizer() = Standardizer::fit(data.latents);
  net.beta_standardizer() = Standardizer::fit(data.betas);
  round_to_float(net.latent_standardizer().mean);
  round_to_float(net.latent_standardizer().scale);
  round_to_float(net.beta_standardizer().mean);
  round_to_float(net.beta_standardizer().scale);
  net.initialize(derive_seed(config.seed, {21}));
  for (auto& v : net.mlp().params().values) round_to_float(v);

  const Mat<double> cond = conditions_from(data, net.latent_standardizer());
  const std::size_t n = triplets.size();
  auto check = [](double v) {
    if (!std::isfinite(v)) throw Error(Errc::divergence, "prior network loss became non-finite");
    return v;
  };
  net.loss_curve().push_back(check(net.loss(cond, data.betas, nullptr)));

  Rng rng(derive_seed(config.seed, {22}));
  RmsProp<double> opt(config.learning_rate, config.rms_decay);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  ParamSet<double> grad;
  const std::size_t per_epoch = (n + static_cast<std::size_t>(config.batch_size) - 1) / static_cast<std::size_t>(config.batch_size);
  const std::size_t total_steps = per_epoch * static_cast<std::size_t>(config.epochs);
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for_each_batch(n, config.batch_size, order, [&](std::span<const std::size_t> idx) {
      check(net.loss(gather_columns(cond, idx), gather_columns(data.betas, idx), &grad));
      opt.set_learning_rate(cosine_lr(config.learning_rate, step++, total_steps));
      if (config.learning_rate > 0.0) opt.step(net.mlp().params(), grad);
    });
    net.loss_curve().push_back(check(net.loss(cond, data.betas, nullptr)));
  }
  for (auto& v : net.mlp().params().values) round_to_float(v);
  return net;
}

/// Variance is at least kVarianceFloor by construction.
inline GaussianBelief predict_gaussian_prior(const GaussianPriorNet& net, const LatentGrid& latent, double age) {
  if (latent.dims() != net.dims()) throw Error(Errc::shape_mismatch, "latent shape does not match the prior network");
  const LatentGrid* ptr = &latent;
  const double a = age;
  const Mat<double> cond = condition_matrix(std::span<const LatentGrid* const>(&ptr, 1),
                                            std::span<const double>(&a, 1), net.latent_standardizer());
  auto [mean, logvar] = net.forward(cond);
  GaussianBelief b{Beta(net.dims()), Beta(net.dims())};
  for (std::size_t e = 0; e < net.size(); ++e) {
    b.mean[e] = mean(static_cast<Eigen::Index>(e), 0);
    b.variance[e] = std::max(std::exp(logvar(static_cast<Eigen::Index>(e), 0)), kVarianceFloor);
  }
  return b;
}

inline io::NamedTensors standardizer_tensors(const Standardizer& s, const std::string& prefix) {
  return {{prefix + ".mean", matrix_to_raw<double>(s.mean)}, {prefix + ".scale", matrix_to_raw<double>(s.scale)}};
}

inline void load_standardizer(Standardizer& s, const io::NamedTensors& entries, const std::string& prefix) {
  s.mean = raw_to_matrix<double>(io::find_tensor(entries, prefix + ".mean"));
  s.scale = raw_to_matrix<double>(io::find_tensor(entries, prefix + ".scale"));
}

inline void save_gaussian_prior(const GaussianPriorNet& net, const std::filesystem::path& path) {
  io::NamedTensors t = to_named_tensors(net.mlp().params(), "net.");
  for (auto& e : standardizer_tensors(net.latent_standardizer(), "latent_std")) t.push_back(std::move(e));
  for (auto& e : standardizer_tensors(net.beta_standardizer(), "beta_std")) t.push_back(std::move(e));
  io::write_container(path, t);
}

inline GaussianPriorNet load_gaussian_prior(const std::filesystem::path& path, const GaussianPriorConfig& config,
                                            std::vector<std::size_t> beta_dims) {
  GaussianPriorNet net(config, std::move(beta_dims));
  const auto entries = io::read_container(path);
  load_named_tensors(net.mlp().params(), entries, "net.");
  load_standardizer(net.latent_standardizer(), entries, "latent_std");
  load_standardizer(net.beta_standardizer(), entries, "beta_std");
  if (net.latent_standardizer().mean.size() != static_cast<Eigen::Index>(net.size())) {
    throw Error(Errc::shape_mismatch, "checkpoint does not match the rate shape");
  }
  return net;
}

}  // namespace mrextrap
