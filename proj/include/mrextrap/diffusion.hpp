#pragma once

// Denoising-diffusion prior over progression rates conditioned on one scan.
// The network works on rates standardised per element with training-set
// statistics; sampling maps back to rate units at the end.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "mrextrap/core.hpp"
#include "mrextrap/gaussian_prior.hpp"
#include "mrextrap/mlp.hpp"
#include "mrextrap/optim.hpp"
#include "mrextrap/progression.hpp"
#include "mrextrap/rng.hpp"
#include "mrextrap/tensor_io.hpp"

namespace mrextrap {

/// Index t runs 0..T; entry 0 is the clean-data convention (alpha_bar = 1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar;

  static NoiseSchedule linear(int steps = 500, double beta_start = 1e-4, double beta_end = 0.02) {
    if (steps < 1) throw Error(Errc::invalid_schedule, "schedule needs at least one step");
    NoiseSchedule s;
    s.T = steps;
    s.beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
    s.alpha.assign(s.beta.size(), 1.0);
    s.alpha_bar.assign(s.beta.size(), 1.0);
    for (int t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
      s.beta[t] = beta_start + (beta_end - beta_start) * frac;
      s.alpha[t] = 1.0 - s.beta[t];
      s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    s.validate();
    return s;
  }

  void validate() const {
    const auto n = static_cast<std::size_t>(T) + 1;
    if (T < 1 || beta.size() != n || alpha.size() != n || alpha_bar.size() != n) {
      throw Error(Errc::invalid_schedule, "schedule arrays do not match T");
    }
    if (alpha_bar[0] != 1.0) throw Error(Errc::invalid_schedule, "alpha_bar_0 must be 1");
    for (int t = 1; t <= T; ++t) {
      if (!(beta[t] > 0.0 && beta[t] < 1.0)) throw Error(Errc::invalid_schedule, "beta_t outside (0, 1)");
      if (t > 1 && !(beta[t] >= beta[t - 1])) throw Error(Errc::invalid_schedule, "beta_t must not decrease");
      if (!(alpha_bar[t] < alpha_bar[t - 1])) throw Error(Errc::invalid_schedule, "alpha_bar must decrease");
    }
  }
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline std::vector<double> forward_noise(const NoiseSchedule& s, std::span<const double> x0, int t,
                                         std::span<const double> eps) {
  if (t < 0 || t > s.T) throw Error(Errc::invalid_schedule, "timestep outside the schedule");
  const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

/// Inverts forward_noise given the noise.
inline std::vector<double> predict_x0(const NoiseSchedule& s, std::span<const double> xt, int t,
                                      std::span<const double> eps) {
  if (t < 0 || t > s.T) throw Error(Errc::invalid_schedule, "timestep outside the schedule");
  const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
  std::vector<double> out(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) out[i] = (xt[i] - b * eps[i]) / a;
  return out;
}

inline double mean_squared(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw Error(Errc::shape_mismatch, "noise grids differ in size");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// One reverse step: x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + n,
/// n ~ N(0, (1 - abar_{t-1}) / (1 - abar_t) (1 - alpha_t)), n = 0 when t = 1.
inline void reverse_step(const NoiseSchedule& s, int t, std::span<double> x, std::span<const double> eps, Rng* rng) {
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[t]);
  const double coef = (1.0 - s.alpha[t]) / std::sqrt(s.alpha[t] * (1.0 - s.alpha_bar[t]));
  const double sigma = std::sqrt((1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * (1.0 - s.alpha[t]));
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = inv_sqrt_alpha * x[i] - coef * eps[i];
    if (rng && t > 1) x[i] += sigma * rng->normal();
  }
}

/// Ancestral sampling for any noise predictor eps_fn(x_t, t, eps_out).
/// With add_noise = false every reverse step is deterministic.
template <typename EpsFn>
std::vector<double> ancestral_sample(const NoiseSchedule& s, std::size_t dim, EpsFn&& eps_fn, std::uint64_t seed,
                                     bool add_noise = true) {
  s.validate();
  Rng rng(seed);
  std::vector<double> x(dim), eps(dim);
  for (auto& v : x) v = rng.normal();
  for (int t = s.T; t >= 1; --t) {
    eps_fn(std::span<const double>(x), t, std::span<double>(eps));
    reverse_step(s, t, x, eps, add_noise ? &rng : nullptr);
  }
  return x;
}

/// Elementwise mean of K chains seeded seed + 0 ... seed + K - 1.
template <typename EpsFn>
std::vector<double> sample_averaged(const NoiseSchedule& s, std::size_t dim, EpsFn&& eps_fn, int K,
                                    std::uint64_t seed, bool add_noise = true) {
  if (K < 1) throw Error(Errc::invalid_argument, "K must be at least 1");
  std::vector<double> mean(dim, 0.0);
  for (int k = 0; k < K; ++k) {
    const auto x = ancestral_sample(s, dim, eps_fn, seed + static_cast<std::uint64_t>(k), add_noise);
    for (std::size_t i = 0; i < dim; ++i) mean[i] += x[i];
  }
  for (auto& v : mean) v /= K;
  return mean;
}

/// [sin(2^k pi t/T), cos(2^k pi t/T)] for k = 0 .. width/2 - 1.
inline std::vector<double> timestep_embedding(int t, int T, std::size_t width) {
  std::vector<double> e(width, 0.0);
  const double u = static_cast<double>(t) / T;
  for (std::size_t k = 0; 2 * k + 1 < width; ++k) {
    const double f = std::ldexp(std::numbers::pi, static_cast<int>(k)) * u;
    e[2 * k] = std::sin(f);
    e[2 * k + 1] = std::cos(f);
  }
  return e;
}

struct DiffusionConfig {
  std::size_t hidden_width = 128;
  std::size_t embedding_width = 16;
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 32;
  double ema_decay = 0.99;
  double rms_decay = 0.99;
  int K = 5;
  int T = 500;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden_width == 0) throw Error(Errc::invalid_config, "hidden_width must be positive");
    if (!(learning_rate >= 0.0)) throw Error(Errc::invalid_config, "learning_rate must be >= 0");
    if (epochs < 0 || batch_size < 1) throw Error(Errc::invalid_config, "epochs/batch_size");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw Error(Errc::invalid_config, "ema_decay must be in (0, 1)");
    if (K < 1) throw Error(Errc::invalid_config, "K must be at least 1");
    if (T < 1) throw Error(Errc::invalid_config, "T must be at least 1");
  }

  NoiseSchedule schedule() const { return NoiseSchedule::linear(T, beta_start, beta_end); }
};

/// eps_theta(x_t, z, a, t) on standardised rates, with EMA shadow weights.
class DiffusionDenoiser {
 public:
  DiffusionDenoiser() = default;
  DiffusionDenoiser(DiffusionConfig config, std::vector<std::size_t> beta_dims)
      : config_(config), dims_(std::move(beta_dims)), optimizer_(config.learning_rate, config.rms_decay) {
    config_.validate();
    const auto L = static_cast<Eigen::Index>(size());
    mlp_ = Mlp(2 * L + 1 + static_cast<Eigen::Index>(config_.embedding_width),
               static_cast<Eigen::Index>(config_.hidden_width), L);
    z_std_.mean = Eigen::VectorXd::Zero(L);
    z_std_.scale = Eigen::VectorXd::Ones(L);
    beta_std_ = z_std_;
    ema_ = mlp_.params();
  }

  const DiffusionConfig& config() const { return config_; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t size() const { return Beta::element_count(dims_); }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }
  ParamSet<double>& ema() { return ema_; }
  const ParamSet<double>& ema() const { return ema_; }
  Standardizer& latent_standardizer() { return z_std_; }
  const Standardizer& latent_standardizer() const { return z_std_; }
  Standardizer& beta_standardizer() { return beta_std_; }
  const Standardizer& beta_standardizer() const { return beta_std_; }
  RmsProp<double>& optimizer() { return optimizer_; }
  std::vector<double>& loss_curve() { return loss_curve_; }
  const std::vector<double>& loss_curve() const { return loss_curve_; }

  void initialize(std::uint64_t seed) {
    mlp_.initialize(seed);
    for (auto& v : mlp_.params().values) round_to_float(v);
    ema_ = mlp_.params();
  }

  /// Network input columns from noised standardised rates, standardised
  /// latents (L x B), normalised ages and timesteps.
  Mat<double> inputs(const Mat<double>& xt, const Mat<double>& z_std, std::span<const double> ages,
                     std::span<const int> ts) const {
    const auto L = static_cast<Eigen::Index>(size());
    const auto E = static_cast<Eigen::Index>(config_.embedding_width);
    Mat<double> in(2 * L + 1 + E, xt.cols());
    in.topRows(L) = xt;
    in.middleRows(L, L) = z_std;
    for (Eigen::Index c = 0; c < xt.cols(); ++c) {
      in(2 * L, c) = normalize_age(ages[static_cast<std::size_t>(c)]);
      const auto emb = timestep_embedding(ts[static_cast<std::size_t>(c)], config_.T, config_.embedding_width);
      for (Eigen::Index k = 0; k < E; ++k) in(2 * L + 1 + k, c) = emb[static_cast<std::size_t>(k)];
    }
    return in;
  }

  Mat<double> predict(const Mat<double>& in, bool use_ema) const {
    return Mlp::forward_with(use_ema ? ema_ : mlp_.params(), in, nullptr);
  }

  Mat<double> standardize_latent(const LatentGrid& z) const {
    if (z.dims() != dims_) throw Error(Errc::shape_mismatch, "latent shape does not match the denoiser");
    Mat<double> m(static_cast<Eigen::Index>(size()), 1);
    for (std::size_t e = 0; e < size(); ++e) m(static_cast<Eigen::Index>(e), 0) = z[e];
    return z_std_.apply(m);
  }

 private:
  DiffusionConfig config_;
  std::vector<std::size_t> dims_;
  Mlp mlp_;
  ParamSet<double> ema_;
  Standardizer z_std_, beta_std_;
  RmsProp<double> optimizer_{0.0};
  std::vector<double> loss_curve_;
};

/// Mean squared noise-prediction error on a batch of standardised rates (columns)
/// at given timesteps and noises; fills parameter gradients when `grad` is set.
inline double diffusion_batch_loss(const DiffusionDenoiser& den, const NoiseSchedule& s, const Mat<double>& beta_std,
                                   const Mat<double>& z_std, std::span<const double> ages, std::span<const int> ts,
                                   const Mat<double>& eps, ParamSet<double>* grad) {
  Mat<double> xt(beta_std.rows(), beta_std.cols());
  for (Eigen::Index c = 0; c < xt.cols(); ++c) {
    const int t = ts[static_cast<std::size_t>(c)];
    if (t < 1 || t > s.T) throw Error(Errc::invalid_schedule, "timestep outside the schedule");
    xt.col(c) = std::sqrt(s.alpha_bar[t]) * beta_std.col(c) + std::sqrt(1.0 - s.alpha_bar[t]) * eps.col(c);
  }
  const Mat<double> in = den.inputs(xt, z_std, ages, ts);
  Mat<double> hidden;
  const Mat<double> pred = den.mlp().forward(in, &hidden);
  const Mat<double> diff = pred - eps;
  const double n = static_cast<double>(diff.size());
  if (grad) *grad = den.mlp().backward(in, hidden, (2.0 / n) * diff);
  return diff.squaredNorm() / n;
}

/// One stochastic step on a single (rate, latent, age) example: draws t and the
/// noise from `seed`, applies one optimiser step and one EMA update, and returns
/// the pre-update loss.
inline double diffusion_train_step(DiffusionDenoiser& den, const NoiseSchedule& s, const Beta& target_beta,
                                   const LatentGrid& latent, double age, std::uint64_t seed) {
  s.validate();
  if (s.T != den.config().T) throw Error(Errc::invalid_schedule, "schedule does not match the denoiser");
  require_same_shape(target_beta, latent, "rate and latent shapes differ");
  if (target_beta.dims() != den.dims()) throw Error(Errc::shape_mismatch, "rate shape does not match the denoiser");
  Rng rng(seed);
  const int t = rng.uniform_int(1, s.T);
  const auto L = static_cast<Eigen::Index>(den.size());
  Mat<double> b(L, 1), eps(L, 1);
  for (Eigen::Index e = 0; e < L; ++e) b(e, 0) = target_beta[static_cast<std::size_t>(e)];
  fill_normal(eps, rng, 1.0);
  ParamSet<double> grad;
  const int ts[1] = {t};
  const double ages[1] = {age};
  const double loss = diffusion_batch_loss(den, s, den.beta_standardizer().apply(b), den.standardize_latent(latent),
                                           ages, ts, eps, &grad);
  den.optimizer().step(den.mlp().params(), grad);
  ema_update(den.ema(), den.mlp().params(), den.config().ema_decay);
  return loss;
}

/// One rate sample in rate units from the EMA weights.
inline Beta ancestral_sample(const DiffusionDenoiser& den, const NoiseSchedule& s, const LatentGrid& latent,
                             double age, std::uint64_t seed) {
  if (s.T != den.config().T) throw Error(Errc::invalid_schedule, "schedule does not match the denoiser");
  const Mat<double> z = den.standardize_latent(latent);
  const auto L = static_cast<Eigen::Index>(den.size());
  auto eps_fn = [&](std::span<const double> x, int t, std::span<double> out) {
    const int ts[1] = {t};
    const double ages[1] = {age};
    const Mat<double> in = den.inputs(Eigen::Map<const Eigen::VectorXd>(x.data(), L), z, ages, ts);
    const Mat<double> p = den.predict(in, true);
    std::copy(p.data(), p.data() + L, out.begin());
  };
  const auto x = ancestral_sample(s, den.size(), eps_fn, seed);
  const Mat<double> r = den.beta_standardizer().invert(Eigen::Map<const Eigen::VectorXd>(x.data(), L));
  return Beta(den.dims(), std::vector<double>(r.data(), r.data() + L));
}

inline Beta sample_beta_averaged(const DiffusionDenoiser& den, const NoiseSchedule& s, const LatentGrid& latent,
                                 double age, int K, std::uint64_t seed) {
  if (K < 1) throw Error(Errc::invalid_argument, "K must be at least 1");
  Beta mean(den.dims(), 0.0);
  for (int k = 0; k < K; ++k) {
    const Beta b = ancestral_sample(den, s, latent, age, seed + static_cast<std::uint64_t>(k));
    for (std::size_t e = 0; e < mean.size(); ++e) mean[e] += b[e];
  }
  for (auto& v : mean.values()) v /= K;
  return mean;
}

/// Minibatch training. loss_curve holds one mean batch loss per epoch.
inline DiffusionDenoiser train_diffusion_prior(std::span<const TrainingTriplet> triplets,
                                               const DiffusionConfig& config) {
  config.validate();
  const NoiseSchedule s = config.schedule();
  const TripletMatrices data = triplet_matrices(triplets);
  DiffusionDenoiser den(config, triplets.front().beta.dims());
  den.latent_standardizer() = Standardizer::fit(data.latents);
  den.beta_standardizer() = Standardizer::fit(data.betas);
  for (auto* st : {&den.latent_standardizer(), &den.beta_standardizer()}) {
    round_to_float(st->mean);
    round_to_float(st->scale);
  }
  den.initialize(derive_seed(config.seed, {31}));

  const Mat<double> z_std = den.latent_standardizer().apply(data.latents);
  const Mat<double> b_std = den.beta_standardizer().apply(data.betas);
  const std::size_t n = triplets.size();
  Rng rng(derive_seed(config.seed, {32}));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  ParamSet<double> grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double sum = 0.0;
    int batches = 0;
    for_each_batch(n, config.batch_size, order, [&](std::span<const std::size_t> idx) {
      std::vector<int> ts(idx.size());
      std::vector<double> ages(idx.size());
      for (std::size_t c = 0; c < idx.size(); ++c) {
        ts[c] = rng.uniform_int(1, s.T);
        ages[c] = data.ages[idx[c]];
      }
      Mat<double> eps(b_std.rows(), static_cast<Eigen::Index>(idx.size()));
      fill_normal(eps, rng, 1.0);
      const double loss = diffusion_batch_loss(den, s, gather_columns(b_std, idx), gather_columns(z_std, idx), ages,
                                               ts, eps, &grad);
      if (!std::isfinite(loss)) throw Error(Errc::divergence, "diffusion loss became non-finite");
      den.optimizer().step(den.mlp().params(), grad);
      ema_update(den.ema(), den.mlp().params(), config.ema_decay);
      sum += loss;
      ++batches;
    });
    den.loss_curve().push_back(sum / std::max(batches, 1));
  }
  for (auto& v : den.mlp().params().values) round_to_float(v);
  for (auto& v : den.ema().values) round_to_float(v);
  return den;
}

inline void save_diffusion_prior(const DiffusionDenoiser& den, const std::filesystem::path& path) {
  io::NamedTensors t = to_named_tensors(den.mlp().params(), "net.");
  for (auto& e : to_named_tensors(den.ema(), "ema.")) t.push_back(std::move(e));
  for (auto& e : standardizer_tensors(den.latent_standardizer(), "latent_std")) t.push_back(std::move(e));
  for (auto& e : standardizer_tensors(den.beta_standardizer(), "beta_std")) t.push_back(std::move(e));
  io::write_container(path, t);
}

inline DiffusionDenoiser load_diffusion_prior(const std::filesystem::path& path, const DiffusionConfig& config,
                                              std::vector<std::size_t> beta_dims) {
  DiffusionDenoiser den(config, std::move(beta_dims));
  const auto entries = io::read_container(path);
  load_named_tensors(den.mlp().params(), entries, "net.");
  load_named_tensors(den.ema(), entries, "ema.");
  load_standardizer(den.latent_standardizer(), entries, "latent_std");
  load_standardizer(den.beta_standardizer(), entries, "beta_std");
  if (den.latent_standardizer().mean.size() != static_cast<Eigen::Index>(den.size())) {
    throw Error(Errc::shape_mismatch, "checkpoint does not match the rate shape");
  }
  return den;
}

}  // namespace mrextrap
