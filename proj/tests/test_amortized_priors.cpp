#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "mrextrap/diffusion.hpp"
#include "mrextrap/gaussian_prior.hpp"

using namespace mrextrap;
namespace fs = std::filesystem;

namespace {

std::vector<TrainingTriplet> linear_rate_triplets(std::size_t n, std::size_t L, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> age(60.0, 85.0);
  std::vector<TrainingTriplet> out;
  for (std::size_t i = 0; i < n; ++i) {
    LatentGrid z({L});
    for (auto& v : z.values()) v = nd(gen);
    const double a = age(gen);
    Beta b({L});
    for (std::size_t e = 0; e < L; ++e) {
      b[e] = 0.2 + 0.3 * z[e] - 0.1 * z[(e + 1) % L] + 0.05 * normalize_age(a) + 0.02 * nd(gen);
    }
    out.push_back({z, a, b, "s" + std::to_string(i)});
  }
  return out;
}

void randomize(ParamSet<double>& p, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& v : p.values) fill_normal(v, rng, scale);
}

template <typename LossFn>
void expect_gradients_match(ParamSet<double>& params, const ParamSet<double>& grad, LossFn&& loss) {
  const double h = 1e-4;
  std::mt19937 pick(17);
  for (std::size_t p = 0; p < params.names.size(); ++p) {
    auto& m = params.values[p];
    for (int trial = 0; trial < 6; ++trial) {
      const auto idx = static_cast<Eigen::Index>(pick() % static_cast<std::uint32_t>(m.size()));
      const double keep = m.data()[idx];
      m.data()[idx] = keep + h;
      const double up = loss();
      m.data()[idx] = keep - h;
      const double down = loss();
      m.data()[idx] = keep;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grad.values[p].data()[idx], fd, 1e-3 * std::max(std::abs(fd), 1e-7))
          << params.names[p] << "[" << idx << "]";
    }
  }
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mrextrap_prior_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Closed-form noise predictor for scalar data N(mu0, s0sq).
auto gaussian_oracle(const NoiseSchedule& s, double mu0, double s0sq) {
  return [&s, mu0, s0sq](std::span<const double> x, int t, std::span<double> out) {
    const double ab = s.alpha_bar[t];
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = std::sqrt(1.0 - ab) * (x[i] - std::sqrt(ab) * mu0) / (ab * s0sq + 1.0 - ab);
    }
  };
}

}  // namespace

TEST(GaussianPriorLoss, Examples) {
  const std::vector<double> beta{0.3, -1.2, 2.0}, zero(3, 0.0), one(3, 1.0);
  EXPECT_EQ(gaussian_prior_loss(beta, zero, beta, 1e-3), 0.0);
  EXPECT_NEAR(gaussian_prior_loss(beta, one, beta, 1e-3), 1e-3, 1e-18);
  const std::vector<double> inf{std::numeric_limits<double>::infinity(), 0.0, 0.0};
  try {
    gaussian_prior_loss(inf, zero, beta, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_finite);
  }
  EXPECT_THROW(gaussian_prior_loss(Beta({2}), Beta({3}), Beta({3}), 1e-3), Error);
}

TEST(GaussianPriorLoss, MatchesScalarRecomputation) {
  std::mt19937 gen(1);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    Beta mu({7}), lv({7}), b({7});
    for (std::size_t e = 0; e < 7; ++e) mu[e] = nd(gen), lv[e] = nd(gen), b[e] = nd(gen);
    double sum = 0.0;
    for (std::size_t e = 0; e < 7; ++e) {
      const double var = std::exp(lv[e]);
      sum += std::fabs(mu[e] - b[e]) + 0.01 * (std::pow(b[e] - mu[e], 2) / var + std::log(var));
    }
    EXPECT_NEAR(gaussian_prior_loss(mu, lv, b, 0.01), sum / 7.0, 1e-12);
  }
}

TEST(GaussianPriorNet, GradientsMatchFiniteDifferences) {
  GaussianPriorConfig cfg;
  cfg.hidden_width = 5;
  cfg.nll_weight = 0.1;
  GaussianPriorNet net(cfg, {3});
  net.initialize(4);
  randomize(net.mlp().params(), 5, 0.5);
  net.beta_standardizer().mean = Eigen::VectorXd::Constant(3, 0.1);
  net.beta_standardizer().scale = Eigen::VectorXd::Constant(3, 0.7);
  Mat<double> cond(4, 6), targets(3, 6);
  Rng rng(6);
  fill_normal(cond, rng, 1.0);
  fill_normal(targets, rng, 1.0);
  ParamSet<double> grad;
  net.loss(cond, targets, &grad);
  expect_gradients_match(net.mlp().params(), grad, [&] { return net.loss(cond, targets, nullptr); });
}

TEST(GaussianPriorNet, ConstantTargetIsLearned) {
  std::vector<TrainingTriplet> t = linear_rate_triplets(40, 4, 2);
  for (auto& x : t) x.beta = Beta({4}, 0.37);
  GaussianPriorConfig cfg;
  cfg.epochs = 20;
  const auto net = train_gaussian_prior(t, cfg);
  for (int i = 0; i < 5; ++i) {
    const auto b = predict_gaussian_prior(net, t[static_cast<std::size_t>(i)].latent, t[static_cast<std::size_t>(i)].age);
    for (double v : b.mean.values()) EXPECT_NEAR(v, 0.37, 1e-2);
  }
}

TEST(GaussianPriorNet, ZeroLearningRateLeavesParametersUnchanged) {
  const auto t = linear_rate_triplets(30, 4, 3);
  GaussianPriorConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  GaussianPriorConfig none = cfg;
  none.epochs = 0;
  EXPECT_EQ(train_gaussian_prior(t, cfg).mlp().params(), train_gaussian_prior(t, none).mlp().params());
}

TEST(GaussianPriorNet, BeatsGlobalPriorWhenRatesDependOnLatent) {
  const auto train = linear_rate_triplets(300, 6, 4);
  const auto held = linear_rate_triplets(100, 6, 5);
  GaussianPriorConfig cfg;
  cfg.epochs = 60;
  cfg.seed = 9;
  const auto net = train_gaussian_prior(train, cfg);
  ASSERT_GE(net.loss_curve().size(), 2u);
  EXPECT_LT(net.loss_curve().back(), net.loss_curve().front());
  const auto global = build_global_prior(train);
  double err_net = 0.0, err_global = 0.0;
  for (const auto& t : held) {
    const auto b = predict_gaussian_prior(net, t.latent, t.age);
    for (std::size_t e = 0; e < 6; ++e) {
      err_net += std::abs(b.mean[e] - t.beta[e]);
      err_global += std::abs(global.mean[e] - t.beta[e]);
    }
  }
  EXPECT_LE(err_net, 1.1 * err_global);
  EXPECT_LT(err_net, 0.5 * err_global);
}

TEST(GaussianPriorNet, PredictionIsDeterministicFlooredAndPassesThroughPosterior) {
  const auto t = linear_rate_triplets(50, 4, 6);
  GaussianPriorConfig cfg;
  cfg.epochs = 5;
  auto net = train_gaussian_prior(t, cfg);
  const auto a = predict_gaussian_prior(net, t[0].latent, t[0].age);
  const auto b = predict_gaussian_prior(net, t[0].latent, t[0].age);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.variance, b.variance);
  const auto post = posterior_update(a, t[0].latent, t[0].age, {}, {Beta({4}, 1.0)});
  EXPECT_EQ(post.mean, a.mean);
  EXPECT_EQ(post.variance, a.variance);

  std::mt19937 gen(7);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    LatentGrid z({4});
    for (auto& v : z.values()) v = nd(gen);
    const auto g = predict_gaussian_prior(net, z, 55.0 + 0.4 * i);
    for (double v : g.variance.values()) EXPECT_GE(v, kVarianceFloor);
  }
  // Driving the raw variance output to -inf still respects the floor.
  net.mlp().params()["b2"].bottomRows(4).setConstant(-800.0);
  const auto driven = predict_gaussian_prior(net, t[0].latent, 70.0);
  for (double v : driven.variance.values()) EXPECT_GE(v, kVarianceFloor);
  EXPECT_THROW(predict_gaussian_prior(net, LatentGrid({5}), 70.0), Error);
}

TEST(GaussianPriorNet, CheckpointRoundTrip) {
  const auto t = linear_rate_triplets(40, 4, 8);
  GaussianPriorConfig cfg;
  cfg.epochs = 4;
  const auto net = train_gaussian_prior(t, cfg);
  const auto dir = temp_dir("gauss");
  save_gaussian_prior(net, dir / "g.mrxt");
  const auto back = load_gaussian_prior(dir / "g.mrxt", cfg, {4});
  EXPECT_EQ(back.mlp().params(), net.mlp().params());
  const auto a = predict_gaussian_prior(net, t[3].latent, t[3].age);
  const auto b = predict_gaussian_prior(back, t[3].latent, t[3].age);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.variance, b.variance);
  EXPECT_THROW(load_gaussian_prior(dir / "g.mrxt", cfg, {5}), Error);
}

TEST(NoiseSchedule, DefaultScheduleInvariants) {
  const auto s = NoiseSchedule::linear();
  ASSERT_EQ(s.T, 500);
  EXPECT_EQ(s.alpha_bar[0], 1.0);
  EXPECT_DOUBLE_EQ(s.beta[1], 1e-4);
  EXPECT_DOUBLE_EQ(s.beta[500], 0.02);
  double prod = 1.0;
  for (int t = 1; t <= 500; ++t) {
    EXPECT_GT(s.beta[t], 0.0);
    EXPECT_LT(s.beta[t], 1.0);
    if (t > 1) EXPECT_GT(s.beta[t], s.beta[t - 1]);
    EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
    prod *= 1.0 - s.beta[t];
    EXPECT_NEAR(s.alpha_bar[t], prod, 1e-15);
  }
  EXPECT_LT(s.alpha_bar[500], 0.01);
  auto broken = s;
  broken.alpha_bar[10] = broken.alpha_bar[9];
  EXPECT_THROW(broken.validate(), Error);
  EXPECT_THROW(NoiseSchedule::linear(0), Error);
}

TEST(NoiseSchedule, ForwardThenOracleDenoiseRecoversData) {
  const auto s = NoiseSchedule::linear();
  std::mt19937 gen(3);
  std::normal_distribution<double> nd;
  std::vector<double> x0(16), eps(16);
  for (std::size_t i = 0; i < 16; ++i) x0[i] = nd(gen), eps[i] = nd(gen);
  for (int t : {1, 50, 250, 500}) {
    const auto xt = forward_noise(s, x0, t, eps);
    const auto back = predict_x0(s, xt, t, eps);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(back[i], x0[i], 1e-6) << t;
  }
  // At t = T the noised input is essentially the noise.
  const auto xT = forward_noise(s, x0, s.T, eps);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(xT[i], eps[i], 0.1 * std::abs(x0[i]) + std::abs(eps[i]) * 1e-4);
  EXPECT_EQ(mean_squared(eps, eps), 0.0);
}

TEST(AncestralSample, ZeroDenoiserTelescopes) {
  const auto s = NoiseSchedule::linear();
  auto zero = [](std::span<const double>, int, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  const auto x = ancestral_sample(s, 6, zero, 42, false);
  Rng rng(42);
  for (std::size_t i = 0; i < 6; ++i) {
    const double start = rng.normal();
    EXPECT_NEAR(x[i], start / std::sqrt(s.alpha_bar[s.T]), 1e-9 * std::abs(start / std::sqrt(s.alpha_bar[s.T])));
  }
}

TEST(AncestralSample, AnalyticDenoiserRecoversGaussianData) {
  const auto s = NoiseSchedule::linear();
  const double mu0 = 3.0, s0sq = 0.25;
  const auto eps = gaussian_oracle(s, mu0, s0sq);
  const int n = 10000;
  const auto x = ancestral_sample(s, n, eps, 5);  // independent elements, one chain each
  double m = 0.0, v = 0.0;
  for (double xi : x) m += xi / n;
  for (double xi : x) v += (xi - m) * (xi - m) / (n - 1);
  EXPECT_NEAR(m, mu0, 0.05);
  EXPECT_NEAR(v, s0sq, 0.2 * s0sq);
}

TEST(AncestralSample, SeedsReproduceAndDiffer) {
  const auto s = NoiseSchedule::linear(50);
  const auto eps = gaussian_oracle(s, 0.5, 1.0);
  EXPECT_EQ(ancestral_sample(s, 4, eps, 11), ancestral_sample(s, 4, eps, 11));
  std::set<std::vector<double>> seen;
  for (std::uint64_t seed = 0; seed < 100; ++seed) seen.insert(ancestral_sample(s, 4, eps, seed));
  EXPECT_EQ(seen.size(), 100u);
}

TEST(SampleAveraged, KOneAndPermutationInvariance) {
  const auto s = NoiseSchedule::linear(60);
  const auto eps = gaussian_oracle(s, 1.0, 0.5);
  EXPECT_EQ(sample_averaged(s, 3, eps, 1, 9), ancestral_sample(s, 3, eps, 9));
  std::vector<double> manual(3, 0.0);
  for (std::uint64_t k : {13u, 11u, 9u, 12u, 10u}) {
    const auto x = ancestral_sample(s, 3, eps, k);
    for (std::size_t i = 0; i < 3; ++i) manual[i] += x[i] / 5.0;
  }
  const auto avg = sample_averaged(s, 3, eps, 5, 9);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(avg[i], manual[i], 1e-12);
  EXPECT_THROW(sample_averaged(s, 3, eps, 0, 9), Error);
}

TEST(SampleAveraged, AveragingFiveChainsDividesVarianceByFive) {
  const auto s = NoiseSchedule::linear();
  const double s0sq = 0.25;
  const auto eps = gaussian_oracle(s, 3.0, s0sq);
  const int trials = 1000;
  // Each element of a chain is independent, so one call yields `trials` estimates.
  const auto single = ancestral_sample(s, trials, eps, 100);
  const auto avg = sample_averaged(s, trials, eps, 5, 200);
  auto var = [](const std::vector<double>& v) {
    double m = 0.0, q = 0.0;
    for (double x : v) m += x / static_cast<double>(v.size());
    for (double x : v) q += (x - m) * (x - m) / static_cast<double>(v.size() - 1);
    return q;
  };
  EXPECT_NEAR(var(avg) / var(single), 0.2, 0.3 * 0.2);
}

TEST(DiffusionDenoiser, GradientsMatchFiniteDifferences) {
  DiffusionConfig cfg;
  cfg.hidden_width = 6;
  cfg.embedding_width = 4;
  cfg.T = 50;
  DiffusionDenoiser den(cfg, {3});
  den.initialize(1);
  randomize(den.mlp().params(), 2, 0.5);
  const auto s = cfg.schedule();
  Mat<double> b(3, 4), z(3, 4), eps(3, 4);
  Rng rng(3);
  fill_normal(b, rng, 1.0);
  fill_normal(z, rng, 1.0);
  fill_normal(eps, rng, 1.0);
  const std::vector<double> ages{61.0, 70.0, 78.5, 88.0};
  const std::vector<int> ts{1, 10, 33, 50};
  ParamSet<double> grad;
  diffusion_batch_loss(den, s, b, z, ages, ts, eps, &grad);
  expect_gradients_match(den.mlp().params(), grad,
                         [&] { return diffusion_batch_loss(den, s, b, z, ages, ts, eps, nullptr); });
}

TEST(DiffusionDenoiser, TrainStepLossTrendsDown) {
  DiffusionConfig cfg;
  cfg.hidden_width = 32;
  DiffusionDenoiser den(cfg, {4});
  den.initialize(5);
  const auto s = cfg.schedule();
  const auto data = linear_rate_triplets(8, 4, 10);
  std::vector<double> losses;
  for (int step = 0; step < 500; ++step) {
    const auto& t = data[static_cast<std::size_t>(step) % data.size()];
    losses.push_back(diffusion_train_step(den, s, t.beta, t.latent, t.age, 1000 + step));
  }
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 100; ++i) first += losses[i] / 100, last += losses[400 + i] / 100;
  EXPECT_LT(last, first);
  EXPECT_THROW(diffusion_train_step(den, NoiseSchedule::linear(20), data[0].beta, data[0].latent, 70.0, 1), Error);
}

TEST(DiffusionDenoiser, EmaConvergesWhenParametersStopMoving) {
  DiffusionConfig cfg;
  cfg.hidden_width = 8;
  cfg.learning_rate = 0.0;
  DiffusionDenoiser den(cfg, {2});
  den.initialize(6);
  randomize(den.ema(), 7, 1.0);
  const auto s = cfg.schedule();
  const auto data = linear_rate_triplets(1, 2, 11);
  const ParamSet<double> current = den.mlp().params();
  for (int step = 0; step < 2000; ++step) diffusion_train_step(den, s, data[0].beta, data[0].latent, 70.0, step);
  EXPECT_EQ(den.mlp().params(), current);
  for (std::size_t i = 0; i < current.values.size(); ++i) {
    EXPECT_LT((den.ema().values[i] - current.values[i]).cwiseAbs().maxCoeff(), 1e-7);
  }
  // One update moves the shadow by exactly 1% of the gap.
  ParamSet<double> shadow = current.zeros_like();
  ema_update(shadow, current, 0.99);
  for (std::size_t i = 0; i < current.values.size(); ++i) {
    EXPECT_LT((shadow.values[i] - 0.01 * current.values[i]).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(DiffusionPrior, TrainedSamplerIsReproducibleAndCheckpointsReload) {
  const auto data = linear_rate_triplets(60, 4, 12);
  DiffusionConfig cfg;
  cfg.hidden_width = 16;
  cfg.epochs = 5;
  cfg.T = 100;
  const auto den = train_diffusion_prior(data, cfg);
  EXPECT_EQ(den.loss_curve().size(), 5u);
  const auto s = cfg.schedule();
  const auto a = ancestral_sample(den, s, data[0].latent, data[0].age, 3);
  EXPECT_EQ(a, ancestral_sample(den, s, data[0].latent, data[0].age, 3));
  EXPECT_NE(a, ancestral_sample(den, s, data[0].latent, data[0].age, 4));
  EXPECT_EQ(sample_beta_averaged(den, s, data[0].latent, data[0].age, 1, 3), a);
  for (double v : a.values()) EXPECT_TRUE(std::isfinite(v));

  const auto dir = temp_dir("diff");
  save_diffusion_prior(den, dir / "d.mrxt");
  const auto back = load_diffusion_prior(dir / "d.mrxt", cfg, {4});
  EXPECT_EQ(back.ema(), den.ema());
  EXPECT_EQ(back.mlp().params(), den.mlp().params());
  EXPECT_EQ(ancestral_sample(back, s, data[0].latent, data[0].age, 3), a);
  EXPECT_THROW(ancestral_sample(den, NoiseSchedule::linear(50), data[0].latent, 70.0, 1), Error);
}
