// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <sys/wait.h>

#include <bit>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "mrextrap/pipeline.hpp"

using namespace mrextrap;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [failed]");
  }
};

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. Rate estimator exactness

Outcome rate_estimator() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> npairs(1, 6);
  std::uniform_real_distribution<double> da(-5.0, 5.0), dz(-3.0, 3.0);
  double worst_gap = -1e300;
  for (int inst = 0; inst < 1000; ++inst) {
    const int n = npairs(gen);
    std::vector<double> a, z;
    for (int k = 0; k < n; ++k) {
      double x = da(gen);
      if (std::abs(x) < 1e-3) x = 1.0;
      a.push_back(x);
      z.push_back(dz(gen));
    }
    const double beta = l1_slope_no_intercept(a, z);
    const double obj = l1_objective(a, z, beta);
    // Brute force: dense grid over the range spanned by the candidate slopes,
    // plus every candidate slope itself.
    double lo = 1e300, hi = -1e300;
    for (int k = 0; k < n; ++k) {
      lo = std::min(lo, z[k] / a[k]);
      hi = std::max(hi, z[k] / a[k]);
    }
    double best = 1e300;
    const int steps = 20000;
    for (int s = 0; s <= steps; ++s) {
      best = std::min(best, l1_objective(a, z, lo - 1.0 + (hi - lo + 2.0) * s / steps));
    }
    for (int k = 0; k < n; ++k) best = std::min(best, l1_objective(a, z, z[k] / a[k]));
    worst_gap = std::max(worst_gap, obj - best);
  }
  o.require(worst_gap <= 1e-8, "max objective - grid min = " + num(worst_gap));

  double worst_beta = 0.0;
  std::normal_distribution<double> nd;
  for (int subject = 0; subject < 200; ++subject) {
    const int scans = 2 + subject % 5;
    LatentGrid z0({2, 2, 2, 2}), rate({2, 2, 2, 2});
    for (std::size_t e = 0; e < z0.size(); ++e) z0[e] = nd(gen), rate[e] = 0.1 * nd(gen);
    std::vector<LatentGrid> zs;
    std::vector<double> ages;
    double age = 60.0 + subject % 20;
    for (int i = 0; i < scans; ++i) {
      age += 0.5 + 0.25 * (i % 3);
      LatentGrid z(z0.dims());
      for (std::size_t e = 0; e < z.size(); ++e) z[e] = z0[e] + rate[e] * (age - 70.0);
      zs.push_back(z);
      ages.push_back(age);
    }
    const Beta b = compute_beta(zs, ages);
    for (std::size_t e = 0; e < b.size(); ++e) worst_beta = std::max(worst_beta, std::abs(b[e] - rate[e]));
  }
  o.require(worst_beta <= 1e-9, "noiseless rate error = " + num(worst_beta));
  const double secs = seconds_since(t0);
  o.require(secs < 5.0, "runtime " + num(secs, 3) + " s");
  return o;
}

// ---------------------------------------------------------------------------
// 2. Posterior update

Outcome posterior() {
  Outcome o;
  const GaussianBelief prior{Beta({3}, std::vector<double>{0.1, -0.2, 0.3}), Beta({3}, std::vector<double>{1.0, 2.0, 0.5})};
  const LatentGrid anchor({3}, std::vector<double>{1.0, 2.0, 3.0});
  const ObservationNoise noise{Beta({3}, 0.1)};
  const auto pass_through = posterior_update(prior, anchor, 70.0, {}, noise);
  o.require(pass_through.mean == prior.mean && pass_through.variance == prior.variance, "zero observations pass through");

  const GaussianBelief unit{Beta({1}, 0.0), Beta({1}, 1.0)};
  const std::vector<LatentObservation> one{{LatentGrid({1}, 1.0), 72.0}};
  const auto hand = posterior_update(unit, LatentGrid({1}, 0.0), 70.0, one, ObservationNoise{Beta({1}, 1.0)});
  const double err = std::max(std::abs(hand.mean[0] - 0.4), std::abs(hand.variance[0] - 0.2));
  o.require(err <= 1e-12, "hand case error " + num(err));

  std::vector<LatentObservation> obs;
  const double ages[] = {71.0, 72.5, 74.0, 77.0};
  const double dzs[] = {0.31, 0.74, 1.22, 2.1};
  for (int i = 0; i < 4; ++i) obs.push_back({LatentGrid({1}, dzs[i]), ages[i]});
  double num_wls = 0.0, den_wls = 0.0;
  for (int i = 0; i < 4; ++i) {
    num_wls += (ages[i] - 70.0) * dzs[i];
    den_wls += (ages[i] - 70.0) * (ages[i] - 70.0);
  }
  const auto tight = posterior_update(unit, LatentGrid({1}, 0.0), 70.0, obs, ObservationNoise{Beta({1}, 1e-12)});
  const double wls_err = std::abs(tight.mean[0] - num_wls / den_wls);
  o.require(wls_err <= 1e-6, "tight-noise vs WLS error " + num(wls_err));
  return o;
}

// ---------------------------------------------------------------------------
// 3. Diffusion sampler with the analytic optimal denoiser

Outcome sampler() {
  Outcome o;
  const auto t0 = Clock::now();
  const double mu = 3.0, var = 0.25;
  const auto s = NoiseSchedule::linear();
  // E[eps | x_t] for x0 ~ N(mu, var).
  auto eps_fn = [&](std::span<const double> x, int t, std::span<double> out) {
    const double ab = s.alpha_bar[t];
    const double k = std::sqrt(1.0 - ab) / (ab * var + 1.0 - ab);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = k * (x[i] - std::sqrt(ab) * mu);
  };
  const auto x = ancestral_sample(s, 10000, eps_fn, 2024);
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double v2 = 0.0;
  for (double v : x) v2 += (v - m) * (v - m);
  v2 /= static_cast<double>(x.size() - 1);
  o.require(std::abs(m - mu) <= 0.05, "mean " + num(m, 5));
  o.require(std::abs(v2 - var) <= 0.2 * var, "variance " + num(v2, 5));
  const double secs = seconds_since(t0);
  o.require(secs < 120.0, "runtime " + num(secs, 3) + " s");
  return o;
}

// ---------------------------------------------------------------------------
// 4. Gradient checks

double max_relative_error(ParamSet<double>& params, const ParamSet<double>& grad, const std::function<double()>& loss,
                          std::uint32_t seed, int per_tensor = 8) {
  const double h = 1e-4;
  std::mt19937 pick(seed);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.names.size(); ++p) {
    auto& m = params.values[p];
    for (int trial = 0; trial < per_tensor; ++trial) {
      const auto idx = static_cast<Eigen::Index>(pick() % static_cast<std::uint32_t>(m.size()));
      const double keep = m.data()[idx];
      m.data()[idx] = keep + h;
      const double up = loss();
      m.data()[idx] = keep - h;
      const double down = loss();
      m.data()[idx] = keep;
      const double fd = (up - down) / (2 * h);
      const double an = grad.values[p].data()[idx];
      worst = std::max(worst, std::abs(an - fd) / std::max(std::abs(fd), 1e-7));
    }
  }
  return worst;
}

void randomize(ParamSet<double>& p, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& v : p.values) fill_normal(v, rng, scale);
}

Outcome gradients() {
  Outcome o;
  Rng rng(5);
  for (auto arch : {AEArchitecture::affine, AEArchitecture::hidden}) {
    AEConfig c;
    c.architecture = arch;
    c.hidden_width = 6;
    c.downsample = 4;
    c.latent_channels = 2;
    c.ssim_window = 3;
    c.gamma_kl = 0.05;
    c.init_logvar = -1.0;
    Autoencoder<double> model(c, {8, 8, 8});
    model.initialize_random(3);
    auto& lvb = model.params()["enc_logvar.bias"];
    for (Eigen::Index i = 0; i < lvb.rows(); ++i) lvb(i, 0) = -1.0 + 0.05 * static_cast<double>(i);
    model.params()["enc_logvar.weight"].setConstant(0.002);
    Mat<double> x(512, 2), noise(static_cast<Eigen::Index>(model.latent_size()), 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
    fill_normal(noise, rng, 1.0);
    ParamSet<double> grad;
    model.loss_and_gradient(x, noise, &grad);
    const double err = max_relative_error(model.params(), grad,
                                          [&] { return model.loss_and_gradient(x, noise, nullptr).total; }, 9);
    o.require(err <= 1e-3, std::string("autoencoder (") + arch_name(arch) + ") " + num(err, 3));
  }
  {
    GaussianPriorConfig cfg;
    cfg.hidden_width = 8;
    cfg.nll_weight = 0.1;
    GaussianPriorNet net(cfg, {3});
    net.initialize(4);
    randomize(net.mlp().params(), 5, 0.5);
    Mat<double> cond(4, 6), targets(3, 6);
    fill_normal(cond, rng, 1.0);
    fill_normal(targets, rng, 1.0);
    ParamSet<double> grad;
    net.loss(cond, targets, &grad);
    const double err =
        max_relative_error(net.mlp().params(), grad, [&] { return net.loss(cond, targets, nullptr); }, 10);
    o.require(err <= 1e-3, "gaussian prior " + num(err, 3));
  }
  {
    DiffusionConfig cfg;
    cfg.hidden_width = 6;
    cfg.embedding_width = 4;
    cfg.T = 50;
    DiffusionDenoiser den(cfg, {3});
    den.initialize(1);
    randomize(den.mlp().params(), 2, 0.5);
    const auto s = cfg.schedule();
    Mat<double> b(3, 4), z(3, 4), eps(3, 4);
    fill_normal(b, rng, 1.0);
    fill_normal(z, rng, 1.0);
    fill_normal(eps, rng, 1.0);
    const std::vector<double> ages{61.0, 70.0, 78.5, 88.0};
    const std::vector<int> ts{1, 10, 33, 50};
    ParamSet<double> grad;
    diffusion_batch_loss(den, s, b, z, ages, ts, eps, &grad);
    const double err = max_relative_error(
        den.mlp().params(), grad, [&] { return diffusion_batch_loss(den, s, b, z, ages, ts, eps, nullptr); }, 11);
    o.require(err <= 1e-3, "diffusion " + num(err, 3));
  }
  return o;
}

// ---------------------------------------------------------------------------
// Shared cohorts

Cohort make_cohort(CohortOptions opt, double noise_sigma) {
  PhantomSpec spec = default_phantom_spec();
  spec.noise_sigma = noise_sigma;
  spec.seed = opt.seed;
  return generate_cohort(spec, opt);
}

std::map<std::string, std::vector<LatentGrid>> encode_all(const Autoencoder<float>& model, const Cohort& cohort) {
  std::map<std::string, std::vector<LatentGrid>> out;
  for (const auto& s : cohort.subjects) {
    for (const auto& scan : s.scans) out[s.subject_id].push_back(model.encode(render_scan(cohort, s, scan)).mean);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 5. Autoencoder quality

Outcome autoencoder_quality() {
  Outcome o;
  CohortOptions opt;
  opt.seed = 501;
  const Cohort cohort = make_cohort(opt, 0.01);
  const auto t0 = Clock::now();
  const auto model = train_autoencoder<float>(cohort, AEConfig{});
  const double secs = seconds_since(t0);
  double ssim_sum = 0.0, dice_sum = 0.0;
  std::size_t n = 0;
  for (const auto* s : cohort.in_split(Split::test)) {
    for (const auto& scan : s->scans) {
      const VolumeGrid x = render_scan(cohort, *s, scan);
      const VolumeGrid y = model.reconstruct(x);
      ssim_sum += ssim3d(x, y);
      dice_sum += generalized_dice(segment_by_intensity(x, cohort.spec), segment_by_intensity(y, cohort.spec));
      ++n;
    }
  }
  o.require(ssim_sum / n >= 0.90, "held-out SSIM " + num(ssim_sum / n));
  o.require(dice_sum / n >= 0.90, "held-out Dice " + num(dice_sum / n));
  o.require(secs <= 600.0, "training " + num(secs, 3) + " s over " + std::to_string(n) + " held-out scans");
  return o;
}

// ---------------------------------------------------------------------------
// Noiseless, exactly linear cohort shared by criteria 6 and 7

struct LinearCohort {
  Cohort cohort;
  Autoencoder<float> model;
  std::map<std::string, std::vector<LatentGrid>> latents;
};

LinearCohort linear_cohort() {
  CohortOptions opt;
  opt.seed = 601;
  opt.n_subjects = 100;
  opt.scans_per_subject = {9, 9};
  opt.age_spacing = {1.0, 1.0};
  opt.baseline_age = {60.0, 80.0};
  opt.split_fractions = {0.7, 0.0, 0.3};
  Cohort cohort = make_cohort(opt, 0.0);
  auto model = train_autoencoder<float>(cohort, AEConfig{});
  auto latents = encode_all(model, cohort);
  return {std::move(cohort), std::move(model), std::move(latents)};
}

// 6. Latent linearity diagnostics

Outcome latent_linearity(const LinearCohort& lc) {
  Outcome o;
  double worst_pc = 1.0;
  for (const auto* s : lc.cohort.in_split(Split::test)) {
    worst_pc = std::min(worst_pc, latent_collinearity(lc.latents.at(s->subject_id)));
  }
  o.require(worst_pc >= 0.95, "min first-PC explained variance " + num(worst_pc, 5));

  // Interpolate between the least and most atrophied held-out scans.
  const Subject *young = nullptr, *old = nullptr;
  double lo = 1e300, hi = -1e300;
  for (const auto* s : lc.cohort.in_split(Split::test)) {
    const double a = s->scans.front().age * s->true_rates[0], b = s->scans.back().age * s->true_rates[0];
    if (s->diagnosis == Diagnosis::healthy && a < lo) lo = a, young = s;
    if (s->diagnosis == Diagnosis::dementia && b > hi) hi = b, old = s;
  }
  if (!young || !old) {
    o.require(false, "no healthy/dementia pair in the held-out split");
    return o;
  }
  const auto rep = interpolation_linearity(lc.model, lc.latents.at(old->subject_id).back(),
                                           lc.latents.at(young->subject_id).front(), lc.cohort.spec);
  for (const auto& [id, r2] : rep.r2) {
    o.require(r2 >= 0.98, lc.cohort.spec.region(id).name + " interpolation R2 " + num(r2, 5));
  }
  return o;
}

// 7. Multi-scan conditioning

Outcome multiscan(const LinearCohort& lc) {
  Outcome o;
  std::vector<TrainingTriplet> triplets;
  std::vector<SubjectTrajectory> train;
  for (const auto* s : lc.cohort.in_split(Split::train)) {
    train.push_back({s->subject_id, lc.latents.at(s->subject_id), s->ages()});
  }
  triplets = make_triplets(train);
  const auto prior = build_global_prior(triplets);
  const auto noise = estimate_obs_noise(triplets, train);
  const auto test = lc.cohort.in_split(Split::test);
  const auto rows = multiscan_curve(lc.model, lc.cohort, test, prior, noise, MultiscanProtocol{},
                                    [&](const Subject& s, const ScanRecord& r) { return render_scan(lc.cohort, s, r); });
  std::map<int, double> curve;
  for (const auto& p : summarize_curve(rows)) {
    if (p.source == BeliefSource::global_prior || p.source == BeliefSource::posterior) curve[p.n_conditioning_scans] = p.mean_mae;
  }
  std::string values;
  bool monotone = curve.size() == 4;
  for (int n = 0; n <= 3; ++n) {
    values += (n ? ", " : "") + num(curve[n], 5);
    if (n > 0 && curve[n] > curve[n - 1]) monotone = false;
  }
  o.require(monotone, "mean MAE %TBV n=0..3: " + values);

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_subject;
  for (const auto& r : rows) {
    if (r.source == BeliefSource::global_prior) per_subject[r.subject_id].first.push_back(r.mae_mean);
    if (r.source == BeliefSource::regression) per_subject[r.subject_id].second.push_back(r.mae_mean);
  }
  std::size_t wins = 0;
  for (const auto& [id, v] : per_subject) wins += mean_of(v.second) < mean_of(v.first);
  const double frac = static_cast<double>(wins) / static_cast<double>(per_subject.size());
  o.require(frac >= 0.8, "regression beats global prior for " + std::to_string(wins) + "/" +
                             std::to_string(per_subject.size()) + " subjects");
  return o;
}

// ---------------------------------------------------------------------------
// 8. Rate magnitude by diagnosis

Outcome beta_interpretability() {
  Outcome o;
  CohortOptions opt;
  opt.seed = 801;
  opt.n_subjects = 150;
  const Cohort cohort = make_cohort(opt, 0.01);
  const auto model = train_autoencoder<float>(cohort, AEConfig{});
  const auto latents = encode_all(model, cohort);
  std::vector<SubjectBeta> betas;
  for (const auto& s : cohort.subjects) {
    if (s.scans.size() < 2) continue;
    betas.push_back({compute_beta(latents.at(s.subject_id), s.ages()), s.diagnosis, s.scans.front().age});
  }
  const auto cells = beta_norm_analysis(betas);
  std::map<std::optional<double>, std::map<Diagnosis, BetaNormCell>> by_bin;
  for (const auto& c : cells) by_bin[c.bin_start][c.diagnosis] = c;
  std::size_t checked_bins = 0;
  for (const auto& [bin, groups] : by_bin) {
    // A bin is populated when every group has at least two subjects.
    bool populated = groups.size() == 3;
    for (const auto& [dx, c] : groups) populated = populated && c.count >= 2;
    const std::string label = bin ? "bin " + num(*bin) : std::string("all ages");
    if (!populated) {
      if (!bin) o.require(false, "all-ages row lacks a group");
      continue;
    }
    if (bin) ++checked_bins;
    const auto& h = groups.at(Diagnosis::healthy);
    const auto& m = groups.at(Diagnosis::mci);
    const auto& d = groups.at(Diagnosis::dementia);
    const double z_dm = (d.mean - m.mean) / std::hypot(d.standard_error, m.standard_error);
    const double z_mh = (m.mean - h.mean) / std::hypot(m.standard_error, h.standard_error);
    o.require(z_dm > 2.0 && z_mh > 2.0, label + " means " + num(h.mean) + "<" + num(m.mean) + "<" + num(d.mean) +
                                            " (separations " + num(z_mh, 3) + ", " + num(z_dm, 3) + " SE)");
  }
  o.require(checked_bins > 0, std::to_string(checked_bins) + " populated bins");
  return o;
}

// ---------------------------------------------------------------------------
// 9. Reproducibility and formats

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MREXTRAP_CLI_PATH) + " " + args + " 2>/dev/null";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

Outcome reproducibility() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / ("mrextrap_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const std::string cfg = std::string(MREXTRAP_SOURCE_DIR) + "/configs/smoke.json";
  const auto t0 = Clock::now();
  const int first = run_cli("--config " + cfg + " --out " + (dir / "a").string() + " all");
  const double secs = seconds_since(t0);
  const int second = run_cli("--config " + cfg + " --out " + (dir / "b").string() + " all");
  o.require(first == 0 && second == 0, "smoke runs exit " + std::to_string(first) + ", " + std::to_string(second));
  o.require(secs < 300.0, "smoke pipeline " + num(secs, 3) + " s");
  std::size_t files = 0, identical = 0;
  if (fs::exists(dir / "a" / "metrics")) {
    for (const auto& e : fs::directory_iterator(dir / "a" / "metrics")) {
      ++files;
      const fs::path other = dir / "b" / "metrics" / e.path().filename();
      identical += fs::exists(other) && read_file(e.path()) == read_file(other);
    }
  }
  o.require(files > 0 && identical == files,
            std::to_string(identical) + "/" + std::to_string(files) + " metrics CSVs byte-identical");

  VolumeGrid g({4, 4, 4, 4});
  std::mt19937 gen(9);
  std::uniform_real_distribution<float> u(-1e3f, 1e3f);
  for (auto& v : g.values()) v = u(gen);
  g[0] = std::numeric_limits<float>::denorm_min();
  g[1] = -0.0f;
  io::write_grid(dir / "roundtrip.mrxt", g);
  const auto back = io::read_grid<VolumeGrid>(dir / "roundtrip.mrxt");
  bool bit_exact = back.dims() == g.dims();
  for (std::size_t i = 0; bit_exact && i < g.size(); ++i) {
    bit_exact = std::bit_cast<std::uint32_t>(back[i]) == std::bit_cast<std::uint32_t>(g[i]);
  }
  o.require(bit_exact, "tensor round trip bit-exact");
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main() {
  bool all = true;
  auto report = [&](int id, const std::function<Outcome()>& f) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    all = all && o.pass;
    std::printf("%s criterion %d: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, o.detail.str().c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };
  report(1, rate_estimator);
  report(2, posterior);
  report(3, sampler);
  report(4, gradients);
  report(5, autoencoder_quality);
  std::optional<LinearCohort> lc;
  const auto t0 = Clock::now();
  try {
    lc = linear_cohort();
  } catch (const std::exception& e) {
    std::printf("linear cohort setup failed: %s\n", e.what());
  }
  std::printf("(noiseless cohort and autoencoder prepared in %.1f s)\n", seconds_since(t0));
  report(6, [&] { return lc ? latent_linearity(*lc) : Outcome{false, {}}; });
  report(7, [&] { return lc ? multiscan(*lc) : Outcome{false, {}}; });
  report(8, beta_interpretability);
  report(9, reproducibility);
  return all ? 0 : 1;
}
