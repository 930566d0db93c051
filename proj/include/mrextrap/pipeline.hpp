#pragma once

// Stage orchestration for the command-line tool. Every stage reads its inputs
// from the output directory, writes artifacts with JSON sidecars and leaves a
// run record under runs/.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mrextrap/autoencoder.hpp"
#include "mrextrap/config.hpp"
#include "mrextrap/core.hpp"
#include "mrextrap/diffusion.hpp"
#include "mrextrap/evaluation.hpp"
#include "mrextrap/gaussian_prior.hpp"
#include "mrextrap/phantom.hpp"
#include "mrextrap/predict.hpp"
#include "mrextrap/progression.hpp"
#include "mrextrap/tensor_io.hpp"

namespace mrextrap {

namespace fs = std::filesystem;

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

/// Level from MREXTRAP_LOG_LEVEL (error, warn, info, debug); info by default.
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("MREXTRAP_LOG_LEVEL");
  if (!v) return LogLevel::info;
  const std::string s(v);
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "debug") return LogLevel::debug;
  return LogLevel::info;
}

class Logger {
 public:
  explicit Logger(LogLevel level = log_level_from_env()) : level_(level) {}
  void log(LogLevel l, const std::string& msg) const {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (static_cast<int>(l) <= static_cast<int>(level_)) std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << "\n";
  }
  void info(const std::string& m) const { log(LogLevel::info, m); }
  void warn(const std::string& m) const { log(LogLevel::warn, m); }

 private:
  LogLevel level_;
};

/// Exclusive lock on an output directory, released on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".mrextrap.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw Error(Errc::io, "output directory is locked by another run: " + path_.string());
  }
  ~DirectoryLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"generate-cohort",    "train-ae",          "encode",  "fit-betas",
                                          "fit-global-prior",   "fit-gaussian-prior", "fit-diffusion-prior",
                                          "predict",            "evaluate",          "analyze-beta"};
  return s;
}

namespace paths {
inline const char* manifest = "manifest.json";
inline const char* model = "models/autoencoder.mrxt";
inline const char* latents = "latents/latents.mrxt";
inline const char* betas = "betas/betas.mrxt";
inline const char* global_prior = "priors/global_prior.mrxt";
inline const char* gaussian_prior = "priors/gaussian_prior.mrxt";
inline const char* diffusion_prior = "priors/diffusion_prior.mrxt";
}  // namespace paths

inline std::string scan_key(const std::string& subject_id, std::size_t index) {
  return subject_id + "/" + std::to_string(index);
}

inline fs::path sidecar_path(const fs::path& artifact) {
  fs::path p = artifact;
  p.replace_extension(".json");
  return p;
}

class Pipeline {
 public:
  Pipeline(RunConfig config, fs::path out, Logger log = Logger())
      : config_(std::move(config)), out_(std::move(out)), log_(log) {}

  const RunConfig& config() const { return config_; }
  const fs::path& out() const { return out_; }

  /// Runs one stage (or "all") under the directory lock.
  void run(const std::string& stage) {
    DirectoryLock lock(out_);
    if (stage == "all") {
      for (const auto& s : pipeline_stages()) run_stage(s);
      return;
    }
    run_stage(stage);
  }

  void run_stage(const std::string& stage) {
    static const std::map<std::string, void (Pipeline::*)()> table{
        {"generate-cohort", &Pipeline::generate_cohort_stage},
        {"train-ae", &Pipeline::train_ae_stage},
        {"encode", &Pipeline::encode_stage},
        {"fit-betas", &Pipeline::fit_betas_stage},
        {"fit-global-prior", &Pipeline::fit_global_prior_stage},
        {"fit-gaussian-prior", &Pipeline::fit_gaussian_prior_stage},
        {"fit-diffusion-prior", &Pipeline::fit_diffusion_prior_stage},
        {"predict", &Pipeline::predict_stage},
        {"evaluate", &Pipeline::evaluate_stage},
        {"analyze-beta", &Pipeline::analyze_beta_stage}};
    auto it = table.find(stage);
    if (it == table.end()) throw Error(Errc::invalid_argument, "unknown subcommand: " + stage);
    log_.info("stage " + stage);
    outputs_.clear();
    inputs_.clear();
    const auto t0 = std::chrono::steady_clock::now();
    (this->*(it->second))();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Json outputs = Json::array();
    for (const auto& o : outputs_) outputs.push_back(o);
    const Json record = {{"stage", stage},
                         {"config_hash", hex64(config_hash(config_))},
                         {"seed", config_.seed},
                         {"wall_time_seconds", secs},
                         {"inputs", inputs_},
                         {"outputs", outputs}};
    write_file(out_ / "runs" / (stage + ".json"), canonical_dump(record));
  }

  // --- artifact helpers -------------------------------------------------

  fs::path require(const char* rel, const char* stage) {
    const fs::path p = out_ / rel;
    if (!fs::exists(p)) {
      throw Error(Errc::missing_dependency, std::string("missing ") + rel + "; run '" + stage + "' first");
    }
    inputs_[rel] = hex64(file_hash(p));
    return p;
  }

  void write_sidecar(const char* rel, Json meta) {
    meta["config_hash"] = hex64(config_hash(config_));
    meta["seed"] = config_.seed;
    meta["inputs"] = inputs_;
    meta["artifact"] = rel;
    write_file(sidecar_path(out_ / rel), canonical_dump(meta));
    outputs_.push_back(rel);
  }

  void write_csv(const std::string& rel, const std::string& content) {
    write_file(out_ / rel, content);
    outputs_.push_back(rel);
  }

  Cohort load_cohort() { return cohort_from_json(Json::parse(read_file(require(paths::manifest, "generate-cohort")))); }

  VolumeGrid load_volume(const ScanRecord& scan) const {
    return io::read_grid<VolumeGrid>(out_ / scan.volume_path);
  }

  Autoencoder<float> load_model() {
    const fs::path p = require(paths::model, "train-ae");
    const Json meta = Json::parse(read_file(sidecar_path(p)));
    Autoencoder<float> model(ae_config_from_json(meta.at("config"), "config", true),
                             meta.at("input_dims").get<std::vector<std::size_t>>());
    load_named_tensors(model.params(), io::read_container(p));
    return model;
  }

  std::vector<std::size_t> latent_dims() {
    const Json meta = Json::parse(read_file(sidecar_path(require(paths::model, "train-ae"))));
    return meta.at("latent_dims").get<std::vector<std::size_t>>();
  }

  /// Latent means of every scan, keyed by subject id then scan index.
  std::map<std::string, std::vector<LatentGrid>> load_latents(const Cohort& cohort) {
    const auto entries = io::read_container(require(paths::latents, "encode"));
    std::map<std::string, std::vector<LatentGrid>> out;
    for (const auto& s : cohort.subjects) {
      for (std::size_t i = 0; i < s.scans.size(); ++i) {
        out[s.subject_id].push_back(io::from_raw<LatentGrid>(io::find_tensor(entries, scan_key(s.subject_id, i))));
      }
    }
    return out;
  }

  std::vector<SubjectTrajectory> trajectories(const Cohort& cohort, Split split,
                                              const std::map<std::string, std::vector<LatentGrid>>& latents) {
    std::vector<SubjectTrajectory> out;
    for (const auto* s : cohort.in_split(split)) out.push_back({s->subject_id, latents.at(s->subject_id), s->ages()});
    return out;
  }

  std::vector<TrainingTriplet> load_triplets(const Cohort& cohort,
                                             const std::map<std::string, std::vector<LatentGrid>>& latents) {
    const auto entries = io::read_container(require(paths::betas, "fit-betas"));
    std::vector<TrainingTriplet> out;
    for (const auto* s : cohort.in_split(Split::train)) {
      if (s->scans.size() < 2) continue;
      const Beta beta = io::from_raw<Beta>(io::find_tensor(entries, s->subject_id));
      for (std::size_t i = 0; i < s->scans.size(); ++i) {
        out.push_back({latents.at(s->subject_id)[i], s->scans[i].age, beta, s->subject_id});
      }
    }
    return out;
  }

  std::pair<GaussianBelief, ObservationNoise> load_global_prior() {
    const auto e = io::read_container(require(paths::global_prior, "fit-global-prior"));
    return {{io::from_raw<Beta>(io::find_tensor(e, "mean")), io::from_raw<Beta>(io::find_tensor(e, "variance"))},
            {io::from_raw<Beta>(io::find_tensor(e, "obs_noise"))}};
  }

  // --- stages -------------------------------------------------------------

  void generate_cohort_stage() {
    PhantomSpec spec = default_phantom_spec();
    spec.noise_sigma = config_.cohort.noise_sigma;
    spec.seed = config_.cohort.options.seed;
    const Cohort cohort = generate_cohort(spec, config_.cohort.options);
    for (const auto& s : cohort.subjects) {
      for (const auto& scan : s.scans) io::write_grid(out_ / scan.volume_path, render_scan(cohort, s, scan));
    }
    write_file(out_ / paths::manifest, canonical_dump(to_json(cohort)));
    outputs_.push_back(paths::manifest);
    log_.info("wrote " + std::to_string(cohort.subjects.size()) + " subjects");
  }

  void train_ae_stage() {
    const Cohort cohort = load_cohort();
    std::vector<VolumeGrid> volumes;
    for (const auto* s : cohort.in_split(Split::train)) {
      for (const auto& scan : s->scans) volumes.push_back(load_volume(scan));
    }
    if (volumes.empty()) throw Error(Errc::insufficient_data, "train split has no scans");
    const auto model = train_autoencoder<float>(volumes, config_.autoencoder);
    io::write_container(out_ / paths::model, to_named_tensors(model.params()));
    write_sidecar(paths::model, {{"config", to_json(model.config())},
                                 {"input_dims", model.input_dims()},
                                 {"latent_dims", model.latent_dims()},
                                 {"loss_curve", model.report().loss_curve}});
    log_.info("autoencoder loss " + fmt_double(model.report().loss_curve.front()) + " -> " +
              fmt_double(model.report().loss_curve.back()));
  }

  void encode_stage() {
    const Cohort cohort = load_cohort();
    const auto model = load_model();
    io::NamedTensors entries;
    for (const auto& s : cohort.subjects) {
      for (std::size_t i = 0; i < s.scans.size(); ++i) {
        entries.emplace_back(scan_key(s.subject_id, i), io::to_raw(model.encode(load_volume(s.scans[i])).mean));
      }
    }
    io::write_container(out_ / paths::latents, entries);
    write_sidecar(paths::latents, {{"latent_dims", model.latent_dims()}, {"scans", entries.size()}});
  }

  void fit_betas_stage() {
    const Cohort cohort = load_cohort();
    const auto latents = load_latents(cohort);
    io::NamedTensors entries;
    for (const auto* s : cohort.in_split(Split::train)) {
      if (s->scans.size() < 2) continue;
      entries.emplace_back(s->subject_id, io::to_raw(compute_beta(latents.at(s->subject_id), s->ages())));
    }
    if (entries.empty()) throw Error(Errc::insufficient_data, "no training subject has two scans");
    io::write_container(out_ / paths::betas, entries);
    write_sidecar(paths::betas, {{"subjects", entries.size()}, {"split", "train"}});
  }

  void fit_global_prior_stage() {
    const Cohort cohort = load_cohort();
    const auto latents = load_latents(cohort);
    const auto triplets = load_triplets(cohort, latents);
    const auto prior = build_global_prior(triplets);
    const auto noise = estimate_obs_noise(triplets, trajectories(cohort, Split::train, latents));
    io::write_container(out_ / paths::global_prior, {{"mean", io::to_raw(prior.mean)},
                                                     {"variance", io::to_raw(prior.variance)},
                                                     {"obs_noise", io::to_raw(noise.variance)}});
    write_sidecar(paths::global_prior, {{"triplets", triplets.size()}, {"variance_floor", kVarianceFloor}});
  }

  void fit_gaussian_prior_stage() {
    const Cohort cohort = load_cohort();
    const auto latents = load_latents(cohort);
    const auto triplets = load_triplets(cohort, latents);
    const auto net = train_gaussian_prior(triplets, config_.gaussian_prior);
    save_gaussian_prior(net, out_ / paths::gaussian_prior);
    write_sidecar(paths::gaussian_prior, {{"config", to_json(net.config())},
                                          {"beta_dims", net.dims()},
                                          {"loss_curve", net.loss_curve()}});
  }

  void fit_diffusion_prior_stage() {
    const Cohort cohort = load_cohort();
    const auto latents = load_latents(cohort);
    const auto triplets = load_triplets(cohort, latents);
    const auto den = train_diffusion_prior(triplets, config_.diffusion);
    save_diffusion_prior(den, out_ / paths::diffusion_prior);
    write_sidecar(paths::diffusion_prior, {{"config", to_json(den.config())},
                                           {"beta_dims", den.dims()},
                                           {"loss_curve", den.loss_curve()}});
  }

  /// For each test subject, predicts the last scan from all earlier ones.
  void predict_stage() {
    const auto model = load_model();
    const Cohort cohort = load_cohort();
    const auto source = config_.predict.source;
    PredictionContext ctx;
    ctx.seed = derive_seed(config_.seed, {5});
    ctx.diffusion_samples = config_.predict.diffusion_samples;
    std::optional<std::pair<GaussianBelief, ObservationNoise>> global;
    std::optional<GaussianPriorNet> gnet;
    std::optional<DiffusionDenoiser> den;
    std::optional<NoiseSchedule> sched;
    const auto dims = latent_dims();
    if (source == BeliefSource::global_prior || source == BeliefSource::posterior) {
      global = load_global_prior();
      ctx.global_prior = &global->first;
      ctx.obs_noise = &global->second;
    } else if (source == BeliefSource::gaussian_net) {
      const auto p = require(paths::gaussian_prior, "fit-gaussian-prior");
      const Json meta = Json::parse(read_file(sidecar_path(p)));
      gnet = load_gaussian_prior(p, gaussian_config_from_json(meta.at("config"), "config", true), dims);
      ctx.gaussian_net = &*gnet;
    } else if (source == BeliefSource::diffusion) {
      const auto p = require(paths::diffusion_prior, "fit-diffusion-prior");
      const Json meta = Json::parse(read_file(sidecar_path(p)));
      den = load_diffusion_prior(p, diffusion_config_from_json(meta.at("config"), "config", true), dims);
      sched = den->config().schedule();
      ctx.diffusion = &*den;
      ctx.schedule = &*sched;
    }
    std::vector<MetricsRow> rows;
    io::NamedTensors predictions;
    for (const auto* s : cohort.in_split(Split::test)) {
      const std::size_t n_cond = s->scans.size() - 1;
      if (n_cond < 1 || (source == BeliefSource::regression && n_cond < 2)) {
        log_.warn("skipping " + s->subject_id + ": too few scans for " + to_string(source));
        continue;
      }
      std::vector<ObservedScan> observed;
      for (std::size_t i = 0; i < n_cond; ++i) observed.push_back({load_volume(s->scans[i]), s->scans[i].age});
      const auto& target = s->scans.back();
      const VolumeGrid pred = predict_scan(model, observed, source, target.age, ctx);
      const double tbv_first = region_volumes(segment_by_intensity(observed.front().volume, cohort.spec),
                                              cohort.spec.region_ids())
                                   .tbv;
      MetricsRow row = score_prediction(pred, load_volume(target), tbv_first, cohort.spec);
      row.subject_id = s->subject_id;
      row.source = source;
      row.n_conditioning_scans = static_cast<int>(n_cond);
      row.target_age = target.age;
      rows.push_back(std::move(row));
      predictions.emplace_back(s->subject_id, io::to_raw(pred));
    }
    const std::string rel = std::string("predictions/") + to_string(source) + ".mrxt";
    io::write_container(out_ / rel, predictions);
    write_sidecar(rel.c_str(), {{"source", to_string(source)}, {"subjects", predictions.size()}});
    std::ostringstream csv;
    write_metrics_csv(csv, rows, cohort.spec);
    write_csv(std::string("metrics/predictions_") + to_string(source) + ".csv", csv.str());
  }

  void evaluate_stage() {
    const auto model = load_model();
    const Cohort cohort = load_cohort();
    const auto latents = load_latents(cohort);
    const auto [prior, noise] = load_global_prior();
    const auto test = cohort.in_split(Split::test);

    std::ostringstream rec;
    rec << "subject_id,age,ssim,dice\r\n";
    for (const auto* s : test) {
      for (std::size_t i = 0; i < s->scans.size(); ++i) {
        const VolumeGrid x = load_volume(s->scans[i]);
        const VolumeGrid y = model.decode(latents.at(s->subject_id)[i]);
        rec << s->subject_id << ',' << fmt_double(s->scans[i].age) << ',' << fmt_double(ssim3d(x, y)) << ','
            << fmt_double(generalized_dice(segment_by_intensity(x, cohort.spec), segment_by_intensity(y, cohort.spec)))
            << "\r\n";
      }
    }
    write_csv("metrics/reconstruction.csv", rec.str());

    std::ostringstream lin;
    lin << "subject_id,scans,first_pc_explained_variance\r\n";
    for (const auto* s : test) {
      if (s->scans.size() < 3) continue;
      lin << s->subject_id << ',' << s->scans.size() << ','
          << fmt_double(latent_collinearity(latents.at(s->subject_id))) << "\r\n";
    }
    write_csv("metrics/collinearity.csv", lin.str());

    std::ostringstream interp;
    interp << "subject_id,region,alpha,volume,r2,max_chord_deviation\r\n";
    for (const auto* s : test) {
      if (s->scans.size() < 2) continue;
      const auto& zs = latents.at(s->subject_id);
      const auto rep = interpolation_linearity(model, zs.back(), zs.front(), cohort.spec,
                                               config_.evaluation.interpolation_points);
      for (const auto& [id, vols] : rep.volumes) {
        for (std::size_t k = 0; k < vols.size(); ++k) {
          interp << s->subject_id << ',' << cohort.spec.region(id).name << ',' << fmt_double(rep.alphas[k]) << ','
                 << fmt_double(vols[k]) << ',' << fmt_double(rep.r2.at(id)) << ','
                 << fmt_double(rep.max_chord_deviation.at(id)) << "\r\n";
        }
      }
      break;
    }
    write_csv("metrics/interpolation.csv", interp.str());

    try {
      const auto rows = multiscan_curve(model, cohort, test, prior, noise, config_.evaluation.protocol,
                                        [&](const Subject&, const ScanRecord& r) { return load_volume(r); });
      std::ostringstream ms, summary;
      write_metrics_csv(ms, rows, cohort.spec);
      write_curve_csv(summary, summarize_curve(rows));
      write_csv("metrics/multiscan.csv", ms.str());
      write_csv("metrics/multiscan_summary.csv", summary.str());
    } catch (const Error& e) {
      if (e.code() != Errc::no_eligible_subjects) throw;
      log_.warn("multi-scan protocol skipped: no test subject spans the required years");
    }
  }

  /// Rates of every subject with two or more scans, by diagnosis and age bin.
  void analyze_beta_stage() {
    const Cohort cohort = load_cohort();
    const auto latents = load_latents(cohort);
    std::vector<SubjectBeta> betas;
    for (const auto& s : cohort.subjects) {
      if (s.scans.size() < 2) continue;
      betas.push_back({compute_beta(latents.at(s.subject_id), s.ages()), s.diagnosis, s.scans.front().age});
    }
    std::ostringstream csv;
    write_beta_norm_csv(csv, beta_norm_analysis(betas, config_.evaluation.bin_width));
    write_csv("metrics/beta_norms.csv", csv.str());
  }

 private:
  RunConfig config_;
  fs::path out_;
  Logger log_;
  Json inputs_ = Json::object();
  std::vector<std::string> outputs_;
};

}  // namespace mrextrap
