#pragma once

// JSON run configuration (strict: unknown keys are fatal) and the cohort
// manifest. Object keys serialize sorted, so dumps are canonical.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrextrap/autoencoder.hpp"
#include "mrextrap/core.hpp"
#include "mrextrap/diffusion.hpp"
#include "mrextrap/evaluation.hpp"
#include "mrextrap/gaussian_prior.hpp"
#include "mrextrap/phantom.hpp"
#include "mrextrap/predict.hpp"

namespace mrextrap {

using Json = nlohmann::json;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + p.string());
  out << content;
}

inline std::uint64_t file_hash(const std::filesystem::path& p) { return fnv1a64(read_file(p)); }

/// Reads fields from one JSON object and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(Errc::invalid_config, path_ + " must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).template get<V>();
    } catch (const nlohmann::json::exception&) {
      throw Error(Errc::invalid_config, "invalid value for " + where(key));
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const Json& at(const char* key) const { return j_.at(key); }
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw Error(Errc::invalid_config, "unknown key: " + where(item.key()));
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const std::string& where) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw Error(Errc::invalid_config, "invalid value for " + where + ": " + s);
}

// ---------------------------------------------------------------------------
// Section configs

struct CohortSection {
  CohortOptions options;
  double noise_sigma = 0.01;
};

struct PredictSection {
  BeliefSource source = BeliefSource::global_prior;
  int diffusion_samples = 5;
};

struct EvaluationSection {
  MultiscanProtocol protocol;
  double bin_width = 5.0;
  int interpolation_points = 11;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  CohortSection cohort;
  AEConfig autoencoder;
  GaussianPriorConfig gaussian_prior;
  DiffusionConfig diffusion;
  PredictSection predict;
  EvaluationSection evaluation;

  /// Per-stage seeds derive from the one master seed.
  void apply_seed(std::uint64_t s) {
    seed = s;
    cohort.options.seed = derive_seed(s, {1});
    autoencoder.seed = derive_seed(s, {2});
    gaussian_prior.seed = derive_seed(s, {3});
    diffusion.seed = derive_seed(s, {4});
  }
};

inline const char* arch_name(AEArchitecture a) { return a == AEArchitecture::affine ? "affine" : "hidden"; }
inline const char* init_name(AEInit i) { return i == AEInit::pca ? "pca" : "random"; }

inline Json to_json(const AEConfig& c) {
  return {{"gamma_kl", c.gamma_kl},           {"ssim_weight", c.ssim_weight},
          {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"architecture", arch_name(c.architecture)},
          {"hidden_width", c.hidden_width},   {"latent_channels", c.latent_channels},
          {"downsample", c.downsample},       {"init", init_name(c.init)},
          {"init_logvar", c.init_logvar},     {"init_scale", c.init_scale},
          {"rms_decay", c.rms_decay},         {"ssim_window", c.ssim_window},
          {"dynamic_range", c.dynamic_range}, {"sample_latent", c.sample_latent},
          {"pca_noise_floor", c.pca_noise_floor}, {"seed", c.seed}};
}

inline AEConfig ae_config_from_json(const Json& j, const std::string& path, bool allow_seed) {
  AEConfig c;
  StrictObject o(j, path);
  o.get("gamma_kl", c.gamma_kl);
  o.get("ssim_weight", c.ssim_weight);
  o.get("learning_rate", c.learning_rate);
  o.get("epochs", c.epochs);
  o.get("batch_size", c.batch_size);
  std::string arch = arch_name(c.architecture), init = init_name(c.init);
  o.get("architecture", arch);
  o.get("init", init);
  c.architecture = enum_from<AEArchitecture>(arch, {{"affine", AEArchitecture::affine}, {"hidden", AEArchitecture::hidden}},
                             o.where("architecture"));
  c.init = enum_from<AEInit>(init, {{"pca", AEInit::pca}, {"random", AEInit::random}}, o.where("init"));
  o.get("hidden_width", c.hidden_width);
  o.get("latent_channels", c.latent_channels);
  o.get("downsample", c.downsample);
  o.get("init_logvar", c.init_logvar);
  o.get("init_scale", c.init_scale);
  o.get("rms_decay", c.rms_decay);
  o.get("ssim_window", c.ssim_window);
  o.get("dynamic_range", c.dynamic_range);
  o.get("sample_latent", c.sample_latent);
  o.get("pca_noise_floor", c.pca_noise_floor);
  if (allow_seed) o.get("seed", c.seed);
  o.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::invalid_config, path + ": " + e.what());
  }
  return c;
}

inline Json to_json(const GaussianPriorConfig& c) {
  return {{"hidden_width", c.hidden_width}, {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},     {"nll_weight", c.nll_weight},       {"rms_decay", c.rms_decay},
          {"seed", c.seed}};
}

inline GaussianPriorConfig gaussian_config_from_json(const Json& j, const std::string& path, bool allow_seed) {
  GaussianPriorConfig c;
  StrictObject o(j, path);
  o.get("hidden_width", c.hidden_width);
  o.get("learning_rate", c.learning_rate);
  o.get("epochs", c.epochs);
  o.get("batch_size", c.batch_size);
  o.get("nll_weight", c.nll_weight);
  o.get("rms_decay", c.rms_decay);
  if (allow_seed) o.get("seed", c.seed);
  o.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::invalid_config, path + ": " + e.what());
  }
  return c;
}

inline Json to_json(const DiffusionConfig& c) {
  return {{"hidden_width", c.hidden_width}, {"embedding_width", c.embedding_width}, {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},             {"batch_size", c.batch_size},           {"ema_decay", c.ema_decay},
          {"rms_decay", c.rms_decay},       {"K", c.K},                             {"T", c.T},
          {"beta_start", c.beta_start},     {"beta_end", c.beta_end},               {"seed", c.seed}};
}

inline DiffusionConfig diffusion_config_from_json(const Json& j, const std::string& path, bool allow_seed) {
  DiffusionConfig c;
  StrictObject o(j, path);
  o.get("hidden_width", c.hidden_width);
  o.get("embedding_width", c.embedding_width);
  o.get("learning_rate", c.learning_rate);
  o.get("epochs", c.epochs);
  o.get("batch_size", c.batch_size);
  o.get("ema_decay", c.ema_decay);
  o.get("rms_decay", c.rms_decay);
  o.get("K", c.K);
  o.get("T", c.T);
  o.get("beta_start", c.beta_start);
  o.get("beta_end", c.beta_end);
  if (allow_seed) o.get("seed", c.seed);
  o.finish();
  try {
    c.validate();
    (void)c.schedule();
  } catch (const Error& e) {
    throw Error(Errc::invalid_config, path + ": " + e.what());
  }
  return c;
}

template <typename A>
Json pair_json(const A& p) {
  return Json::array({p.first, p.second});
}

inline Json to_json(const RunConfig& c) {
  const auto& o = c.cohort.options;
  Json cohort = {{"n_subjects", o.n_subjects},
                 {"scans_per_subject", pair_json(o.scans_per_subject)},
                 {"age_spacing", pair_json(o.age_spacing)},
                 {"diagnosis_mix", o.diagnosis_mix},
                 {"split_fractions", o.split_fractions},
                 {"rate_multipliers", o.rate_multipliers},
                 {"rate_jitter", o.rate_jitter},
                 {"baseline_age", pair_json(o.baseline_age)},
                 {"noise_sigma", c.cohort.noise_sigma},
                 {"cohort_id", o.cohort_id}};
  Json ae = to_json(c.autoencoder);
  ae.erase("seed");
  Json gp = to_json(c.gaussian_prior);
  gp.erase("seed");
  Json df = to_json(c.diffusion);
  df.erase("seed");
  const auto& p = c.evaluation.protocol;
  Json eval = {{"anchor_offset", p.anchor_offset},   {"lags", p.lags},
               {"min_span", p.min_span},             {"age_tolerance", p.age_tolerance},
               {"include_regression", p.include_regression}, {"bin_width", c.evaluation.bin_width},
               {"interpolation_points", c.evaluation.interpolation_points}};
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"cohort", cohort},
          {"autoencoder", ae},
          {"gaussian_prior", gp},
          {"diffusion", df},
          {"predict", {{"source", to_string(c.predict.source)}, {"diffusion_samples", c.predict.diffusion_samples}}},
          {"evaluation", eval}};
}

template <typename A>
void get_pair(StrictObject& o, const char* key, A& out) {
  std::vector<typename A::first_type> v{out.first, out.second};
  o.get(key, v);
  if (v.size() != 2) throw Error(Errc::invalid_config, o.where(key) + " must have two entries");
  out = {v[0], v[1]};
}

/// Parses and validates a run configuration; absent keys keep their defaults.
inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  StrictObject root(j, "");
  std::uint64_t seed = 0;
  root.get("seed", seed);
  c.apply_seed(seed);
  root.get("output_dir", c.output_dir);
  if (root.has("cohort")) {
    StrictObject o(root.at("cohort"), "cohort");
    auto& opt = c.cohort.options;
    o.get("n_subjects", opt.n_subjects);
    get_pair(o, "scans_per_subject", opt.scans_per_subject);
    get_pair(o, "age_spacing", opt.age_spacing);
    get_pair(o, "baseline_age", opt.baseline_age);
    o.get("diagnosis_mix", opt.diagnosis_mix);
    o.get("split_fractions", opt.split_fractions);
    o.get("rate_multipliers", opt.rate_multipliers);
    o.get("rate_jitter", opt.rate_jitter);
    o.get("noise_sigma", c.cohort.noise_sigma);
    o.get("cohort_id", opt.cohort_id);
    o.finish();
    if (!(c.cohort.noise_sigma >= 0.0)) throw Error(Errc::invalid_config, "cohort.noise_sigma must be >= 0");
    if (opt.n_subjects == 0) throw Error(Errc::invalid_config, "cohort.n_subjects must be positive");
  }
  if (root.has("autoencoder")) c.autoencoder = ae_config_from_json(root.at("autoencoder"), "autoencoder", false);
  if (root.has("gaussian_prior")) {
    c.gaussian_prior = gaussian_config_from_json(root.at("gaussian_prior"), "gaussian_prior", false);
  }
  if (root.has("diffusion")) c.diffusion = diffusion_config_from_json(root.at("diffusion"), "diffusion", false);
  if (root.has("predict")) {
    StrictObject o(root.at("predict"), "predict");
    std::string source = to_string(c.predict.source);
    o.get("source", source);
    try {
      c.predict.source = belief_source_from_string(source);
    } catch (const Error&) {
      throw Error(Errc::invalid_config, "invalid value for predict.source: " + source);
    }
    o.get("diffusion_samples", c.predict.diffusion_samples);
    o.finish();
    if (c.predict.diffusion_samples < 1) throw Error(Errc::invalid_config, "predict.diffusion_samples must be >= 1");
  }
  if (root.has("evaluation")) {
    StrictObject o(root.at("evaluation"), "evaluation");
    auto& p = c.evaluation.protocol;
    o.get("anchor_offset", p.anchor_offset);
    o.get("lags", p.lags);
    o.get("min_span", p.min_span);
    o.get("age_tolerance", p.age_tolerance);
    o.get("include_regression", p.include_regression);
    o.get("bin_width", c.evaluation.bin_width);
    o.get("interpolation_points", c.evaluation.interpolation_points);
    o.finish();
    for (double lag : p.lags) {
      if (!(lag > 0.0)) throw Error(Errc::invalid_config, "evaluation.lags must be positive");
    }
    if (!(c.evaluation.bin_width > 0.0)) throw Error(Errc::invalid_config, "evaluation.bin_width must be positive");
    if (c.evaluation.interpolation_points < 2) {
      throw Error(Errc::invalid_config, "evaluation.interpolation_points must be >= 2");
    }
  }
  root.finish();
  // Re-derive stage seeds in case sections were parsed after the master seed.
  c.apply_seed(seed);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::invalid_config, std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Manifest

inline Json to_json(const PhantomSpec& s) {
  Json regions = Json::array();
  for (const auto& r : s.regions) {
    regions.push_back({{"region_id", r.region_id},
                       {"name", r.name},
                       {"shape", r.geometry.kind == ShapeKind::ellipsoid ? "ellipsoid" : "spherical_pair"},
                       {"center", r.geometry.center},
                       {"radii", r.geometry.radii},
                       {"pair_offset", r.geometry.pair_offset},
                       {"intensity", r.intensity},
                       {"volume_rate", r.volume_rate}});
  }
  return {{"grid_size", s.grid_size}, {"regions", regions},           {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},           {"edge_width", s.edge_width},   {"reference_age", s.reference_age},
          {"min_age", s.min_age},     {"max_age", s.max_age}};
}

inline PhantomSpec phantom_spec_from_json(const Json& j) {
  PhantomSpec s;
  StrictObject o(j, "spec");
  o.get("grid_size", s.grid_size);
  o.get("noise_sigma", s.noise_sigma);
  o.get("seed", s.seed);
  o.get("edge_width", s.edge_width);
  o.get("reference_age", s.reference_age);
  o.get("min_age", s.min_age);
  o.get("max_age", s.max_age);
  if (o.has("regions")) {
    for (const auto& rj : o.at("regions")) {
      StrictObject ro(rj, "spec.regions[]");
      PhantomRegion r;
      std::string shape = "ellipsoid";
      ro.get("region_id", r.region_id);
      ro.get("name", r.name);
      ro.get("shape", shape);
      r.geometry.kind = enum_from<ShapeKind>(shape, {{"ellipsoid", ShapeKind::ellipsoid}, {"spherical_pair", ShapeKind::spherical_pair}},
                                  "spec.regions[].shape");
      ro.get("center", r.geometry.center);
      ro.get("radii", r.geometry.radii);
      ro.get("pair_offset", r.geometry.pair_offset);
      ro.get("intensity", r.intensity);
      ro.get("volume_rate", r.volume_rate);
      ro.finish();
      s.regions.push_back(r);
    }
  }
  o.finish();
  return s;
}

inline Json to_json(const Cohort& c) {
  Json subjects = Json::array();
  Json splits = {{"train", Json::array()}, {"val", Json::array()}, {"test", Json::array()}};
  for (const auto& s : c.subjects) {
    Json scans = Json::array();
    for (const auto& r : s.scans) {
      scans.push_back({{"age", r.age},
                       {"diagnosis_at_scan", to_string(r.diagnosis_at_scan)},
                       {"volume_path", r.volume_path},
                       {"noise_seed", r.noise_seed}});
    }
    subjects.push_back({{"subject_id", s.subject_id},
                        {"diagnosis", to_string(s.diagnosis)},
                        {"true_rates", s.true_rates},
                        {"scans", scans}});
    splits[to_string(s.split)].push_back(s.subject_id);
  }
  return {{"cohort_id", c.cohort_id}, {"spec", to_json(c.spec)}, {"subjects", subjects}, {"split_assignment", splits}};
}

inline Cohort cohort_from_json(const Json& j) {
  Cohort c;
  try {
    c.cohort_id = j.at("cohort_id").get<std::string>();
    c.spec = phantom_spec_from_json(j.at("spec"));
    std::map<std::string, Split> split_of;
    for (const auto& [name, ids] : j.at("split_assignment").items()) {
      for (const auto& id : ids) split_of[id.get<std::string>()] = split_from_string(name);
    }
    for (const auto& sj : j.at("subjects")) {
      Subject s;
      s.subject_id = sj.at("subject_id").get<std::string>();
      s.diagnosis = diagnosis_from_string(sj.at("diagnosis").get<std::string>());
      s.true_rates = sj.at("true_rates").get<std::vector<double>>();
      for (const auto& rj : sj.at("scans")) {
        ScanRecord r;
        r.subject_id = s.subject_id;
        r.age = rj.at("age").get<double>();
        r.diagnosis_at_scan = diagnosis_from_string(rj.at("diagnosis_at_scan").get<std::string>());
        r.volume_path = rj.at("volume_path").get<std::string>();
        r.noise_seed = rj.at("noise_seed").get<std::uint64_t>();
        s.scans.push_back(r);
      }
      auto it = split_of.find(s.subject_id);
      if (it == split_of.end()) throw Error(Errc::invalid_config, "subject without split: " + s.subject_id);
      s.split = it->second;
      c.subjects.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_config, std::string("malformed manifest: ") + e.what());
  }
  return c;
}

/// Canonical text: sorted keys, two-space indent, trailing newline.
inline std::string canonical_dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace mrextrap
