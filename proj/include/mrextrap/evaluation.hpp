#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mrextrap/autoencoder.hpp"
#include "mrextrap/core.hpp"
#include "mrextrap/phantom.hpp"
#include "mrextrap/predict.hpp"
#include "mrextrap/progression.hpp"
#include "mrextrap/ssim.hpp"

namespace mrextrap {

struct RegionVolumes {
  std::map<int, double> counts;  // region id -> voxels
  double tbv = 0.0;
};

inline const std::vector<int>& default_region_ids() {
  static const std::vector<int> ids{region_id::hippocampus, region_id::ventricle, region_id::grey_matter,
                                    region_id::white_matter};
  return ids;
}

inline RegionVolumes region_volumes(const SegmentationMap& seg, const std::vector<int>& ids = default_region_ids()) {
  RegionVolumes v;
  for (int id : ids) v.counts[id] = 0.0;
  for (auto label : seg.values()) {
    if (label == 0) continue;
    auto it = v.counts.find(label);
    if (it == v.counts.end()) throw Error(Errc::unknown_label, "label " + std::to_string(label) + " is not a region");
    it->second += 1.0;
    v.tbv += 1.0;
  }
  return v;
}

/// 100 |v_pred - v_actual| / tbv_first_scan per region.
inline std::map<int, double> mae_tbv(const RegionVolumes& predicted, const RegionVolumes& actual,
                                     double tbv_first_scan) {
  if (!(tbv_first_scan > 0.0)) throw Error(Errc::degenerate_input, "first-scan TBV must be positive");
  std::map<int, double> out;
  for (const auto& [id, a] : actual.counts) {
    auto it = predicted.counts.find(id);
    const double p = it == predicted.counts.end() ? 0.0 : it->second;
    out[id] = 100.0 * std::abs(p - a) / tbv_first_scan;
  }
  for (const auto& [id, p] : predicted.counts) {
    if (!out.count(id)) out[id] = 100.0 * std::abs(p) / tbv_first_scan;
  }
  return out;
}

/// Generalized Dice over foreground labels with weights 1 / (|A_r| + |B_r|)^2.
/// Labels absent from both maps do not contribute; two empty maps score 1.
inline double generalized_dice(const SegmentationMap& a, const SegmentationMap& b) {
  require_same_shape(a, b, "segmentations differ in shape");
  std::map<int, std::array<double, 3>> stats;  // |A|, |B|, |A & B|
  for (std::size_t v = 0; v < a.size(); ++v) {
    if (a[v] != 0) stats[a[v]][0] += 1.0;
    if (b[v] != 0) stats[b[v]][1] += 1.0;
    if (a[v] != 0 && a[v] == b[v]) stats[a[v]][2] += 1.0;
  }
  if (stats.empty()) return 1.0;
  double num = 0.0, den = 0.0;
  for (const auto& [id, s] : stats) {
    const double size = s[0] + s[1];
    const double w = 1.0 / (size * size);
    num += w * 2.0 * s[2];
    den += w * size;
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Linearity diagnostics

/// Coefficient of determination of a least-squares line; 1 for a constant series.
inline double r_squared(std::span<const double> x, std::span<const double> y) {
  if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) return 1.0;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0.0) return 1.0;
  if (sxx == 0.0) return 0.0;
  return sxy * sxy / (sxx * syy);
}

struct LinearityReport {
  std::vector<double> alphas;
  std::map<int, std::vector<double>> volumes;  // per region, per alpha
  std::map<int, double> r2;
  std::map<int, double> max_chord_deviation;
};

/// Decodes alpha z1 + (1 - alpha) z2 on a uniform alpha grid in [0, 1] and
/// checks how linearly each region's volume follows alpha.
template <typename T>
LinearityReport interpolation_linearity(const Autoencoder<T>& model, const LatentGrid& z1, const LatentGrid& z2,
                                        const PhantomSpec& spec, int n_alphas = 11) {
  require_same_shape(z1, z2, "interpolation endpoints differ in shape");
  if (n_alphas < 2) throw Error(Errc::invalid_argument, "need at least two interpolation points");
  LinearityReport rep;
  for (int k = 0; k < n_alphas; ++k) {
    const double alpha = static_cast<double>(k) / (n_alphas - 1);
    rep.alphas.push_back(alpha);
    LatentGrid z(z1.dims());
    for (std::size_t e = 0; e < z.size(); ++e) z[e] = alpha * z1[e] + (1.0 - alpha) * z2[e];
    const auto vols = region_volumes(segment_by_intensity(model.decode(z), spec), spec.region_ids());
    for (const auto& [id, c] : vols.counts) rep.volumes[id].push_back(c);
  }
  for (const auto& [id, v] : rep.volumes) {
    rep.r2[id] = r_squared(rep.alphas, v);
    double dev = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double chord = v.front() + (v.back() - v.front()) * rep.alphas[k];
      dev = std::max(dev, std::abs(v[k] - chord));
    }
    rep.max_chord_deviation[id] = dev;
  }
  return rep;
}

struct PcaResult {
  Eigen::MatrixXd components;   // d x k, unit columns
  Eigen::MatrixXd projections;  // n x k
  std::vector<double> explained_variance_ratio;
  std::vector<double> eigenvalues;
};

/// Mean-centred PCA from the eigendecomposition of the (population)
/// covariance. Each component's first non-negligible coordinate is positive.
inline PcaResult pca_project(const std::vector<std::vector<double>>& points, int n_components = 2) {
  if (points.size() < 2) throw Error(Errc::degenerate_input, "PCA needs at least two points");
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto d = static_cast<Eigen::Index>(points.front().size());
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(points[static_cast<std::size_t>(i)].size()) != d) {
      throw Error(Errc::shape_mismatch, "points differ in dimension");
    }
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = points[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  const Eigen::MatrixXd cov = X.transpose() * X / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const double total = std::max(eig.eigenvalues().sum(), 0.0);
  if (!(cov.trace() > 1e-20 * (1.0 + mean.squaredNorm()))) throw Error(Errc::degenerate_input, "PCA needs at least two distinct points");
  const Eigen::Index k = std::min<Eigen::Index>(n_components, d);
  PcaResult r;
  r.components.resize(d, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
    const double scale = v.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < d; ++j) {
      if (std::abs(v(j)) > 1e-9 * scale) {
        if (v(j) < 0.0) v = -v;
        break;
      }
    }
    r.components.col(c) = v;
    const double lambda = std::max(eig.eigenvalues()(d - 1 - c), 0.0);
    r.eigenvalues.push_back(lambda);
    r.explained_variance_ratio.push_back(lambda / total);
  }
  r.projections = X * r.components;
  return r;
}

/// Explained-variance ratio of the first principal component of one
/// subject's latent trajectory.
inline double latent_collinearity(std::span<const LatentGrid> latents) {
  if (latents.size() < 3) throw Error(Errc::insufficient_data, "collinearity needs at least three scans");
  std::vector<std::vector<double>> pts;
  for (const auto& z : latents) pts.emplace_back(z.values().begin(), z.values().end());
  return pca_project(pts, 1).explained_variance_ratio.front();
}

// ---------------------------------------------------------------------------
// Rate magnitude by diagnosis and age

struct SubjectBeta {
  Beta beta;
  Diagnosis diagnosis = Diagnosis::healthy;
  double first_scan_age = 0.0;
};

struct BetaNormCell {
  Diagnosis diagnosis = Diagnosis::healthy;
  std::optional<double> bin_start;  // empty for the all-ages row
  std::size_t count = 0;
  double mean = 0.0;
  double standard_error = std::numeric_limits<double>::quiet_NaN();  // NaN for a single subject
};

inline double l1_norm(const Beta& b) {
  double s = 0.0;
  for (double v : b.values()) s += std::abs(v);
  return s;
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation over sqrt(n); NaN when n < 2.
inline double standard_error(std::span<const double> v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

/// Mean ||beta||_1 per diagnosis, overall and per 5-year bin of first-scan
/// age ([60, 65), [65, 70), ...). Rows ordered by diagnosis, then bin with
/// the all-ages row first. Empty cells are omitted.
inline std::vector<BetaNormCell> beta_norm_analysis(std::span<const SubjectBeta> subjects, double bin_width = 5.0) {
  std::map<std::pair<int, double>, std::vector<double>> cells;  // bin -inf marks the all-ages row
  const double all = -std::numeric_limits<double>::infinity();
  for (const auto& s : subjects) {
    const double norm = l1_norm(s.beta);
    const int dx = static_cast<int>(s.diagnosis);
    cells[{dx, all}].push_back(norm);
    cells[{dx, bin_width * std::floor(s.first_scan_age / bin_width)}].push_back(norm);
  }
  std::vector<BetaNormCell> out;
  for (const auto& [key, norms] : cells) {
    BetaNormCell c;
    c.diagnosis = static_cast<Diagnosis>(key.first);
    if (key.second != all) c.bin_start = key.second;
    c.count = norms.size();
    c.mean = mean_of(norms);
    c.standard_error = standard_error(norms);
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction metrics and the multi-scan conditioning protocol

struct MetricsRow {
  std::string subject_id;
  BeliefSource source = BeliefSource::global_prior;
  int n_conditioning_scans = 0;
  double target_age = 0.0;
  std::map<int, double> mae_tbv;  // per region, % of first-scan TBV
  double mae_mean = 0.0;          // mean over regions
  double ssim = 0.0;
  double dice = 0.0;
};

/// Compares a predicted volume with the real scan via intensity segmentation.
inline MetricsRow score_prediction(const VolumeGrid& predicted, const VolumeGrid& actual, double tbv_first_scan,
                                   const PhantomSpec& spec, std::size_t ssim_window = 7) {
  const auto seg_pred = segment_by_intensity(predicted, spec);
  const auto seg_true = segment_by_intensity(actual, spec);
  MetricsRow row;
  row.mae_tbv = mae_tbv(region_volumes(seg_pred, spec.region_ids()), region_volumes(seg_true, spec.region_ids()),
                        tbv_first_scan);
  for (const auto& [id, m] : row.mae_tbv) row.mae_mean += m / static_cast<double>(row.mae_tbv.size());
  row.ssim = ssim3d(actual, predicted, SsimOptions{ssim_window, 1.0});
  row.dice = generalized_dice(seg_true, seg_pred);
  return row;
}

struct MultiscanProtocol {
  double anchor_offset = 4.0;             // years after the first scan
  std::vector<double> lags{1.0, 2.0, 3.0};  // observations before the anchor, nearest first
  double min_span = 6.0;
  double age_tolerance = 0.5;
  bool include_regression = true;
};

using VolumeLoader = std::function<VolumeGrid(const Subject&, const ScanRecord&)>;

inline std::optional<std::size_t> scan_near(const Subject& s, double age, double tol) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < s.scans.size(); ++i) {
    const double d = std::abs(s.scans[i].age - age);
    if (d <= tol && (!best || d < std::abs(s.scans[*best].age - age))) best = i;
  }
  return best;
}

/// Subjects spanning at least `min_span` years whose anchor and lag scans exist
/// and with at least one scan after the anchor.
inline bool multiscan_eligible(const Subject& s, const MultiscanProtocol& p) {
  if (s.scans.size() < 2) return false;
  const double first = s.scans.front().age;
  if (s.scans.back().age - first < p.min_span - 1e-9) return false;
  const auto anchor = scan_near(s, first + p.anchor_offset, p.age_tolerance);
  if (!anchor || *anchor + 1 >= s.scans.size()) return false;
  for (double lag : p.lags) {
    const auto o = scan_near(s, s.scans[*anchor].age - lag, p.age_tolerance);
    if (!o || *o == *anchor) return false;
  }
  return true;
}

/// The prior-input scan anchors both the likelihood and extrapolation. Row
/// n = 0 uses the global prior mean; n = 1..L adds the lagged scans nearest
/// first through the conjugate update; the regression rows fit the anchor and
/// all lagged scans. Targets are every scan after the anchor.
template <typename T>
std::vector<MetricsRow> multiscan_curve(const Autoencoder<T>& model, const Cohort& cohort,
                                        std::span<const Subject* const> subjects, const GaussianBelief& global_prior,
                                        const ObservationNoise& noise, const MultiscanProtocol& protocol,
                                        const VolumeLoader& load) {
  std::vector<MetricsRow> rows;
  std::size_t eligible = 0;
  for (const Subject* s : subjects) {
    if (!multiscan_eligible(*s, protocol)) continue;
    ++eligible;
    const std::size_t anchor = *scan_near(*s, s->scans.front().age + protocol.anchor_offset, protocol.age_tolerance);
    std::vector<std::size_t> lagged;
    for (double lag : protocol.lags) {
      lagged.push_back(*scan_near(*s, s->scans[anchor].age - lag, protocol.age_tolerance));
    }
    std::map<std::size_t, VolumeGrid> vols;
    auto volume = [&](std::size_t i) -> const VolumeGrid& {
      auto it = vols.find(i);
      if (it == vols.end()) it = vols.emplace(i, load(*s, s->scans[i])).first;
      return it->second;
    };
    auto latent = [&](std::size_t i) { return model.encode(volume(i)).mean; };
    const double tbv_first = region_volumes(segment_by_intensity(volume(0), cohort.spec), cohort.spec.region_ids()).tbv;
    const LatentGrid z_anchor = latent(anchor);
    const double a_anchor = s->scans[anchor].age;

    std::vector<std::pair<BeliefSource, std::pair<int, Beta>>> betas;
    betas.push_back({BeliefSource::global_prior, {0, global_prior.mean}});
    std::vector<LatentObservation> obs;
    for (std::size_t n = 1; n <= lagged.size(); ++n) {
      obs.push_back({latent(lagged[n - 1]), s->scans[lagged[n - 1]].age});
      betas.push_back({BeliefSource::posterior,
                       {static_cast<int>(n), posterior_update(global_prior, z_anchor, a_anchor, obs, noise).mean}});
    }
    if (protocol.include_regression) {
      std::vector<LatentGrid> zs{z_anchor};
      std::vector<double> as{a_anchor};
      for (const auto& o : obs) {
        zs.push_back(o.latent);
        as.push_back(o.age);
      }
      betas.push_back({BeliefSource::regression, {static_cast<int>(obs.size()), compute_beta(zs, as)}});
    }
    for (std::size_t t = anchor + 1; t < s->scans.size(); ++t) {
      const double target = s->scans[t].age;
      for (const auto& [source, nb] : betas) {
        const VolumeGrid pred = model.decode(extrapolate(z_anchor, a_anchor, nb.second, target));
        MetricsRow row = score_prediction(pred, volume(t), tbv_first, cohort.spec);
        row.subject_id = s->subject_id;
        row.source = source;
        row.n_conditioning_scans = nb.first;
        row.target_age = target;
        rows.push_back(std::move(row));
      }
    }
  }
  if (eligible == 0) throw Error(Errc::no_eligible_subjects, "no subject satisfies the multi-scan protocol");
  return rows;
}

struct CurvePoint {
  BeliefSource source = BeliefSource::global_prior;
  int n_conditioning_scans = 0;
  std::size_t subjects = 0;
  double mean_mae = 0.0;
  double standard_error = 0.0;
};

/// Per-subject mean of mae_mean, then mean and standard error across subjects.
inline std::vector<CurvePoint> summarize_curve(std::span<const MetricsRow> rows) {
  std::map<std::pair<int, int>, std::map<std::string, std::vector<double>>> groups;
  for (const auto& r : rows) groups[{static_cast<int>(r.source), r.n_conditioning_scans}][r.subject_id].push_back(r.mae_mean);
  std::vector<CurvePoint> out;
  for (const auto& [key, per_subject] : groups) {
    std::vector<double> means;
    for (const auto& [id, v] : per_subject) means.push_back(mean_of(v));
    CurvePoint p;
    p.source = static_cast<BeliefSource>(key.first);
    p.n_conditioning_scans = key.second;
    p.subjects = means.size();
    p.mean_mae = mean_of(means);
    p.standard_error = standard_error(means);
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output (fixed formatting for byte-stable files)

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows, const PhantomSpec& spec) {
  os << "subject_id,source,n_conditioning_scans,target_age";
  for (int id : spec.region_ids()) os << ",mae_tbv_" << spec.region(id).name;
  os << ",mae_mean,ssim,dice\r\n";
  for (const auto& r : rows) {
    os << csv_field(r.subject_id) << ',' << to_string(r.source) << ',' << r.n_conditioning_scans << ','
       << fmt_double(r.target_age);
    for (int id : spec.region_ids()) {
      auto it = r.mae_tbv.find(id);
      os << ',' << fmt_double(it == r.mae_tbv.end() ? 0.0 : it->second);
    }
    os << ',' << fmt_double(r.mae_mean) << ',' << fmt_double(r.ssim) << ',' << fmt_double(r.dice) << "\r\n";
  }
}

inline void write_curve_csv(std::ostream& os, std::span<const CurvePoint> points) {
  os << "source,n_conditioning_scans,subjects,mean_mae,standard_error\r\n";
  for (const auto& p : points) {
    os << to_string(p.source) << ',' << p.n_conditioning_scans << ',' << p.subjects << ',' << fmt_double(p.mean_mae)
       << ',' << fmt_double(p.standard_error) << "\r\n";
  }
}

inline void write_beta_norm_csv(std::ostream& os, std::span<const BetaNormCell> cells) {
  os << "diagnosis,bin_start,count,mean_l1,standard_error\r\n";
  for (const auto& c : cells) {
    os << to_string(c.diagnosis) << ',' << (c.bin_start ? fmt_double(*c.bin_start) : std::string("all")) << ','
       << c.count << ',' << fmt_double(c.mean) << ',' << fmt_double(c.standard_error) << "\r\n";
  }
}

}  // namespace mrextrap
