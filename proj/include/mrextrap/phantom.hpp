#pragma once

// Synthetic longitudinal phantom cohorts.
//
// Each region is one ellipsoid or a mirrored pair of ellipsoids whose analytic
// volume changes linearly with age; radii follow by cube-root scaling. Regions
// are listed innermost first: a voxel belongs to the first region whose shape
// contains its centre, and intensities are composited outermost-first with a
// soft (erf) edge so that voxel intensities move smoothly with the geometry.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrextrap/core.hpp"
#include "mrextrap/rng.hpp"

namespace mrextrap {

enum class Diagnosis { healthy, mci, dementia };

inline const char* to_string(Diagnosis d) {
  switch (d) {
    case Diagnosis::healthy: return "healthy";
    case Diagnosis::mci: return "MCI";
    case Diagnosis::dementia: return "dementia";
  }
  return "?";
}

inline Diagnosis diagnosis_from_string(const std::string& s) {
  if (s == "healthy") return Diagnosis::healthy;
  if (s == "MCI") return Diagnosis::mci;
  if (s == "dementia") return Diagnosis::dementia;
  throw Error(Errc::invalid_argument, "unknown diagnosis: " + s);
}

enum class ShapeKind { ellipsoid, spherical_pair };

struct RegionGeometry {
  ShapeKind kind = ShapeKind::ellipsoid;
  std::array<double, 3> center{};
  std::array<double, 3> radii{};
  double pair_offset = 0.0;  // half-separation along axis 0 for spherical pairs
};

struct PhantomRegion {
  int region_id = 0;
  std::string name;
  RegionGeometry geometry;
  double intensity = 0.0;
  double volume_rate = 0.0;  // voxels per year of the region's shape volume
};

struct PhantomSpec {
  std::size_t grid_size = 32;
  std::vector<PhantomRegion> regions;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  double edge_width = 0.8;
  double reference_age = 70.0;
  double min_age = 55.0;
  double max_age = 95.0;

  const PhantomRegion& region(int id) const {
    for (const auto& r : regions) {
      if (r.region_id == id) return r;
    }
    throw Error(Errc::unknown_label, "region id " + std::to_string(id));
  }

  std::vector<int> region_ids() const {
    std::vector<int> ids;
    for (const auto& r : regions) ids.push_back(r.region_id);
    std::sort(ids.begin(), ids.end());
    return ids;
  }
};

namespace region_id {
inline constexpr int hippocampus = 1;
inline constexpr int ventricle = 2;
inline constexpr int grey_matter = 3;
inline constexpr int white_matter = 4;
}  // namespace region_id

/// Four-region brain-like phantom on a 32^3 grid. Hippocampus-like pair and
/// white-matter interior shrink, the ventricle grows and the grey-matter
/// shell thins.
inline PhantomSpec default_phantom_spec() {
  PhantomSpec spec;
  // Centres sit off the voxel lattice's symmetry points so voxels do not enter
  // and leave the shapes in mirrored groups of eight as radii change.
  const double c = 15.5;
  const std::array<double, 3> tissue{c + 0.11, c - 0.07, c + 0.13};
  spec.regions = {
      {region_id::hippocampus, "hippocampus",
       {ShapeKind::spherical_pair, {c + 0.37, c + 1.21, c - 0.29}, {3.0, 3.0, 3.0}, 5.8}, 0.72, -2.4},
      {region_id::ventricle, "ventricle",
       {ShapeKind::ellipsoid, {c + 0.23, c - 0.31, c + 0.17}, {2.5, 3.5, 3.0}, 0.0}, 1.0, 2.5},
      {region_id::white_matter, "white_matter", {ShapeKind::ellipsoid, tissue, {10.0, 11.0, 9.0}, 0.0}, 0.45, -20.0},
      {region_id::grey_matter, "grey_matter", {ShapeKind::ellipsoid, tissue, {13.0, 14.0, 12.0}, 0.0}, 0.2, -35.0},
  };
  return spec;
}

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{};

  double volume() const { return 4.0 / 3.0 * std::numbers::pi * radii[0] * radii[1] * radii[2]; }

  // Normalised radius: < 1 inside, 1 on the surface.
  double rho(const std::array<double, 3>& p) const {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double q = (p[i] - center[i]) / radii[i];
      s += q * q;
    }
    return std::sqrt(s);
  }

  // First-order signed distance to the surface, positive inside.
  double signed_distance(const std::array<double, 3>& p) const {
    double s = 0.0, g = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double q = p[i] - center[i];
      s += q * q / (radii[i] * radii[i]);
      g += q * q / (radii[i] * radii[i] * radii[i] * radii[i]);
    }
    const double r = std::sqrt(s);
    if (r < 1e-12) return *std::min_element(radii.begin(), radii.end());
    return (1.0 - r) * r / std::sqrt(g);
  }
};

inline double base_shape_volume(const RegionGeometry& g) {
  const double v = 4.0 / 3.0 * std::numbers::pi * g.radii[0] * g.radii[1] * g.radii[2];
  return g.kind == ShapeKind::spherical_pair ? 2.0 * v : v;
}

/// Analytic shape volume of a region at the given age.
inline double shape_volume_at(const PhantomSpec& spec, std::size_t region_index, double multiplier, double age) {
  const auto& r = spec.regions[region_index];
  return base_shape_volume(r.geometry) + r.volume_rate * multiplier * (age - spec.reference_age);
}

/// Per-region ellipsoids at an age; throws geometry_overflow for collapsed shapes.
inline std::vector<std::vector<Ellipsoid>> shapes_at(const PhantomSpec& spec, std::span<const double> rates,
                                                     double age) {
  if (rates.size() != spec.regions.size()) {
    throw Error(Errc::invalid_argument, "one rate multiplier per region required");
  }
  std::vector<std::vector<Ellipsoid>> shapes;
  for (std::size_t i = 0; i < spec.regions.size(); ++i) {
    const auto& g = spec.regions[i].geometry;
    const double v0 = base_shape_volume(g);
    const double v = shape_volume_at(spec, i, rates[i], age);
    if (!(v > 0.0)) {
      throw Error(Errc::geometry_overflow, spec.regions[i].name + " collapses at age " + std::to_string(age));
    }
    const double s = std::cbrt(v / v0);
    std::array<double, 3> radii{g.radii[0] * s, g.radii[1] * s, g.radii[2] * s};
    if (g.kind == ShapeKind::ellipsoid) {
      shapes.push_back({Ellipsoid{g.center, radii}});
    } else {
      auto left = g.center, right = g.center;
      left[0] -= g.pair_offset;
      right[0] += g.pair_offset;
      shapes.push_back({Ellipsoid{left, radii}, Ellipsoid{right, radii}});
    }
  }
  return shapes;
}

namespace detail {

inline std::vector<std::array<double, 3>> fibonacci_sphere(int n) {
  std::vector<std::array<double, 3>> pts;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(1.0 - y * y);
    pts.push_back({r * std::cos(golden * i), y, r * std::sin(golden * i)});
  }
  return pts;
}

inline std::vector<std::array<double, 3>> surface_points(const Ellipsoid& e) {
  static const auto dirs = fibonacci_sphere(400);
  std::vector<std::array<double, 3>> pts;
  pts.reserve(dirs.size());
  for (const auto& d : dirs) {
    pts.push_back({e.center[0] + e.radii[0] * d[0], e.center[1] + e.radii[1] * d[1],
                   e.center[2] + e.radii[2] * d[2]});
  }
  return pts;
}

inline bool all_inside(const Ellipsoid& inner, const Ellipsoid& outer) {
  for (const auto& p : surface_points(inner)) {
    if (outer.rho(p) >= 1.0) return false;
  }
  return true;
}

inline bool all_outside(const Ellipsoid& a, const Ellipsoid& b) {
  for (const auto& p : surface_points(a)) {
    if (b.rho(p) <= 1.0) return false;
  }
  return true;
}

}  // namespace detail

/// Verifies that all shapes fit in the grid and are either nested (an
/// earlier-listed shape inside a later one) or disjoint.
inline void check_geometry(const PhantomSpec& spec, const std::vector<std::vector<Ellipsoid>>& shapes) {
  const double hi = static_cast<double>(spec.grid_size) - 1.0;
  std::vector<std::pair<std::size_t, Ellipsoid>> flat;
  for (std::size_t r = 0; r < shapes.size(); ++r) {
    for (const auto& e : shapes[r]) {
      for (int a = 0; a < 3; ++a) {
        if (e.center[a] - e.radii[a] < 0.0 || e.center[a] + e.radii[a] > hi) {
          throw Error(Errc::geometry_overflow, spec.regions[r].name + " exceeds the grid bounds");
        }
      }
      flat.emplace_back(r, e);
    }
  }
  for (std::size_t i = 0; i < flat.size(); ++i) {
    for (std::size_t j = i + 1; j < flat.size(); ++j) {
      const auto& [ri, a] = flat[i];
      const auto& [rj, b] = flat[j];
      const bool nested = ri != rj && detail::all_inside(a, b);
      const bool disjoint = detail::all_outside(a, b) && detail::all_outside(b, a);
      if (!nested && !disjoint) {
        throw Error(Errc::geometry_overflow,
                    spec.regions[ri].name + " overlaps " + spec.regions[rj].name);
      }
    }
  }
}

inline void validate(const PhantomSpec& spec) {
  if (spec.grid_size < 16) throw Error(Errc::invalid_argument, "grid_size must be >= 16");
  if (spec.regions.empty()) throw Error(Errc::invalid_argument, "phantom needs at least one region");
  if (spec.noise_sigma < 0.0) throw Error(Errc::invalid_argument, "noise_sigma must be >= 0");
  for (std::size_t i = 0; i < spec.regions.size(); ++i) {
    const auto& a = spec.regions[i];
    if (a.region_id <= 0) throw Error(Errc::invalid_argument, "region ids must be positive");
    if (!(a.intensity > 0.0)) throw Error(Errc::invalid_argument, "region intensities must be positive");
    for (std::size_t j = i + 1; j < spec.regions.size(); ++j) {
      const auto& b = spec.regions[j];
      if (a.region_id == b.region_id) throw Error(Errc::invalid_argument, "duplicate region id");
      if (std::abs(a.intensity - b.intensity) < 4.0 * spec.noise_sigma) {
        throw Error(Errc::invalid_argument, "intensities of " + a.name + " and " + b.name + " too close");
      }
    }
  }
}

/// Renders one scan. Deterministic in (spec, rates, age, seed); noise is added
/// inside the brain only, background stays exactly zero.
inline VolumeGrid render_volume(const PhantomSpec& spec, std::span<const double> rates, double age,
                                std::uint64_t seed, std::optional<double> noise_sigma = std::nullopt) {
  if (age < spec.min_age || age > spec.max_age) {
    throw Error(Errc::invalid_argument, "age outside the phantom's supported range");
  }
  const auto shapes = shapes_at(spec, rates, age);
  check_geometry(spec, shapes);

  const std::size_t n = spec.grid_size;
  const double sigma = noise_sigma.value_or(spec.noise_sigma);
  const double w = spec.edge_width;
  VolumeGrid vol({n, n, n});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) {
        const std::array<double, 3> p{double(i), double(j), double(k)};
        double value = 0.0;
        bool foreground = false;
        for (std::size_t r = spec.regions.size(); r-- > 0;) {
          double occ = 0.0;
          for (const auto& e : shapes[r]) {
            occ = std::max(occ, 0.5 * (1.0 + std::erf(e.signed_distance(p) / w)));
            foreground = foreground || e.rho(p) <= 1.0;
          }
          value = (1.0 - occ) * value + occ * spec.regions[r].intensity;
        }
        if (foreground && sigma > 0.0) value += sigma * rng.normal();
        vol.at(i, j, k) = static_cast<float>(value);
      }
    }
  }
  return vol;
}

/// Exact labels from the generating geometry.
inline SegmentationMap segment_oracle(const VolumeGrid& volume, const PhantomSpec& spec, std::span<const double> rates,
                                      double age) {
  const std::size_t n = spec.grid_size;
  if (volume.dims() != std::vector<std::size_t>{n, n, n}) {
    throw Error(Errc::shape_mismatch, "volume does not match the phantom grid");
  }
  const auto shapes = shapes_at(spec, rates, age);
  SegmentationMap seg({n, n, n}, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) {
        const std::array<double, 3> p{double(i), double(j), double(k)};
        for (std::size_t r = 0; r < shapes.size(); ++r) {
          const bool inside = std::any_of(shapes[r].begin(), shapes[r].end(),
                                          [&](const Ellipsoid& e) { return e.rho(p) <= 1.0; });
          if (inside) {
            seg.at(i, j, k) = spec.regions[r].region_id;
            break;
          }
        }
      }
    }
  }
  return seg;
}

/// Labels by nearest canonical intensity; values below half the smallest
/// region intensity are background. Used when the geometry is unknown.
inline SegmentationMap segment_by_intensity(const VolumeGrid& volume, const PhantomSpec& spec) {
  if (volume.dims().size() != 3) throw Error(Errc::shape_mismatch, "volume must be rank 3");
  double min_intensity = spec.regions.front().intensity;
  for (const auto& r : spec.regions) min_intensity = std::min(min_intensity, r.intensity);
  const double threshold = 0.5 * min_intensity;
  SegmentationMap seg(volume.dims(), 0);
  for (std::size_t v = 0; v < volume.size(); ++v) {
    const double x = volume[v];
    if (x < threshold) continue;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : spec.regions) {
      const double d = std::abs(x - r.intensity);
      if (d < best) {
        best = d;
        seg[v] = r.region_id;
      }
    }
  }
  return seg;
}

/// Subject-level label: any dementia -> dementia, else any MCI -> MCI, else healthy.
inline Diagnosis label_diagnosis(std::span<const Diagnosis> per_scan) {
  if (per_scan.empty()) throw Error(Errc::empty_sequence, "no per-scan diagnoses");
  bool mci = false;
  for (auto d : per_scan) {
    if (d == Diagnosis::dementia) return Diagnosis::dementia;
    mci = mci || d == Diagnosis::mci;
  }
  return mci ? Diagnosis::mci : Diagnosis::healthy;
}

// ---------------------------------------------------------------------------
// Cohorts

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(Errc::invalid_argument, "unknown split: " + s);
}

struct ScanRecord {
  std::string subject_id;
  double age = 0.0;
  std::string volume_path;
  Diagnosis diagnosis_at_scan = Diagnosis::healthy;
  std::uint64_t noise_seed = 0;
};

struct Subject {
  std::string subject_id;
  Diagnosis diagnosis = Diagnosis::healthy;
  std::vector<double> true_rates;  // per-region multipliers
  std::vector<ScanRecord> scans;
  Split split = Split::train;

  std::vector<double> ages() const {
    std::vector<double> a;
    for (const auto& s : scans) a.push_back(s.age);
    return a;
  }
};

struct Cohort {
  std::string cohort_id;
  PhantomSpec spec;
  std::vector<Subject> subjects;

  std::vector<const Subject*> in_split(Split split) const {
    std::vector<const Subject*> out;
    for (const auto& s : subjects) {
      if (s.split == split) out.push_back(&s);
    }
    return out;
  }
};

struct CohortOptions {
  std::size_t n_subjects = 100;
  std::pair<int, int> scans_per_subject{2, 6};
  std::pair<double, double> age_spacing{0.5, 2.0};
  std::array<double, 3> diagnosis_mix{0.5, 0.3, 0.2};
  std::array<double, 3> split_fractions{0.8, 0.05, 0.15};
  std::array<double, 3> rate_multipliers{1.0, 1.5, 2.0};
  double rate_jitter = 0.1;
  std::pair<double, double> baseline_age{60.0, 85.0};
  std::uint64_t seed = 0;
  std::string cohort_id = "cohort";
};

inline VolumeGrid render_scan(const PhantomSpec& spec, const Subject& subject, const ScanRecord& scan) {
  return render_volume(spec, subject.true_rates, scan.age, scan.noise_seed);
}

inline VolumeGrid render_scan(const Cohort& cohort, const Subject& subject, const ScanRecord& scan) {
  return render_scan(cohort.spec, subject, scan);
}

inline Cohort generate_cohort(const PhantomSpec& spec, const CohortOptions& opt) {
  validate(spec);
  const auto& mix = opt.diagnosis_mix;
  if (std::any_of(mix.begin(), mix.end(), [](double p) { return p < 0.0; }) ||
      std::abs(mix[0] + mix[1] + mix[2] - 1.0) > 1e-9) {
    throw Error(Errc::invalid_argument, "diagnosis proportions must be non-negative and sum to 1");
  }
  const auto& sp = opt.split_fractions;
  if (std::any_of(sp.begin(), sp.end(), [](double p) { return p < 0.0; }) ||
      std::abs(sp[0] + sp[1] + sp[2] - 1.0) > 1e-9) {
    throw Error(Errc::invalid_argument, "split fractions must be non-negative and sum to 1");
  }
  auto [smin, smax] = opt.scans_per_subject;
  auto [gmin, gmax] = opt.age_spacing;
  if (smin < 1 || smax < smin) throw Error(Errc::invalid_argument, "invalid scans_per_subject range");
  if (!(gmin > 0.0) || gmax < gmin) throw Error(Errc::invalid_argument, "invalid age_spacing range");
  if (opt.baseline_age.first < spec.min_age ||
      opt.baseline_age.second + (smax - 1) * gmax > spec.max_age) {
    throw Error(Errc::invalid_argument, "scan ages would leave the supported age range");
  }

  Cohort cohort;
  cohort.cohort_id = opt.cohort_id;
  cohort.spec = spec;
  Rng rng(derive_seed(opt.seed, {0}));
  for (std::size_t s = 0; s < opt.n_subjects; ++s) {
    Subject subj;
    char id[32];
    std::snprintf(id, sizeof id, "S%04zu", s + 1);
    subj.subject_id = id;

    const double u = rng.uniform();
    const auto dx = u < mix[0] ? Diagnosis::healthy : (u < mix[0] + mix[1] ? Diagnosis::mci : Diagnosis::dementia);
    const double base = opt.rate_multipliers[static_cast<int>(dx)];
    for (std::size_t r = 0; r < spec.regions.size(); ++r) {
      subj.true_rates.push_back(base * (1.0 + rng.uniform(-opt.rate_jitter, opt.rate_jitter)));
    }

    const int n_scans = rng.uniform_int(smin, smax);
    double age = rng.uniform(opt.baseline_age.first, opt.baseline_age.second);
    // Per-scan diagnoses progress monotonically to the subject's final state.
    const int onset = rng.uniform_int(0, n_scans - 1);
    const int mci_onset = dx == Diagnosis::dementia ? rng.uniform_int(0, onset) : onset;
    std::vector<Diagnosis> per_scan;
    for (int k = 0; k < n_scans; ++k) {
      if (k > 0) age += rng.uniform(gmin, gmax);
      Diagnosis d = Diagnosis::healthy;
      if (dx == Diagnosis::mci && k >= onset) d = Diagnosis::mci;
      if (dx == Diagnosis::dementia) d = k >= onset ? Diagnosis::dementia : (k >= mci_onset ? Diagnosis::mci : d);
      ScanRecord rec;
      rec.subject_id = subj.subject_id;
      rec.age = age;
      rec.diagnosis_at_scan = d;
      rec.noise_seed = derive_seed(opt.seed, {1, s, static_cast<std::uint64_t>(k)});
      char path[64];
      std::snprintf(path, sizeof path, "volumes/%s_%02d.mrxt", id, k);
      rec.volume_path = path;
      subj.scans.push_back(rec);
      per_scan.push_back(d);
    }
    subj.diagnosis = label_diagnosis(per_scan);
    check_geometry(spec, shapes_at(spec, subj.true_rates, subj.scans.front().age));
    check_geometry(spec, shapes_at(spec, subj.true_rates, subj.scans.back().age));
    cohort.subjects.push_back(std::move(subj));
  }

  std::vector<std::size_t> order(opt.n_subjects);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const auto n_train = static_cast<std::size_t>(std::llround(sp[0] * opt.n_subjects));
  const auto n_val = std::min(opt.n_subjects - n_train, static_cast<std::size_t>(std::llround(sp[1] * opt.n_subjects)));
  for (std::size_t i = 0; i < order.size(); ++i) {
    cohort.subjects[order[i]].split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  }
  return cohort;
}

}  // namespace mrextrap
