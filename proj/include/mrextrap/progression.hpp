#pragma once

// Linear progression in latent space: per-subject rate estimation, the
// population prior, observation noise, conjugate posterior updates and
// extrapolation. Every latent element is treated independently.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrextrap/core.hpp"

namespace mrextrap {

/// Elementwise Gaussian over progression rates (diagonal covariance).
struct GaussianBelief {
  Beta mean;
  Beta variance;
};

struct TrainingTriplet {
  LatentGrid latent;
  double age = 0.0;
  Beta beta;
  std::string subject_id;
};

struct ObservationNoise {
  Beta variance;
};

struct SubjectTrajectory {
  std::string subject_id;
  std::vector<LatentGrid> latents;
  std::vector<double> ages;
};

struct LatentObservation {
  LatentGrid latent;
  double age = 0.0;
};

/// Exact minimiser of sum_k |dz_k - beta * da_k| over beta: the |da|-weighted
/// median of the slopes dz_k / da_k. An exact half-weight split resolves to the
/// lower slope. Pairs with da = 0 carry no weight.
inline double l1_slope_no_intercept(std::span<const double> delta_age, std::span<const double> delta_z) {
  if (delta_age.size() != delta_z.size()) throw Error(Errc::shape_mismatch, "pair lists differ in length");
  std::vector<std::pair<double, double>> cand;  // (slope, weight)
  cand.reserve(delta_age.size());
  double total = 0.0;
  for (std::size_t k = 0; k < delta_age.size(); ++k) {
    const double w = std::abs(delta_age[k]);
    if (w == 0.0) continue;
    cand.emplace_back(delta_z[k] / delta_age[k], w);
    total += w;
  }
  if (cand.empty()) throw Error(Errc::insufficient_data, "no pair with a non-zero age difference");
  std::sort(cand.begin(), cand.end());
  double cum = 0.0;
  for (const auto& [slope, w] : cand) {
    cum += w;
    if (2.0 * cum >= total) return slope;
  }
  return cand.back().first;
}

inline double l1_objective(std::span<const double> delta_age, std::span<const double> delta_z, double beta) {
  double s = 0.0;
  for (std::size_t k = 0; k < delta_age.size(); ++k) s += std::abs(delta_z[k] - beta * delta_age[k]);
  return s;
}

/// Subject progression rate from all ordered scan pairs (j != i) by no-intercept
/// L1 regression of latent differences on age differences.
inline Beta compute_beta(std::span<const LatentGrid> latents, std::span<const double> ages) {
  if (latents.size() != ages.size()) throw Error(Errc::invalid_argument, "latents and ages differ in count");
  if (latents.size() < 2) throw Error(Errc::insufficient_data, "at least two scans are required");
  for (std::size_t i = 0; i < ages.size(); ++i) {
    for (std::size_t j = i + 1; j < ages.size(); ++j) {
      if (ages[i] == ages[j]) throw Error(Errc::duplicate_age, "two scans share an age");
    }
    require_same_shape(latents[i], latents.front(), "latents differ in shape");
  }
  const std::size_t n = latents.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> da;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      pairs.emplace_back(i, j);
      da.push_back(ages[j] - ages[i]);
    }
  }
  Beta beta(latents.front().dims());
  std::vector<double> dz(pairs.size());
  for (std::size_t e = 0; e < beta.size(); ++e) {
    for (std::size_t p = 0; p < pairs.size(); ++p) dz[p] = latents[pairs[p].second][e] - latents[pairs[p].first][e];
    beta[e] = l1_slope_no_intercept(da, dz);
  }
  return beta;
}

/// One triplet per scan of every subject with at least two scans, all sharing
/// the subject's rate.
inline std::vector<TrainingTriplet> make_triplets(std::span<const SubjectTrajectory> subjects) {
  std::vector<TrainingTriplet> out;
  for (const auto& s : subjects) {
    if (s.latents.size() < 2) continue;
    const Beta beta = compute_beta(s.latents, s.ages);
    for (std::size_t i = 0; i < s.latents.size(); ++i) out.push_back({s.latents[i], s.ages[i], beta, s.subject_id});
  }
  return out;
}

/// Elementwise mean and population variance (denominator N) of the
/// triplets' rates, variance floored at kVarianceFloor.
inline GaussianBelief build_global_prior(std::span<const TrainingTriplet> triplets) {
  if (triplets.size() < 2) throw Error(Errc::insufficient_data, "global prior needs at least two triplets");
  const auto& dims = triplets.front().beta.dims();
  GaussianBelief g{Beta(dims, 0.0), Beta(dims, 0.0)};
  const double n = static_cast<double>(triplets.size());
  for (const auto& t : triplets) {
    require_same_shape(t.beta, g.mean, "triplet rates differ in shape");
    for (std::size_t e = 0; e < g.mean.size(); ++e) g.mean[e] += t.beta[e];
  }
  for (std::size_t e = 0; e < g.mean.size(); ++e) g.mean[e] /= n;
  for (const auto& t : triplets) {
    for (std::size_t e = 0; e < g.mean.size(); ++e) {
      const double d = t.beta[e] - g.mean[e];
      g.variance[e] += d * d;
    }
  }
  for (std::size_t e = 0; e < g.variance.size(); ++e) g.variance[e] = std::max(g.variance[e] / n, kVarianceFloor);
  return g;
}

/// Diagonal covariance of residuals z_j - (z_0 + beta_s (a_j - a_0)) pooled over
/// subjects s and their non-anchor timepoints j, where (z_0, a_0) is the first scan.
inline ObservationNoise estimate_obs_noise(std::span<const TrainingTriplet> triplets,
                                           std::span<const SubjectTrajectory> subjects) {
  std::map<std::string, const Beta*> rates;
  for (const auto& t : triplets) rates.emplace(t.subject_id, &t.beta);
  std::vector<std::vector<double>> residuals;
  std::vector<std::size_t> dims;
  for (const auto& s : subjects) {
    if (s.latents.size() < 2) continue;
    auto it = rates.find(s.subject_id);
    if (it == rates.end()) continue;
    const Beta& beta = *it->second;
    const LatentGrid& z0 = s.latents.front();
    require_same_shape(beta, z0, "rate and latent shapes differ");
    dims = z0.dims();
    for (std::size_t j = 1; j < s.latents.size(); ++j) {
      std::vector<double> r(z0.size());
      const double da = s.ages[j] - s.ages.front();
      for (std::size_t e = 0; e < r.size(); ++e) r[e] = s.latents[j][e] - (z0[e] + beta[e] * da);
      residuals.push_back(std::move(r));
    }
  }
  if (residuals.empty()) throw Error(Errc::insufficient_data, "no subject with two or more scans and a rate");
  const double n = static_cast<double>(residuals.size());
  Beta mean(dims, 0.0), var(dims, 0.0);
  for (const auto& r : residuals) {
    for (std::size_t e = 0; e < r.size(); ++e) mean[e] += r[e] / n;
  }
  for (const auto& r : residuals) {
    for (std::size_t e = 0; e < r.size(); ++e) var[e] += (r[e] - mean[e]) * (r[e] - mean[e]) / n;
  }
  for (auto& v : var.values()) v = std::max(v, kVarianceFloor);
  return {std::move(var)};
}

/// Conjugate update of a diagonal Gaussian prior over the rate given
/// observations z_j ~ N(z + beta (a_j - a), sigma_obs^2) anchored at (z, a).
inline GaussianBelief posterior_update(const GaussianBelief& prior, const LatentGrid& anchor, double anchor_age,
                                       std::span<const LatentObservation> observations,
                                       const ObservationNoise& noise) {
  require_same_shape(prior.mean, prior.variance, "prior mean/variance shapes differ");
  require_same_shape(prior.mean, anchor, "prior and anchor shapes differ");
  require_same_shape(prior.mean, noise.variance, "prior and noise shapes differ");
  for (const auto& o : observations) {
    if (o.age == anchor_age) throw Error(Errc::age_collision, "observation age equals the anchor age");
    require_same_shape(o.latent, anchor, "observation and anchor shapes differ");
  }
  if (observations.empty()) return prior;
  GaussianBelief post{Beta(prior.mean.dims()), Beta(prior.mean.dims())};
  for (std::size_t e = 0; e < prior.mean.size(); ++e) {
    double precision = 1.0 / prior.variance[e];
    double info = prior.mean[e] / prior.variance[e];
    for (const auto& o : observations) {
      const double da = o.age - anchor_age;
      precision += da * da / noise.variance[e];
      info += da * (o.latent[e] - anchor[e]) / noise.variance[e];
    }
    post.variance[e] = 1.0 / precision;
    post.mean[e] = post.variance[e] * info;
  }
  return post;
}

/// z* = z_N + beta (a* - a_N)
inline LatentGrid extrapolate(const LatentGrid& anchor, double anchor_age, const Beta& beta, double target_age) {
  require_same_shape(anchor, beta, "anchor and rate shapes differ");
  LatentGrid out(anchor.dims());
  const double da = target_age - anchor_age;
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = anchor[e] + beta[e] * da;
  return out;
}

}  // namespace mrextrap
