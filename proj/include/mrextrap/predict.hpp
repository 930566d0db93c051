#pragma once

// Scan prediction: encode observed scans, pick a progression rate from one of
// the belief sources, extrapolate from the most recent scan and decode.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrextrap/autoencoder.hpp"
#include "mrextrap/core.hpp"
#include "mrextrap/diffusion.hpp"
#include "mrextrap/gaussian_prior.hpp"
#include "mrextrap/progression.hpp"

namespace mrextrap {

enum class BeliefSource { global_prior, gaussian_net, diffusion, regression, posterior };

inline const char* to_string(BeliefSource s) {
  switch (s) {
    case BeliefSource::global_prior: return "global_prior";
    case BeliefSource::gaussian_net: return "gaussian_net";
    case BeliefSource::diffusion: return "diffusion";
    case BeliefSource::regression: return "regression";
    case BeliefSource::posterior: return "posterior";
  }
  return "?";
}

inline BeliefSource belief_source_from_string(const std::string& s) {
  for (auto b : {BeliefSource::global_prior, BeliefSource::gaussian_net, BeliefSource::diffusion,
                 BeliefSource::regression, BeliefSource::posterior}) {
    if (s == to_string(b)) return b;
  }
  throw Error(Errc::invalid_argument, "unknown belief source: " + s);
}

/// Fitted components a prediction may draw on. Unset pointers are only an
/// error when the selected source needs them.
struct PredictionContext {
  const GaussianBelief* global_prior = nullptr;
  const ObservationNoise* obs_noise = nullptr;
  const GaussianPriorNet* gaussian_net = nullptr;
  const DiffusionDenoiser* diffusion = nullptr;
  const NoiseSchedule* schedule = nullptr;
  int diffusion_samples = 5;
  std::uint64_t seed = 0;
};

template <typename P>
const P& require(const P* p, const char* stage) {
  if (!p) throw Error(Errc::missing_dependency, std::string("requires ") + stage);
  return *p;
}

/// Rate for a subject observed at (latents, ages). The posterior source
/// anchors the likelihood on the earliest scan and starts from the global
/// prior; the single-scan sources condition on the latest scan.
inline Beta resolve_beta(std::span<const LatentGrid> latents, std::span<const double> ages, BeliefSource source,
                         const PredictionContext& ctx) {
  if (latents.empty() || latents.size() != ages.size()) {
    throw Error(Errc::insufficient_data, "prediction needs at least one scan with an age");
  }
  const auto latest = static_cast<std::size_t>(std::max_element(ages.begin(), ages.end()) - ages.begin());
  const auto first = static_cast<std::size_t>(std::min_element(ages.begin(), ages.end()) - ages.begin());
  switch (source) {
    case BeliefSource::global_prior:
      return require(ctx.global_prior, "fit-global-prior").mean;
    case BeliefSource::gaussian_net:
      return predict_gaussian_prior(require(ctx.gaussian_net, "fit-gaussian-prior"), latents[latest], ages[latest]).mean;
    case BeliefSource::diffusion: {
      const auto& den = require(ctx.diffusion, "fit-diffusion-prior");
      const NoiseSchedule s = ctx.schedule ? *ctx.schedule : den.config().schedule();
      return sample_beta_averaged(den, s, latents[latest], ages[latest], ctx.diffusion_samples, ctx.seed);
    }
    case BeliefSource::regression:
      if (latents.size() < 2) throw Error(Errc::insufficient_data, "regression source needs at least two scans");
      return compute_beta(latents, ages);
    case BeliefSource::posterior: {
      std::vector<LatentObservation> obs;
      for (std::size_t i = 0; i < latents.size(); ++i) {
        if (i != first) obs.push_back({latents[i], ages[i]});
      }
      return posterior_update(require(ctx.global_prior, "fit-global-prior"), latents[first], ages[first], obs,
                              require(ctx.obs_noise, "fit-global-prior"))
          .mean;
    }
  }
  throw Error(Errc::invalid_argument, "unknown belief source");
}

inline LatentGrid predict_latent(std::span<const LatentGrid> latents, std::span<const double> ages,
                                 BeliefSource source, double target_age, const PredictionContext& ctx) {
  const Beta beta = resolve_beta(latents, ages, source, ctx);
  const auto latest = static_cast<std::size_t>(std::max_element(ages.begin(), ages.end()) - ages.begin());
  return extrapolate(latents[latest], ages[latest], beta, target_age);
}

struct ObservedScan {
  VolumeGrid volume;
  double age = 0.0;
};

template <typename T>
VolumeGrid predict_scan(const Autoencoder<T>& model, std::span<const ObservedScan> scans, BeliefSource source,
                        double target_age, const PredictionContext& ctx) {
  if (scans.empty()) throw Error(Errc::insufficient_data, "prediction needs at least one scan");
  std::vector<LatentGrid> latents;
  std::vector<double> ages;
  for (const auto& s : scans) {
    latents.push_back(model.encode(s.volume).mean);
    ages.push_back(s.age);
  }
  return model.decode(predict_latent(latents, ages, source, target_age, ctx));
}

}  // namespace mrextrap
