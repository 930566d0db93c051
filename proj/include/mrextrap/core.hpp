#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mrextrap {

enum class Errc {
  invalid_argument,
  shape_mismatch,
  geometry_overflow,
  insufficient_data,
  duplicate_age,
  age_collision,
  non_finite,
  divergence,
  bad_magic,
  version_mismatch,
  truncated_payload,
  unsupported_dtype,
  missing_dependency,
  invalid_config,
  no_eligible_subjects,
  empty_sequence,
  unknown_label,
  degenerate_input,
  invalid_schedule,
  window_too_large,
  io,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::geometry_overflow: return "geometry-overflow";
    case Errc::insufficient_data: return "insufficient-data";
    case Errc::duplicate_age: return "duplicate-age";
    case Errc::age_collision: return "age-collision";
    case Errc::non_finite: return "non-finite";
    case Errc::divergence: return "divergence";
    case Errc::bad_magic: return "bad-magic";
    case Errc::version_mismatch: return "version-mismatch";
    case Errc::truncated_payload: return "truncated-payload";
    case Errc::unsupported_dtype: return "dtype-unsupported";
    case Errc::missing_dependency: return "missing-dependency";
    case Errc::invalid_config: return "invalid-config";
    case Errc::no_eligible_subjects: return "no-eligible-subjects";
    case Errc::empty_sequence: return "empty-sequence";
    case Errc::unknown_label: return "unknown-label";
    case Errc::degenerate_input: return "degenerate-input";
    case Errc::invalid_schedule: return "invalid-schedule";
    case Errc::window_too_large: return "window-too-large";
    case Errc::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Dense row-major grid with a phantom tag so that volumes, latents and
/// progression rates do not mix silently.
template <typename T, typename Tag>
class Grid {
 public:
  using value_type = T;
  using tag_type = Tag;

  Grid() = default;

  explicit Grid(std::vector<std::size_t> dims, T fill = T{})
      : dims_(std::move(dims)), values_(element_count(dims_), fill) {}

  Grid(std::vector<std::size_t> dims, std::vector<T> values)
      : dims_(std::move(dims)), values_(std::move(values)) {
    if (values_.size() != element_count(dims_)) {
      throw Error(Errc::shape_mismatch, "value count does not match grid dimensions");
    }
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::vector<T>& storage() noexcept { return values_; }
  const std::vector<T>& storage() const noexcept { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  // 3D access for the trailing three axes of a rank-3 grid.
  T& at(std::size_t i, std::size_t j, std::size_t k) { return values_[(i * dims_[1] + j) * dims_[2] + k]; }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[(i * dims_[1] + j) * dims_[2] + k];
  }

  template <typename U, typename OtherTag>
  bool same_shape(const Grid<U, OtherTag>& other) const noexcept {
    return dims_ == other.dims();
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.dims_ == b.dims_ && a.values_ == b.values_;
  }

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<T> values_;
};

struct VolumeTag {};
struct LatentTag {};
struct BetaTag {};
struct LabelTag {};

using VolumeGrid = Grid<float, VolumeTag>;
using LatentGrid = Grid<double, LatentTag>;
using Beta = Grid<double, BetaTag>;
using SegmentationMap = Grid<std::int32_t, LabelTag>;

/// Converts between grid kinds of identical shape (value type and tag may differ).
template <typename To, typename From>
To grid_cast(const From& from) {
  std::vector<typename To::value_type> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    out[i] = static_cast<typename To::value_type>(from[i]);
  }
  return To(from.dims(), std::move(out));
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (!a.same_shape(b)) throw Error(Errc::shape_mismatch, what);
}

template <typename G>
bool all_finite(const G& g) {
  for (auto v : g.values()) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

inline constexpr double kVarianceFloor = 1e-8;

/// Age normalisation shared by the learned priors.
inline double normalize_age(double age) { return (age - 70.0) / 15.0; }

}  // namespace mrextrap
