#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mrextrap/core.hpp"
#include "mrextrap/rng.hpp"
#include "mrextrap/tensor_io.hpp"

namespace mrextrap {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

/// Named list of parameter matrices (vectors are n x 1).
template <typename T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Mat<T>> values;

  Mat<T>& add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    names.push_back(std::move(name));
    values.push_back(Mat<T>::Zero(rows, cols));
    return values.back();
  }

  Mat<T>& operator[](const std::string& name) { return values[index_of(name)]; }
  const Mat<T>& operator[](const std::string& name) const { return values[index_of(name)]; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return i;
    }
    throw Error(Errc::invalid_argument, "unknown parameter: " + name);
  }

  ParamSet zeros_like() const {
    ParamSet z;
    z.names = names;
    for (const auto& v : values) z.values.push_back(Mat<T>::Zero(v.rows(), v.cols()));
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += static_cast<std::size_t>(v.size());
    return n;
  }

  bool operator==(const ParamSet& o) const {
    if (names != o.names || values.size() != o.values.size()) return false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].rows() != o.values[i].rows() || values[i].cols() != o.values[i].cols()) return false;
      if (values[i] != o.values[i]) return false;
    }
    return true;
  }
};

template <typename T>
void fill_normal(Mat<T>& m, Rng& rng, double stddev) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<T>(stddev * rng.normal());
  }
}

/// RMSProp: per-parameter step lr * g / (sqrt(E[g^2]) + eps), no momentum.
/// E[g^2] is bias-corrected for its zero start, as in Adam.
template <typename T>
class RmsProp {
 public:
  RmsProp(double learning_rate, double decay = 0.99, double eps = 1e-8)
      : lr_(learning_rate), decay_(decay), eps_(eps) {}

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

  void step(ParamSet<T>& params, const ParamSet<T>& grads) {
    if (mean_square_.empty()) {
      for (const auto& v : params.values) mean_square_.push_back(Mat<T>::Zero(v.rows(), v.cols()));
    }
    ++steps_;
    const T d = static_cast<T>(decay_), lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    const T correction = static_cast<T>(1.0 / (1.0 - std::pow(decay_, static_cast<double>(steps_))));
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      auto& ms = mean_square_[i];
      const auto& g = grads.values[i];
      ms = d * ms + (T(1) - d) * g.cwiseProduct(g);
      params.values[i].array() -= lr * g.array() / ((correction * ms.array()).sqrt() + eps);
    }
  }

 private:
  double lr_, decay_, eps_;
  std::uint64_t steps_ = 0;
  std::vector<Mat<T>> mean_square_;
};

/// Cosine decay from `base` at step 0 to zero at `total` steps.
inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * f));
}

/// shadow <- decay * shadow + (1 - decay) * current
template <typename T>
void ema_update(ParamSet<T>& shadow, const ParamSet<T>& current, double decay) {
  if (!(decay > 0.0 && decay < 1.0)) throw Error(Errc::invalid_argument, "EMA decay must be in (0, 1)");
  for (std::size_t i = 0; i < shadow.values.size(); ++i) {
    shadow.values[i] = static_cast<T>(decay) * shadow.values[i] + static_cast<T>(1.0 - decay) * current.values[i];
  }
}

template <typename T>
io::RawTensor matrix_to_raw(const Mat<T>& m) {
  io::RawTensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(static_cast<float>(m(r, c)));
  }
  return t;
}

template <typename T>
Mat<T> raw_to_matrix(const io::RawTensor& t) {
  if (t.dims.size() != 2) throw Error(Errc::shape_mismatch, "parameter tensors are rank 2");
  Mat<T> m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<T>(t.values[i++]);
  }
  return m;
}

template <typename T>
io::NamedTensors to_named_tensors(const ParamSet<T>& p, const std::string& prefix = "") {
  io::NamedTensors out;
  for (std::size_t i = 0; i < p.names.size(); ++i) out.emplace_back(prefix + p.names[i], matrix_to_raw(p.values[i]));
  return out;
}

/// Loads every parameter of `p` (shapes must match) from a container.
template <typename T>
void load_named_tensors(ParamSet<T>& p, const io::NamedTensors& entries, const std::string& prefix = "") {
  for (std::size_t i = 0; i < p.names.size(); ++i) {
    Mat<T> m = raw_to_matrix<T>(io::find_tensor(entries, prefix + p.names[i]));
    if (m.rows() != p.values[i].rows() || m.cols() != p.values[i].cols()) {
      throw Error(Errc::shape_mismatch, "checkpoint shape mismatch for " + p.names[i]);
    }
    p.values[i] = std::move(m);
  }
}

}  // namespace mrextrap
