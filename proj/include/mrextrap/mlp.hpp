#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mrextrap/optim.hpp"
#include "mrextrap/rng.hpp"

namespace mrextrap {

/// out = W2 tanh(W1 x + b1) + b2, columns are samples.
class Mlp {
 public:
  Mlp() = default;
  Mlp(Eigen::Index inputs, Eigen::Index hidden, Eigen::Index outputs) {
    params_.add("w1", hidden, inputs);
    params_.add("b1", hidden, 1);
    params_.add("w2", outputs, hidden);
    params_.add("b2", outputs, 1);
  }

  /// Hidden weights ~ N(0, 1/fan_in); output layer starts at zero so the
  /// initial output equals b2.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    auto& w1 = params_["w1"];
    fill_normal(w1, rng, 1.0 / std::sqrt(static_cast<double>(w1.cols())));
    params_["b1"].setZero();
    params_["w2"].setZero();
    params_["b2"].setZero();
  }

  Eigen::Index inputs() const { return params_["w1"].cols(); }
  Eigen::Index outputs() const { return params_["w2"].rows(); }

  Mat<double> forward(const Mat<double>& x, Mat<double>* hidden = nullptr) const {
    return forward_with(params_, x, hidden);
  }

  static Mat<double> forward_with(const ParamSet<double>& p, const Mat<double>& x, Mat<double>* hidden) {
    Mat<double> h = ((p["w1"] * x).colwise() + p["b1"].col(0)).array().tanh();
    Mat<double> out = (p["w2"] * h).colwise() + p["b2"].col(0);
    if (hidden) *hidden = std::move(h);
    return out;
  }

  /// Parameter gradients for upstream gradient d_out (same shape as forward output).
  ParamSet<double> backward(const Mat<double>& x, const Mat<double>& hidden, const Mat<double>& d_out,
                            Mat<double>* d_input = nullptr) const {
    ParamSet<double> g = params_.zeros_like();
    g["w2"].noalias() = d_out * hidden.transpose();
    g["b2"] = d_out.rowwise().sum();
    Mat<double> d_pre = (params_["w2"].transpose() * d_out).array() * (1.0 - hidden.array().square());
    g["w1"].noalias() = d_pre * x.transpose();
    g["b1"] = d_pre.rowwise().sum();
    if (d_input) *d_input = params_["w1"].transpose() * d_pre;
    return g;
  }

  ParamSet<double>& params() { return params_; }
  const ParamSet<double>& params() const { return params_; }

 private:
  ParamSet<double> params_;
};

/// Per-feature affine standardisation fitted on training columns.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Mat<double>& columns) {
    Standardizer s;
    s.mean = columns.rowwise().mean();
    s.scale.resize(columns.rows());
    for (Eigen::Index r = 0; r < columns.rows(); ++r) {
      const double var = (columns.row(r).array() - s.mean(r)).square().mean();
      s.scale(r) = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Mat<double> apply(const Mat<double>& x) const {
    return (x.colwise() - mean).array().colwise() / scale.array();
  }
  Mat<double> invert(const Mat<double>& y) const {
    return (y.array().colwise() * scale.array()).colwise() + mean.array();
  }
};

}  // namespace mrextrap
