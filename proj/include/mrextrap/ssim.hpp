#pragma once

// Volumetric SSIM: mean of local SSIM over every w^3 window (stride 1) with
// uniform weights and population moments. Window sums are computed with
// separable running sums, so value and gradient are both O(voxels).

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "mrextrap/core.hpp"

namespace mrextrap {

struct SsimOptions {
  std::size_t window = 7;
  double dynamic_range = 1.0;
};

namespace detail {

using Dims3 = std::array<std::size_t, 3>;

// Applies a 1D line transform along `axis`, changing that axis' length to out_len.
template <typename LineFn>
std::vector<double> along_axis(const std::vector<double>& in, const Dims3& dims, int axis, std::size_t out_len,
                               LineFn fn) {
  Dims3 od = dims;
  od[axis] = out_len;
  std::vector<double> out(od[0] * od[1] * od[2], 0.0);
  const std::size_t in_stride = axis == 0 ? dims[1] * dims[2] : (axis == 1 ? dims[2] : 1);
  const std::size_t out_stride = axis == 0 ? od[1] * od[2] : (axis == 1 ? od[2] : 1);
  std::vector<double> line(dims[axis]), res(out_len);
  // Iterate over all positions with the axis coordinate fixed at 0.
  Dims3 ranges = dims;
  ranges[axis] = 1;
  for (std::size_t i = 0; i < ranges[0]; ++i) {
    for (std::size_t j = 0; j < ranges[1]; ++j) {
      for (std::size_t k = 0; k < ranges[2]; ++k) {
        const std::size_t ib = (i * dims[1] + j) * dims[2] + k;
        const std::size_t ob = (i * od[1] + j) * od[2] + k;
        for (std::size_t t = 0; t < dims[axis]; ++t) line[t] = in[ib + t * in_stride];
        fn(line, res);
        for (std::size_t t = 0; t < out_len; ++t) out[ob + t * out_stride] = res[t];
      }
    }
  }
  return out;
}

// Window sums over valid positions: out[o] = sum in[o .. o+w-1].
inline std::vector<double> box_valid(std::vector<double> data, Dims3 dims, std::size_t w) {
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t m = dims[axis] - w + 1;
    data = along_axis(data, dims, axis, m, [w, m](const std::vector<double>& line, std::vector<double>& out) {
      double s = 0.0;
      for (std::size_t t = 0; t < w; ++t) s += line[t];
      out[0] = s;
      for (std::size_t o = 1; o < m; ++o) {
        s += line[o + w - 1] - line[o - 1];
        out[o] = s;
      }
    });
    dims[axis] = m;
  }
  return data;
}

// Adjoint of box_valid: every voxel receives the sum of the windows covering it.
inline std::vector<double> box_adjoint(std::vector<double> data, Dims3 full, std::size_t w) {
  Dims3 dims{full[0] - w + 1, full[1] - w + 1, full[2] - w + 1};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t n = full[axis];
    const std::size_t m = dims[axis];
    data = along_axis(data, dims, axis, n, [w, m, n](const std::vector<double>& line, std::vector<double>& out) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (i < m) s += line[i];
        if (i >= w) s -= line[i - w];
        out[i] = s;
      }
    });
    dims[axis] = n;
  }
  return data;
}

template <typename T>
double ssim_impl(std::span<const T> x, std::span<const T> y, const std::vector<std::size_t>& shape,
                 const SsimOptions& opt, std::span<double> grad_y) {
  if (shape.size() != 3) throw Error(Errc::shape_mismatch, "ssim3d expects rank-3 volumes");
  if (x.size() != y.size()) throw Error(Errc::shape_mismatch, "ssim3d operands differ in size");
  if (!(opt.dynamic_range > 0.0)) throw Error(Errc::invalid_argument, "dynamic_range must be positive");
  const Dims3 dims{shape[0], shape[1], shape[2]};
  const std::size_t w = opt.window;
  if (w == 0 || w > dims[0] || w > dims[1] || w > dims[2]) {
    throw Error(Errc::window_too_large, "SSIM window larger than the volume");
  }
  const std::size_t nvox = x.size();
  std::vector<double> xv(x.begin(), x.end()), yv(y.begin(), y.end());
  std::vector<double> xx(nvox), yy(nvox), xy(nvox);
  for (std::size_t i = 0; i < nvox; ++i) {
    xx[i] = xv[i] * xv[i];
    yy[i] = yv[i] * yv[i];
    xy[i] = xv[i] * yv[i];
  }
  const auto sx = box_valid(xv, dims, w);
  const auto sy = box_valid(yv, dims, w);
  const auto sxx = box_valid(xx, dims, w);
  const auto syy = box_valid(yy, dims, w);
  const auto sxy = box_valid(xy, dims, w);

  const double n = static_cast<double>(w * w * w);
  const double c1 = (0.01 * opt.dynamic_range) * (0.01 * opt.dynamic_range);
  const double c2 = (0.03 * opt.dynamic_range) * (0.03 * opt.dynamic_range);
  const std::size_t nwin = sx.size();
  const bool want_grad = !grad_y.empty();
  std::vector<double> g1, g2, g3;
  if (want_grad) {
    g1.resize(nwin);
    g2.resize(nwin);
    g3.resize(nwin);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < nwin; ++i) {
    const double mx = sx[i] / n, my = sy[i] / n;
    const double vx = sxx[i] / n - mx * mx;
    const double vy = syy[i] / n - my * my;
    const double cxy = sxy[i] / n - mx * my;
    const double a1 = 2.0 * mx * my + c1, a2 = 2.0 * cxy + c2;
    const double b1 = mx * mx + my * my + c1, b2 = vx + vy + c2;
    const double s = a1 * a2 / (b1 * b2);
    total += s;
    if (want_grad) {
      const double d_my = 2.0 * mx * a2 / (b1 * b2) - s * 2.0 * my / b1;
      const double d_vy = -s / b2;
      const double d_cxy = 2.0 * a1 / (b1 * b2);
      g1[i] = (d_my - 2.0 * my * d_vy - mx * d_cxy) / n;
      g2[i] = d_vy / n;
      g3[i] = d_cxy / n;
    }
  }
  const double m = static_cast<double>(nwin);
  if (want_grad) {
    if (grad_y.size() != nvox) throw Error(Errc::shape_mismatch, "gradient buffer size");
    const auto a1 = box_adjoint(std::move(g1), dims, w);
    const auto a2 = box_adjoint(std::move(g2), dims, w);
    const auto a3 = box_adjoint(std::move(g3), dims, w);
    for (std::size_t v = 0; v < nvox; ++v) {
      grad_y[v] = (a1[v] + 2.0 * yv[v] * a2[v] + xv[v] * a3[v]) / m;
    }
  }
  return total / m;
}

}  // namespace detail

template <typename T>
double ssim3d(std::span<const T> x, std::span<const T> y, const std::vector<std::size_t>& shape,
              const SsimOptions& opt = {}) {
  return detail::ssim_impl<T>(x, y, shape, opt, {});
}

inline double ssim3d(const VolumeGrid& x, const VolumeGrid& y, const SsimOptions& opt = {}) {
  require_same_shape(x, y, "ssim3d operands differ in shape");
  return ssim3d<float>(x.values(), y.values(), x.dims(), opt);
}

/// SSIM(x, y) and its gradient with respect to y.
template <typename T>
double ssim3d_with_gradient(std::span<const T> x, std::span<const T> y, const std::vector<std::size_t>& shape,
                            std::span<double> grad_y, const SsimOptions& opt = {}) {
  return detail::ssim_impl<T>(x, y, shape, opt, grad_y);
}

}  // namespace mrextrap
