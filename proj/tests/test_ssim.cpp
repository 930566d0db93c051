#include <gtest/gtest.h>

#include <random>

#include "mrextrap/phantom.hpp"
#include "mrextrap/ssim.hpp"
#include "oracles.hpp"

using namespace mrextrap;

namespace {

std::vector<double> random_volume(std::size_t n, std::uint32_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(gen);
  return v;
}

}  // namespace

TEST(Ssim, IdenticalVolumesScoreOne) {
  const std::vector<std::size_t> shape{9, 10, 8};
  const auto x = random_volume(9 * 10 * 8, 1);
  EXPECT_NEAR(ssim3d<double>(x, x, shape), 1.0, 1e-12);
  const auto vol = render_volume(default_phantom_spec(), std::vector<double>(4, 1.0), 70.0, 3);
  EXPECT_NEAR(ssim3d(vol, vol), 1.0, 1e-12);
}

TEST(Ssim, ConstantVersusConstantPlusRangeIsLow) {
  const std::vector<std::size_t> shape{8, 8, 8};
  const std::vector<double> zero(512, 0.0), one(512, 1.0);
  const double s = ssim3d<double>(zero, one, shape);
  EXPECT_LT(s, 0.5);
  // Constant windows: structure term is 1, luminance term is C1 / (1 + C1).
  const double c1 = 1e-4;
  EXPECT_NEAR(s, c1 / (1.0 + c1), 1e-12);
}

TEST(Ssim, MatchesPerWindowOracle) {
  const std::array<std::size_t, 3> d{9, 8, 10};
  const auto x = random_volume(d[0] * d[1] * d[2], 11);
  const auto y = random_volume(d[0] * d[1] * d[2], 12, -0.2, 1.3);
  for (std::size_t w : {1u, 3u, 7u}) {
    SsimOptions opt;
    opt.window = w;
    opt.dynamic_range = w == 3 ? 2.0 : 1.0;
    EXPECT_NEAR(ssim3d<double>(x, y, {d[0], d[1], d[2]}, opt), oracle::brute_ssim(x, y, d, w, opt.dynamic_range), 1e-10)
        << "window " << w;
  }
}

TEST(Ssim, SymmetricAndBounded) {
  const std::vector<std::size_t> shape{8, 8, 8};
  for (std::uint32_t seed = 0; seed < 5; ++seed) {
    const auto x = random_volume(512, seed);
    auto y = random_volume(512, seed + 100);
    if (seed % 2) {
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 - x[i];  // anti-correlated
    }
    const double a = ssim3d<double>(x, y, shape), b = ssim3d<double>(y, x, shape);
    EXPECT_NEAR(a, b, 1e-12);
    EXPECT_GE(a, -1.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  const std::vector<std::size_t> shape{8, 9, 7};
  const std::size_t n = 8 * 9 * 7;
  const auto x = random_volume(n, 21);
  auto y = random_volume(n, 22);
  SsimOptions opt;
  opt.window = 5;
  std::vector<double> grad(n);
  ssim3d_with_gradient<double>(x, y, shape, grad, opt);
  const double h = 1e-4;
  for (std::size_t v : {0ul, 17ul, 100ul, 251ul, 377ul, n - 1}) {
    const double keep = y[v];
    y[v] = keep + h;
    const double up = ssim3d<double>(x, y, shape, opt);
    y[v] = keep - h;
    const double down = ssim3d<double>(x, y, shape, opt);
    y[v] = keep;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(grad[v], fd, 1e-3 * std::max(std::abs(fd), 1e-6)) << "voxel " << v;
  }
}

TEST(Ssim, ErrorCases) {
  const std::vector<double> a(64, 0.0), b(27, 0.0);
  try {
    ssim3d<double>(a, a, {4, 4, 4});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::window_too_large);
  }
  EXPECT_THROW(ssim3d<double>(a, b, {4, 4, 4}), Error);
  SsimOptions bad;
  bad.window = 3;
  bad.dynamic_range = 0.0;
  EXPECT_THROW(ssim3d<double>(a, a, {4, 4, 4}, bad), Error);
  EXPECT_THROW(ssim3d(VolumeGrid({8, 8, 8}), VolumeGrid({8, 8, 9})), Error);
}
