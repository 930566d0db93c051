#pragma once

#include <array>
#include <cmath>
#include <vector>

namespace oracle {

// Direct evaluation of local SSIM over every window position.
inline double brute_ssim(const std::vector<double>& x, const std::vector<double>& y, std::array<std::size_t, 3> d,
                  std::size_t w, double range) {
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + w <= d[0]; ++i)
    for (std::size_t j = 0; j + w <= d[1]; ++j)
      for (std::size_t k = 0; k + w <= d[2]; ++k) {
        std::vector<double> a, b;
        for (std::size_t p = i; p < i + w; ++p)
          for (std::size_t q = j; q < j + w; ++q)
            for (std::size_t r = k; r < k + w; ++r) {
              a.push_back(x[(p * d[1] + q) * d[2] + r]);
              b.push_back(y[(p * d[1] + q) * d[2] + r]);
            }
        const double n = static_cast<double>(a.size());
        double ma = 0, mb = 0;
        for (std::size_t t = 0; t < a.size(); ++t) ma += a[t] / n, mb += b[t] / n;
        double va = 0, vb = 0, cab = 0;
        for (std::size_t t = 0; t < a.size(); ++t) {
          va += (a[t] - ma) * (a[t] - ma) / n;
          vb += (b[t] - mb) * (b[t] - mb) / n;
          cab += (a[t] - ma) * (b[t] - mb) / n;
        }
        total += (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

}  // namespace oracle
