#pragma once

// Test-only oracle: frame-by-frame evaluation of the delta regression,
// thresholding and window extension with plain nested loops. Kept independent
// of the library implementation on purpose.

#include <cmath>
#include <cstdint>
#include <vector>

namespace naive {

inline std::vector<double> delta(const std::vector<double>& e, int L) {
  const int N = static_cast<int>(e.size());
  auto sample = [&](int k) {
    if (k < 0) k = 0;
    if (k > N - 1) k = N - 1;
    return e[static_cast<std::size_t>(k)];
  };
  std::vector<double> out(e.size());
  for (int n = 0; n < N; ++n) {
    double num = 0.0, den = 0.0;
    for (int l = 1; l <= L; ++l) {
      num += (sample(n + l) - sample(n - l)) * l;
      den += static_cast<double>(l) * l;
    }
    out[static_cast<std::size_t>(n)] = num / (2.0 * den);
  }
  return out;
}

inline std::vector<std::uint8_t> burst_points(const std::vector<double>& d, double tau) {
  std::vector<std::uint8_t> p(d.size());
  for (std::size_t n = 0; n < d.size(); ++n)
    p[n] = (d[n] >= tau || -d[n] >= tau) ? 1 : 0;
  return p;
}

inline std::vector<std::uint8_t> extend(const std::vector<std::uint8_t>& p, int half) {
  const int N = static_cast<int>(p.size());
  std::vector<std::uint8_t> P(p.size(), 0);
  for (int n = 0; n < N; ++n) {
    bool hit = false;
    for (int m = n - half; m <= n + half; ++m)
      if (m >= 0 && m < N && p[static_cast<std::size_t>(m)]) hit = true;
    P[static_cast<std::size_t>(n)] = hit ? 1 : 0;
  }
  return P;
}

inline std::vector<std::uint8_t> pipeline(const std::vector<double>& e, int L, int half,
                                          double tau) {
  return extend(burst_points(delta(e, L), tau), half);
}

}  // namespace naive
