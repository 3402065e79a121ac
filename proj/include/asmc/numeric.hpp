#ifndef ASMC_NUMERIC_HPP
#define ASMC_NUMERIC_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

namespace asmc {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline const double kLogTwo = std::log(2.0);
inline const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

/// log(sum(exp(x))). Returns -inf for an empty range or all -inf entries.
inline double log_sum_exp(std::span<const double> x) {
  double max = kNegInf;
  for (double v : x) max = std::max(max, v);
  if (max == kNegInf) return kNegInf;
  if (std::isinf(max)) return max;
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - max);
  return max + std::log(sum);
}

/// log(exp(a) + exp(b)).
inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline double normal_log_density(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * kLogTwoPi - std::log(sd) - 0.5 * z * z;
}

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline int floor_log2(std::size_t n) {
  int k = -1;
  while (n != 0) {
    n >>= 1;
    ++k;
  }
  return k;
}

}  // namespace asmc

#endif  // ASMC_NUMERIC_HPP
