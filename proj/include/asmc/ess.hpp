#ifndef ASMC_ESS_HPP
#define ASMC_ESS_HPP

#include <cmath>
#include <span>

#include "error.hpp"
#include "numeric.hpp"

namespace asmc {

/// (N^-1 sum W)^2 / (N^-1 sum W^2) from log-weights, in [1/N, 1].
inline double ess_coefficient(std::span<const double> log_weights) {
  require(!log_weights.empty(), "ess_coefficient: no weights");
  const double lse = log_sum_exp(log_weights);
  if (lse == kNegInf) throw NumericalError("all particle weights zero");
  double max = kNegInf;
  for (double v : log_weights) max = std::max(max, v);
  double sum2 = 0.0;
  for (double v : log_weights) {
    const double d = v - max;
    sum2 += std::exp(2.0 * d);
  }
  const double lse2 = 2.0 * max + std::log(sum2);
  const double e = std::exp(2.0 * lse - lse2 - std::log(static_cast<double>(log_weights.size())));
  return std::min(e, 1.0);
}

}  // namespace asmc

#endif  // ASMC_ESS_HPP
