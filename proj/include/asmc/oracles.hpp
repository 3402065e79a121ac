#ifndef ASMC_ORACLES_HPP
#define ASMC_ORACLES_HPP

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "interaction.hpp"
#include "model.hpp"
#include "numeric.hpp"

namespace asmc {

/// Moments of the predictive law of X_n given y_{0:n-1}, with log Z_n.
struct PredictiveMoments {
  double mean = 0.0;
  double variance = 0.0;
  double log_marginal_likelihood = 0.0;
};

/// Moments of X_n given y_{0:n}.
struct FilteredMoments {
  double mean = 0.0;
  double variance = 0.0;
};

struct KalmanResult {
  std::vector<PredictiveMoments> predictive;  // n = 0..T
  std::vector<FilteredMoments> filtered;      // n = 0..T-1
};

inline KalmanResult kalman_filter(const LinearGaussianModel& model, const ObservationRecord& record) {
  model.validate();
  require(!record.observations.empty(), "kalman: record is empty");
  const double c = model.obs_coeff;
  const double r = model.obs_noise_sd * model.obs_noise_sd;
  const double q = model.state_noise_sd * model.state_noise_sd;
  KalmanResult out;
  out.predictive.reserve(record.size() + 1);
  out.filtered.reserve(record.size());
  PredictiveMoments cur{model.prior_mean, model.prior_sd * model.prior_sd, 0.0};
  out.predictive.push_back(cur);
  for (std::size_t n = 0; n < record.size(); ++n) {
    const double y = record[n];
    const double s = c * c * cur.variance + r;
    const double innovation = y - c * cur.mean;
    const double log_inc = -0.5 * (kLogTwoPi + std::log(s) + innovation * innovation / s);
    const double gain = cur.variance * c / s;
    const FilteredMoments f{cur.mean + gain * innovation, (1.0 - gain * c) * cur.variance};
    out.filtered.push_back(f);
    cur = PredictiveMoments{model.a * f.mean, model.a * model.a * f.variance + q,
                            cur.log_marginal_likelihood + log_inc};
    out.predictive.push_back(cur);
  }
  return out;
}

/// Exact predictive moments pi_0..pi_T and log Z_0..log Z_T.
inline std::vector<PredictiveMoments> kalman_predictive(const LinearGaussianModel& model,
                                                        const ObservationRecord& record) {
  return kalman_filter(model, record).predictive;
}

struct DiscretePredictive {
  std::vector<double> probabilities;
  double log_marginal_likelihood = 0.0;
};

struct DiscreteForwardResult {
  std::vector<DiscretePredictive> predictive;      // n = 0..T
  std::vector<std::vector<double>> filtered;       // n = 0..T-1
};

inline DiscreteForwardResult discrete_forward_full(const FiniteStateModel& model,
                                                   const ObservationRecord& record) {
  require(!record.observations.empty(), "discrete_forward: record is empty");
  const std::size_t s = model.state_count();
  DiscreteForwardResult out;
  DiscretePredictive cur{model.prior(), 0.0};
  out.predictive.push_back(cur);
  std::vector<double> logu(s);
  for (std::size_t n = 0; n < record.size(); ++n) {
    for (std::size_t k = 0; k < s; ++k) {
      logu[k] = cur.probabilities[k] > 0.0
                    ? std::log(cur.probabilities[k]) + model.log_potential(k, record[n], n)
                    : kNegInf;
    }
    const double log_c = log_sum_exp(logu);
    if (!std::isfinite(log_c)) {
      throw NumericalError("discrete_forward: all potentials zero at time " + std::to_string(n));
    }
    std::vector<double> filt(s);
    for (std::size_t k = 0; k < s; ++k) filt[k] = std::exp(logu[k] - log_c);
    std::vector<double> next(s, 0.0);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t k = 0; k < s; ++k) next[k] += filt[i] * model.transition(i, k);
    double total = 0.0;
    for (double v : next) total += v;
    for (double& v : next) v /= total;
    out.filtered.push_back(std::move(filt));
    cur = DiscretePredictive{std::move(next), cur.log_marginal_likelihood + log_c};
    out.predictive.push_back(cur);
  }
  return out;
}

/// Exact predictive probabilities pi_0..pi_T and log Z_0..log Z_T.
inline std::vector<DiscretePredictive> discrete_forward(const FiniteStateModel& model,
                                                        const ObservationRecord& record) {
  return discrete_forward_full(model, record).predictive;
}

inline constexpr std::size_t kEnumerateMaxParticles = 6;
inline constexpr std::size_t kEnumerateMaxSteps = 4;

/// W_n^i by explicit summation over all ancestral index paths:
///   W_n^{i_n} = sum_{i_0..i_{n-1}} prod_p g_p(i_p) alpha_p(i_{p+1}, i_p).
/// potentials[p][i] holds g_p at particle i (raw, not log). Exponential cost,
/// so N <= 6 and n <= 4 are enforced.
inline std::vector<double> enumerate_weights(std::span<const DenseStochasticMatrix> alphas,
                                             const std::vector<std::vector<double>>& potentials,
                                             std::size_t n) {
  require(n <= kEnumerateMaxSteps, "enumerate_weights: n exceeds 4");
  require(alphas.size() >= n && potentials.size() >= n,
          "enumerate_weights: need n matrices and n potential rows");
  const std::size_t particles = n == 0 ? (alphas.empty() ? potentials.at(0).size() : alphas[0].size())
                                       : alphas[0].size();
  require(particles >= 1 && particles <= kEnumerateMaxParticles,
          "enumerate_weights: N exceeds 6");
  for (std::size_t p = 0; p < n; ++p) {
    require(alphas[p].size() == particles && potentials[p].size() == particles,
            "enumerate_weights: inconsistent sizes");
  }
  std::vector<double> w(particles, 0.0);
  if (n == 0) {
    w.assign(particles, 1.0);
    return w;
  }
  std::vector<std::size_t> path(n, 0);
  std::size_t total = 1;
  for (std::size_t p = 0; p < n; ++p) total *= particles;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t p = 0; p < n; ++p) {
      path[p] = c % particles;
      c /= particles;
    }
    double prefix = 1.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      prefix *= potentials[p][path[p]] * alphas[p](path[p + 1], path[p]);
    }
    prefix *= potentials[n - 1][path[n - 1]];
    for (std::size_t i = 0; i < particles; ++i) w[i] += prefix * alphas[n - 1](i, path[n - 1]);
  }
  return w;
}

}  // namespace asmc

#endif  // ASMC_ORACLES_HPP
