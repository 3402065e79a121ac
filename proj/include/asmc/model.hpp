#ifndef ASMC_MODEL_HPP
#define ASMC_MODEL_HPP

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "random.hpp"

namespace asmc {

enum class StateKind { scalar_real, finite_label, vector_real };

/// The triple (prior, transition, potential) of a hidden Markov model.
/// Potentials are always returned in log domain: log g(x, y_n).
template <class M>
concept HiddenMarkovModel =
    requires(const M& m, const typename M::state_type& x,
             const typename M::observation_type& y, Rng& rng, std::size_t n) {
      { M::state_kind } -> std::convertible_to<StateKind>;
      { m.sample_prior(rng) } -> std::same_as<typename M::state_type>;
      { m.sample_transition(x, rng) } -> std::same_as<typename M::state_type>;
      { m.log_potential(x, y, n) } -> std::convertible_to<double>;
    };

/// Models that can also generate synthetic observations.
template <class M>
concept SimulatableModel =
    HiddenMarkovModel<M> && requires(const M& m, const typename M::state_type& x, Rng& rng,
                                     std::size_t n) {
      { m.sample_observation(x, n, rng) } -> std::same_as<typename M::observation_type>;
    };

template <class Obs = double>
struct BasicObservationRecord {
  std::vector<Obs> observations;
  std::string model_tag;
  std::uint64_t seed = 0;

  std::size_t size() const { return observations.size(); }
  const Obs& operator[](std::size_t n) const { return observations[n]; }
};

using ObservationRecord = BasicObservationRecord<double>;

// X_0 ~ N(prior_mean, prior_sd^2), X_n = a X_{n-1} + state_noise_sd V_n,
// Y_n = obs_coeff X_n + obs_noise_sd W_n. Zero state noise / prior sd give
// delta dynamics.
struct LinearGaussianModel {
  using state_type = double;
  using observation_type = double;
  static constexpr StateKind state_kind = StateKind::scalar_real;
  static constexpr const char* tag = "linear_gaussian";

  double a = 0.9;
  double state_noise_sd = 1.0;
  double obs_coeff = 1.0;
  double obs_noise_sd = 1.0;
  double prior_mean = 0.0;
  double prior_sd = 1.0;

  void validate() const {
    require(std::isfinite(a) && std::isfinite(obs_coeff) && std::isfinite(prior_mean),
            "linear_gaussian: non-finite coefficient");
    require(state_noise_sd >= 0.0 && std::isfinite(state_noise_sd),
            "linear_gaussian: state_noise_sd must be >= 0");
    require(prior_sd >= 0.0 && std::isfinite(prior_sd), "linear_gaussian: prior_sd must be >= 0");
    require(obs_noise_sd > 0.0 && std::isfinite(obs_noise_sd),
            "linear_gaussian: obs_noise_sd must be > 0");
  }

  double sample_prior(Rng& rng) const { return prior_mean + prior_sd * rng.normal(); }
  double sample_transition(double x, Rng& rng) const {
    return a * x + state_noise_sd * rng.normal();
  }
  double sample_observation(double x, std::size_t, Rng& rng) const {
    return obs_coeff * x + obs_noise_sd * rng.normal();
  }
  double log_potential(double x, double y, std::size_t) const {
    return normal_log_density(y, obs_coeff * x, obs_noise_sd);
  }
};

// X_0 ~ N(0,1), X_n = a X_{n-1} + sigma V_n, Y_n = epsilon W_n exp(X_n / 2).
// The potential is the exact density of N(0, epsilon^2 e^x) at y.
struct StochasticVolatilityModel {
  using state_type = double;
  using observation_type = double;
  static constexpr StateKind state_kind = StateKind::scalar_real;
  static constexpr const char* tag = "stochastic_volatility";

  double a = 0.9;
  double sigma = 0.25;
  double epsilon = 0.1;

  void validate() const {
    require(std::abs(a) < 1.0, "stochastic_volatility: |a| must be < 1");
    require(sigma > 0.0 && std::isfinite(sigma), "stochastic_volatility: sigma must be > 0");
    require(epsilon > 0.0 && std::isfinite(epsilon), "stochastic_volatility: epsilon must be > 0");
  }

  /// A zero observation is rejected at record validation.
  bool accepts(double y) const { return std::isfinite(y) && y != 0.0; }

  double sample_prior(Rng& rng) const { return rng.normal(); }
  double sample_transition(double x, Rng& rng) const { return a * x + sigma * rng.normal(); }
  double sample_observation(double x, std::size_t, Rng& rng) const {
    return epsilon * rng.normal() * std::exp(0.5 * x);
  }
  double log_potential(double x, double y, std::size_t) const {
    const double scaled = y / epsilon;
    return -0.5 * kLogTwoPi - std::log(epsilon) - 0.5 * x - 0.5 * scaled * scaled * std::exp(-x);
  }
};

/// Finite-state chain on labels {0, ..., S-1} with a pluggable emission.
class FiniteStateModel {
 public:
  using state_type = std::size_t;
  using observation_type = double;
  static constexpr StateKind state_kind = StateKind::finite_label;
  static constexpr const char* tag = "finite_state";

  using EmissionLogPotential = std::function<double(std::size_t label, double y)>;
  using EmissionSampler = std::function<double(std::size_t label, Rng& rng)>;

  FiniteStateModel(std::vector<double> prior, std::vector<double> transition,
                   EmissionLogPotential emission, EmissionSampler sampler = {})
      : prior_(std::move(prior)),
        transition_(std::move(transition)),
        emission_(std::move(emission)),
        sampler_(std::move(sampler)) {
    const std::size_t s = prior_.size();
    require(s >= 2, "finite_state: need at least two states");
    require(transition_.size() == s * s, "finite_state: transition must be S x S");
    require(static_cast<bool>(emission_), "finite_state: emission potential missing");
    check_probability_vector(prior_, "prior");
    for (std::size_t i = 0; i < s; ++i) {
      check_probability_vector(std::span<const double>(transition_).subspan(i * s, s),
                               "transition row " + std::to_string(i));
    }
    prior_cdf_ = cumulative(prior_);
    transition_cdf_.reserve(s * s);
    for (std::size_t i = 0; i < s; ++i) {
      auto row = cumulative(std::span<const double>(transition_).subspan(i * s, s));
      transition_cdf_.insert(transition_cdf_.end(), row.begin(), row.end());
    }
  }

  /// Gaussian emissions: Y | X = s ~ N(means[s], sd^2).
  static FiniteStateModel gaussian(std::vector<double> prior, std::vector<double> transition,
                                   std::vector<double> means, double sd) {
    require(means.size() == prior.size(), "finite_state: one emission mean per state");
    require(sd > 0.0, "finite_state: emission sd must be > 0");
    auto m = means;
    FiniteStateModel model(
        std::move(prior), std::move(transition),
        [m, sd](std::size_t s, double y) { return normal_log_density(y, m[s], sd); },
        [m, sd](std::size_t s, Rng& rng) { return m[s] + sd * rng.normal(); });
    model.means_ = std::move(means);
    model.sd_ = sd;
    return model;
  }

  std::size_t state_count() const { return prior_.size(); }
  const std::vector<double>& prior() const { return prior_; }
  double transition(std::size_t from, std::size_t to) const {
    return transition_[from * state_count() + to];
  }
  const std::vector<double>& transition_matrix() const { return transition_; }
  /// Emission means and sd when built by gaussian(); empty otherwise.
  const std::vector<double>& emission_means() const { return means_; }
  double emission_sd() const { return sd_; }

  std::size_t sample_prior(Rng& rng) const { return draw(prior_cdf_, 0, rng); }
  std::size_t sample_transition(std::size_t x, Rng& rng) const {
    return draw(transition_cdf_, x * state_count(), rng);
  }
  double sample_observation(std::size_t x, std::size_t, Rng& rng) const {
    if (!sampler_) throw ValidationError("finite_state: model has no emission sampler");
    return sampler_(x, rng);
  }
  double log_potential(std::size_t x, double y, std::size_t) const { return emission_(x, y); }

 private:
  static void check_probability_vector(std::span<const double> p, const std::string& what) {
    double sum = 0.0;
    for (double v : p) {
      require(v >= 0.0 && std::isfinite(v), "finite_state: negative entry in " + what);
      sum += v;
    }
    require(std::abs(sum - 1.0) <= 1e-12, "finite_state: " + what + " does not sum to 1");
  }

  static std::vector<double> cumulative(std::span<const double> p) {
    std::vector<double> c(p.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) c[i] = (acc += p[i]);
    return c;
  }

  std::size_t draw(const std::vector<double>& cdf, std::size_t offset, Rng& rng) const {
    const std::size_t s = state_count();
    const double u = rng.uniform() * cdf[offset + s - 1];
    for (std::size_t k = 0; k + 1 < s; ++k) {
      if (u < cdf[offset + k]) return k;
    }
    return s - 1;
  }

  std::vector<double> prior_;
  std::vector<double> transition_;
  std::vector<double> prior_cdf_;
  std::vector<double> transition_cdf_;
  EmissionLogPotential emission_;
  EmissionSampler sampler_;
  std::vector<double> means_;
  double sd_ = 0.0;
};

namespace detail {

template <class T>
std::string describe(const T& value) {
  if constexpr (requires(std::ostream& os, const T& v) { os << v; }) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    return os.str();
  } else {
    return "<state>";
  }
}

}  // namespace detail

/// Checks an observation record against a model: nonempty, and every value
/// accepted by the model when it declares an accepts() predicate.
template <HiddenMarkovModel M>
void validate_record(const M& model, const BasicObservationRecord<typename M::observation_type>& record) {
  require(!record.observations.empty(), "observation record is empty");
  if constexpr (requires(const M& m, const typename M::observation_type& y) {
                  { m.accepts(y) } -> std::convertible_to<bool>;
                }) {
    for (std::size_t t = 0; t < record.size(); ++t) {
      if (!model.accepts(record[t])) {
        throw ValidationError("observation " + std::to_string(t) + " (" +
                              detail::describe(record[t]) + ") is not admissible for " +
                              std::string(M::tag));
      }
    }
  }
}

template <HiddenMarkovModel M>
struct SimulatedData {
  std::vector<typename M::state_type> latent;
  BasicObservationRecord<typename M::observation_type> record;
};

/// Draws (X_0..X_{n-1}, Y_0..Y_{n-1}) jointly. Per time step the state draw
/// precedes the observation draw.
template <SimulatableModel M>
SimulatedData<M> simulate_data(const M& model, std::size_t n_steps, std::uint64_t seed) {
  require(n_steps >= 1, "simulate_data: n_steps must be >= 1");
  Rng rng(seed);
  SimulatedData<M> out;
  out.latent.reserve(n_steps);
  out.record.observations.reserve(n_steps);
  out.record.model_tag = M::tag;
  out.record.seed = seed;
  for (std::size_t n = 0; n < n_steps; ++n) {
    auto x = n == 0 ? model.sample_prior(rng) : model.sample_transition(out.latent.back(), rng);
    out.record.observations.push_back(model.sample_observation(x, n, rng));
    out.latent.push_back(std::move(x));
  }
  return out;
}

/// log g_n(x) for every state; throws NumericalError on a non-finite value.
template <HiddenMarkovModel M>
std::vector<double> log_potential_vector(const M& model,
                                         std::span<const typename M::state_type> states,
                                         const typename M::observation_type& y, std::size_t n) {
  require(!states.empty(), "log_potential_vector: no states");
  std::vector<double> out(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    out[i] = model.log_potential(states[i], y, n);
    if (!std::isfinite(out[i])) {
      throw NumericalError("non-finite log potential at index " + std::to_string(i) +
                           " for state " + detail::describe(states[i]) + " at time " +
                           std::to_string(n));
    }
  }
  return out;
}

}  // namespace asmc

#endif  // ASMC_MODEL_HPP
