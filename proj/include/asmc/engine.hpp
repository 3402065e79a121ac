#ifndef ASMC_ENGINE_HPP
#define ASMC_ENGINE_HPP

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adaptation.hpp"
#include "error.hpp"
#include "ess.hpp"
#include "interaction.hpp"
#include "model.hpp"
#include "model_io.hpp"
#include "numeric.hpp"
#include "random.hpp"

namespace asmc {

struct StepDiagnostics {
  std::size_t n = 0;
  double ess_coeff = 1.0;  // E_n^N
  double n_eff = 0.0;      // N * E_n^N
  int k_n = 0;             // adaptation depth of alpha_{n-1}
  std::size_t degree = 1;  // graph degree of alpha_{n-1}
  double log_z = 0.0;      // log Z_n^N
};

/// Extra per-step output kept when a run records details.
struct StepDetail {
  InteractionSpec spec;                 // alpha_{n-1}
  std::vector<double> log_potentials;   // log g_{n-1}(zeta_{n-1}^i)
  std::vector<double> ess_trajectory;   // E vs k inside the adaptation loop
};

template <class State>
class ParticleSystemAccess;

/// Particle states with normalized log-weights (logsumexp = 0), the running
/// log Z_n^N, a bounded window of ancestry for lag smoothing, and the random
/// streams that drive the run.
template <class State>
class ParticleSystem {
 public:
  std::size_t size() const { return states_.size(); }
  std::size_t step() const { return step_; }
  const std::vector<State>& states() const { return states_; }
  const std::vector<double>& log_weights() const { return log_weights_; }
  double log_normalizer() const { return log_normalizer_; }
  double ess_coeff() const { return ess_; }
  std::size_t max_lag() const { return max_lag_; }
  /// Number of past steps currently retained (<= max_lag).
  std::size_t retained_lag() const { return ancestors_.size(); }

  /// Ancestor column of step step()-back: maps a particle at that step to its
  /// parent index one step earlier. back = 0 is the latest step.
  std::span<const std::size_t> ancestors(std::size_t back = 0) const {
    require(back < ancestors_.size(), "ancestry not retained that far back");
    return ancestors_[ancestors_.size() - 1 - back];
  }

  /// States at step step()-lag (lag = 0 is the current population).
  const std::vector<State>& states_at_lag(std::size_t lag) const {
    if (lag == 0) return states_;
    require(lag <= past_states_.size(), "states not retained that far back");
    return past_states_[past_states_.size() - lag];
  }

  /// Index of particle i's ancestor `lag` steps back.
  std::size_t ancestor_index(std::size_t i, std::size_t lag) const {
    require(lag <= ancestors_.size(), "lag exceeds retained history");
    for (std::size_t s = 0; s < lag; ++s) i = ancestors(s)[i];
    return i;
  }

  Rng& rng_for(std::size_t particle) {
    return stream_of_.empty() ? streams_.front() : streams_[stream_of_[particle]];
  }
  Rng& policy_rng() { return streams_.front(); }

 private:
  friend class ParticleSystemAccess<State>;

  std::vector<State> states_;
  std::vector<double> log_weights_;
  double log_normalizer_ = 0.0;
  std::size_t step_ = 0;
  double ess_ = 1.0;
  std::size_t max_lag_ = 0;
  std::deque<std::vector<State>> past_states_;
  std::deque<std::vector<std::size_t>> ancestors_;
  std::vector<Rng> streams_;
  std::vector<std::size_t> stream_of_;
};

template <class State>
class ParticleSystemAccess {
 public:
  using System = ParticleSystem<State>;
  static std::vector<State>& states(System& s) { return s.states_; }
  static std::vector<double>& log_weights(System& s) { return s.log_weights_; }
  static double& log_normalizer(System& s) { return s.log_normalizer_; }
  static std::size_t& step(System& s) { return s.step_; }
  static double& ess(System& s) { return s.ess_; }
  static std::size_t& max_lag(System& s) { return s.max_lag_; }
  static std::deque<std::vector<State>>& past_states(System& s) { return s.past_states_; }
  static std::deque<std::vector<std::size_t>>& ancestors(System& s) { return s.ancestors_; }
  static std::vector<Rng>& streams(System& s) { return s.streams_; }
  static std::vector<std::size_t>& stream_of(System& s) { return s.stream_of_; }
};

struct InitOptions {
  std::size_t max_lag = 0;
  /// When set, block b of this partition draws every random number from its
  /// own stream seeded split_seed(seed, b). Only meaningful for runs whose
  /// interaction never mixes these blocks.
  std::optional<BlockPartition> block_streams;
};

/// Samples zeta_0^i iid from the prior with W_0^i = 1 (so Z_0^N = 1, E_0^N = 1).
template <HiddenMarkovModel M>
ParticleSystem<typename M::state_type> init(const M& model, std::size_t n, std::uint64_t seed,
                                            const InitOptions& options = {}) {
  require(n >= 1, "init: N must be >= 1");
  using State = typename M::state_type;
  using A = ParticleSystemAccess<State>;
  ParticleSystem<State> sys;
  A::max_lag(sys) = options.max_lag;
  if (options.block_streams) {
    const auto& p = *options.block_streams;
    require(p.size() == n, "init: block stream partition size does not match N");
    for (std::size_t b = 0; b < p.block_count(); ++b) A::streams(sys).emplace_back(split_seed(seed, b));
    A::stream_of(sys) = p.block_ids();
  } else {
    A::streams(sys).emplace_back(seed);
  }
  auto& states = A::states(sys);
  states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) states.push_back(model.sample_prior(sys.rng_for(i)));
  A::log_weights(sys).assign(n, -std::log(static_cast<double>(n)));
  return sys;
}

/// Result of applying alpha_{n-1} to the pre-weights u_j = log(W_{n-1}^j g_{n-1}^j).
struct WeightUpdate {
  std::vector<double> log_weights;   // normalized log W_n
  std::vector<double> block_log_mass;  // per-row log sum_j alpha^{ij} e^{u_j}
  double log_increment = 0.0;        // log Z_n^N - log Z_{n-1}^N
};

/// W_n^i = sum_j alpha^{ij} W_{n-1}^j g_{n-1}^j in log domain. For partitions
/// this is the per-block logsumexp minus log d, O(N) overall. Pre-weights must
/// come from normalized W_{n-1}.
inline WeightUpdate propagate_weights(const InteractionSpec& spec, std::span<const double> log_pre,
                                      std::size_t step, OpCounter* counter = nullptr) {
  const std::size_t n = log_pre.size();
  spec.check_size(n);
  WeightUpdate out;
  out.log_weights.resize(n);
  auto fail = [&](std::size_t block) {
    throw NumericalError("all-zero block weight at step " + std::to_string(step) + " in block " +
                         std::to_string(block));
  };
  if (spec.is_identity()) {
    // Singletons need no ancestor draw, so a zero weight is only fatal when
    // every particle has one.
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isnan(log_pre[i])) fail(i);
      any = any || log_pre[i] > kNegInf;
      out.log_weights[i] = log_pre[i];
    }
    if (!any) fail(0);
  } else if (spec.is_full()) {
    const double v = log_sum_exp(log_pre) - std::log(static_cast<double>(n));
    if (!(v > kNegInf)) fail(0);
    out.log_weights.assign(n, v);
  } else if (spec.is_blocks()) {
    const auto& p = spec.blocks();
    const double log_d = std::log(static_cast<double>(p.block_size()));
    std::vector<double> buf;
    for (std::size_t b = 0; b < p.block_count(); ++b) {
      buf.clear();
      for (auto j : p.members(b)) buf.push_back(log_pre[j]);
      const double v = log_sum_exp(buf) - log_d;
      if (!(v > kNegInf)) fail(b);
      for (auto i : p.members(b)) out.log_weights[i] = v;
    }
  } else {
    const auto& a = spec.dense();
    double max = kNegInf;
    for (double u : log_pre) max = std::max(max, u);
    if (max == kNegInf) fail(0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (a(i, j) > 0.0) s += a(i, j) * std::exp(log_pre[j] - max);
      }
      if (!(s > 0.0)) fail(i);
      out.log_weights[i] = max + std::log(s);
    }
  }
  count(counter, n);
  out.block_log_mass = out.log_weights;
  out.log_increment = log_sum_exp(out.log_weights);
  for (double& w : out.log_weights) w -= out.log_increment;
  return out;
}

namespace detail {

// Multinomial draw of members.size() ancestors from the block's pre-weights:
// sorted uniforms via exponential spacings swept against the cumulative
// weights, then a uniform shuffle so draws are iid per particle.
inline void sample_block_ancestors(std::span<const std::size_t> members,
                                   std::span<const double> log_pre, double log_mass, Rng& rng,
                                   std::span<std::size_t> ancestors, std::vector<std::size_t>& scratch,
                                   OpCounter* counter) {
  const std::size_t d = members.size();
  if (d == 1) {
    ancestors[members[0]] = members[0];
    return;
  }
  scratch.resize(d);
  double total = 0.0;
  std::vector<double> spacing(d + 1);
  for (std::size_t k = 0; k <= d; ++k) total += (spacing[k] = rng.exponential());
  double cumulative = std::exp(log_pre[members[0]] - log_mass);
  double u = 0.0;
  std::size_t j = 0;
  for (std::size_t k = 0; k < d; ++k) {
    u += spacing[k] / total;
    while (u > cumulative && j + 1 < d) {
      ++j;
      cumulative += std::exp(log_pre[members[j]] - log_mass);
    }
    scratch[k] = members[j];
  }
  for (std::size_t t = d - 1; t > 0; --t) std::swap(scratch[t], scratch[rng.index(t + 1)]);
  for (std::size_t t = 0; t < d; ++t) ancestors[members[t]] = scratch[t];
  count(counter, 2 * d);
}

}  // namespace detail

struct StepOptions {
  OpCounter* counter = nullptr;
  bool record_detail = false;
};

struct StepResult {
  StepDiagnostics diagnostics;
  std::optional<StepDetail> detail;
};

/// One iteration n >= 1: choose alpha_{n-1} from the policy, update weights,
/// draw ancestors from the mixture and propagate through the transition.
/// Random numbers are consumed in a fixed order: the policy's draws, then
/// ancestor draws block by block, then transitions in particle-index order.
template <HiddenMarkovModel M>
StepResult step(ParticleSystem<typename M::state_type>& sys, const M& model,
                const typename M::observation_type& y, const AdaptationPolicy& policy,
                const StepOptions& options = {}) {
  using State = typename M::state_type;
  using A = ParticleSystemAccess<State>;
  const std::size_t n = sys.size();
  const std::size_t next_step = sys.step() + 1;
  const std::size_t time = sys.step();  // observation index n-1

  std::vector<double> log_g(n);
  std::vector<double> log_pre(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_g[i] = model.log_potential(sys.states()[i], y, time);
    if (std::isnan(log_g[i]) || log_g[i] == std::numeric_limits<double>::infinity()) {
      throw NumericalError("invalid log potential for particle " + std::to_string(i) +
                           " at time " + std::to_string(time));
    }
    log_pre[i] = sys.log_weights()[i] + log_g[i];
  }
  count(options.counter, n);

  AdaptationOutput choice = select_interaction(policy, log_pre, next_step, sys.policy_rng(), options.counter);
  const InteractionSpec& spec = choice.spec;
  WeightUpdate update = propagate_weights(spec, log_pre, next_step, options.counter);

  std::vector<std::size_t> ancestors(n);
  if (spec.is_identity()) {
    for (std::size_t i = 0; i < n; ++i) ancestors[i] = i;
  } else if (spec.is_dense()) {
    const auto& a = spec.dense();
    double max = kNegInf;
    for (double u : log_pre) max = std::max(max, u);
    for (std::size_t i = 0; i < n; ++i) {
      const double scale = std::exp(update.block_log_mass[i] - max);
      const double u = sys.rng_for(i).uniform() * scale;
      double acc = 0.0;
      std::size_t pick = n;
      for (std::size_t j = 0; j < n; ++j) {
        const double w = a(i, j) * std::exp(log_pre[j] - max);
        if (w <= 0.0) continue;
        acc += w;
        pick = j;
        if (u <= acc) break;
      }
      ancestors[i] = pick;
    }
    count(options.counter, n * n);
  } else {
    const auto part = spec.partition(n);
    const double log_d = std::log(static_cast<double>(part.block_size()));
    std::vector<std::size_t> scratch;
    for (std::size_t b = 0; b < part.block_count(); ++b) {
      const auto members = part.members(b);
      const double log_mass = update.block_log_mass[members[0]] + log_d;
      detail::sample_block_ancestors(members, log_pre, log_mass, sys.rng_for(members[0]), ancestors,
                                     scratch, options.counter);
    }
  }

  auto& states = A::states(sys);
  std::vector<State> next;
  next.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    next.push_back(model.sample_transition(states[ancestors[i]], sys.rng_for(i)));
  }
  count(options.counter, n);

  if (sys.max_lag() > 0) {
    auto& past = A::past_states(sys);
    auto& anc = A::ancestors(sys);
    past.push_back(std::move(states));
    anc.push_back(std::move(ancestors));
    if (past.size() > sys.max_lag()) {
      past.pop_front();
      anc.pop_front();
    }
  }
  states = std::move(next);
  A::log_weights(sys) = std::move(update.log_weights);
  A::log_normalizer(sys) += update.log_increment;
  A::step(sys) = next_step;
  A::ess(sys) = ess_coefficient(sys.log_weights());

  StepResult result;
  result.diagnostics = StepDiagnostics{next_step, sys.ess_coeff(), n * sys.ess_coeff(), choice.k,
                                       spec.degree(n), sys.log_normalizer()};
  if (options.record_detail) {
    result.detail = StepDetail{spec, std::move(log_g), std::move(choice.ess_trajectory)};
  }
  return result;
}

/// Self-normalized estimate sum_i w_i phi(x_i) under arbitrary log-weights.
template <class State, class Phi>
double weighted_estimate(std::span<const double> log_weights, std::span<const State> states, Phi&& phi) {
  const double norm = log_sum_exp(log_weights);
  if (norm == kNegInf) throw NumericalError("all particle weights zero");
  double acc = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double w = std::exp(log_weights[i] - norm);
    if (w > 0.0) acc += w * phi(states[i]);
  }
  return acc;
}

/// pi_n^N(phi): the predictive estimate given y_{0:n-1}.
template <class State, class Phi>
double estimate_filter(const ParticleSystem<State>& sys, Phi&& phi) {
  return weighted_estimate<State>(sys.log_weights(), sys.states(), std::forward<Phi>(phi));
}

template <class State>
double estimate_log_z(const ParticleSystem<State>& sys) {
  return sys.log_normalizer();
}

/// Estimate of phi(X_{n-lag}) by tracing each particle's lineage back `lag`
/// steps, weighted by `log_weights` (defaults to the current weights).
template <class State, class Phi>
double lag_smoother_estimate(const ParticleSystem<State>& sys, std::size_t lag, Phi&& phi,
                             std::span<const double> log_weights = {}) {
  require(lag <= sys.step(), "lag exceeds the number of steps taken");
  require(lag <= sys.retained_lag(), "lag exceeds retained history");
  if (log_weights.empty()) log_weights = sys.log_weights();
  const auto& past = sys.states_at_lag(lag);
  const double norm = log_sum_exp(log_weights);
  if (norm == kNegInf) throw NumericalError("all particle weights zero");
  double acc = 0.0;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    const double w = std::exp(log_weights[i] - norm);
    if (w > 0.0) acc += w * phi(past[sys.ancestor_index(i, lag)]);
  }
  return acc;
}

/// Log-weights of the particles after absorbing y_n (target: X_n | y_{0:n}).
template <HiddenMarkovModel M>
std::vector<double> updated_log_weights(const ParticleSystem<typename M::state_type>& sys,
                                        const M& model, const typename M::observation_type& y) {
  std::vector<double> out(sys.size());
  for (std::size_t i = 0; i < sys.size(); ++i) {
    out[i] = sys.log_weights()[i] + model.log_potential(sys.states()[i], y, sys.step());
  }
  return out;
}

template <class State>
using TestFunction = std::function<double(const State&)>;

template <class State>
struct RunTrace {
  std::vector<StepDiagnostics> diagnostics;         // n = 0..n_steps
  std::vector<std::vector<double>> estimates;       // [n][phi] predictive estimates
  std::vector<StepDetail> details;                  // n = 1..n_steps when recorded
  std::vector<std::vector<double>> log_weight_history;  // n = 0..n_steps when recorded
  ParticleSystem<State> final_system;
};

template <class State>
struct RunOptions {
  std::size_t max_lag = 0;
  bool record_details = false;
  OpCounter* counter = nullptr;
  std::optional<BlockPartition> block_streams;
  std::vector<TestFunction<State>> test_functions;
  /// Called after init and after every step.
  std::function<void(const ParticleSystem<State>&, const StepDiagnostics&)> observer;
};

/// init followed by n_steps calls to step on y_0..y_{n_steps-1}.
template <HiddenMarkovModel M>
RunTrace<typename M::state_type> run(const M& model,
                                     const BasicObservationRecord<typename M::observation_type>& record,
                                     const AdaptationPolicy& policy, std::size_t n,
                                     std::size_t n_steps, std::uint64_t seed,
                                     const RunOptions<typename M::state_type>& options = {}) {
  using State = typename M::state_type;
  require(n_steps <= record.size(), "run: n_steps exceeds the record length");
  RunTrace<State> trace;
  trace.final_system = init(model, n, seed, InitOptions{options.max_lag, options.block_streams});
  auto& sys = trace.final_system;
  auto record_step = [&](const StepDiagnostics& d) {
    trace.diagnostics.push_back(d);
    if (!options.test_functions.empty()) {
      std::vector<double> row;
      row.reserve(options.test_functions.size());
      for (const auto& phi : options.test_functions) row.push_back(estimate_filter(sys, phi));
      trace.estimates.push_back(std::move(row));
    }
    if (options.record_details) trace.log_weight_history.push_back(sys.log_weights());
    if (options.observer) options.observer(sys, d);
  };
  record_step(StepDiagnostics{0, 1.0, static_cast<double>(n), 0, 1, 0.0});
  const StepOptions step_options{options.counter, options.record_details};
  for (std::size_t t = 0; t < n_steps; ++t) {
    auto r = step(sys, model, record[t], policy, step_options);
    if (r.detail) trace.details.push_back(std::move(*r.detail));
    record_step(r.diagnostics);
  }
  return trace;
}

/// CSV `n,ess_coeff,n_eff,k_n,degree,logZ[,phi_1,...]`, 17 significant digits.
/// Only rows with from <= n <= to are written.
template <class State>
void write_trace_csv(std::ostream& os, const RunTrace<State>& trace, std::size_t from = 0,
                     std::size_t to = static_cast<std::size_t>(-1)) {
  os << "n,ess_coeff,n_eff,k_n,degree,logZ";
  const std::size_t phis = trace.estimates.empty() ? 0 : trace.estimates.front().size();
  for (std::size_t f = 0; f < phis; ++f) os << ",phi_" << (f + 1);
  os << '\n';
  for (std::size_t r = 0; r < trace.diagnostics.size(); ++r) {
    const auto& d = trace.diagnostics[r];
    if (d.n < from || d.n > to) continue;
    os << d.n << ',' << format_real(d.ess_coeff) << ',' << format_real(d.n_eff) << ',' << d.k_n
       << ',' << d.degree << ',' << format_real(d.log_z);
    for (std::size_t f = 0; f < phis; ++f) os << ',' << format_real(trace.estimates[r][f]);
    os << '\n';
  }
}

}  // namespace asmc

#endif  // ASMC_ENGINE_HPP
