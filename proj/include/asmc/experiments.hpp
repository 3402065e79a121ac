#ifndef ASMC_EXPERIMENTS_HPP
#define ASMC_EXPERIMENTS_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "adaptation.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "interaction.hpp"
#include "model.hpp"
#include "model_io.hpp"
#include "oracles.hpp"
#include "random.hpp"

namespace asmc {

// Seed layout under a master seed: replicate r runs on split_seed(master, r);
// the observation record and the big reference filter use the two fixed
// stream indices below, far away from any replicate index.
inline constexpr std::uint64_t kDataStream = 0xDA7A000000000000ULL;
inline constexpr std::uint64_t kReferenceStream = 0x5EF0000000000000ULL;

struct ExperimentConfig {
  AnyModel model = StochasticVolatilityModel{};
  std::vector<std::string> policies{"arpf:0.6", "simple:0.6", "random:0.6", "greedy:0.6"};
  std::size_t particles = 512;
  std::size_t n_steps = 300;
  std::size_t replicates = 50;
  std::uint64_t seed = 1;
  /// Thresholds for sweeps; bare rule names in `policies` are expanded over these.
  std::vector<double> taus{0.6};
  std::size_t lag = 5;
  std::vector<std::string> test_functions{"x", "x2", "exp_half"};
  std::size_t burn_in = 30;
  std::size_t reference_particles = std::size_t{1} << 15;
  /// naive-demo: block size q and number of blocks s.
  std::size_t block_size = 4;
  std::size_t blocks = 512;
  /// hub-demo: particle counts and the gap n - p for beta.
  std::vector<std::size_t> particle_grid{16, 32, 64, 128, 256, 512, 1024};
  std::size_t gap = 10;
  double laziness = 0.5;
  std::optional<std::string> record_path;
  std::size_t window_from = 0;
  std::size_t window_to = static_cast<std::size_t>(-1);
  unsigned threads = 0;
  std::filesystem::path out_dir = ".";

  void validate() const {
    require(particles >= 1, "particles must be >= 1");
    require(replicates >= 1, "replicates must be >= 1");
    require(n_steps >= 1, "n_steps must be >= 1");
    require(!policies.empty(), "at least one policy is needed");
    for (double t : taus) validate_tau(t);
    require(block_size >= 1 && blocks >= 1, "block_size and blocks must be >= 1");
    require(gap >= 1, "gap must be >= 1");
    require(laziness >= 0.0 && laziness < 1.0, "laziness must lie in [0, 1)");
    require(window_from <= window_to, "window_from must not exceed window_to");
    std::visit([](const auto& m) {
      if constexpr (requires { m.validate(); }) m.validate();
    }, model);
  }
};

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("config field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

/// Overlays the fields present in `j` on `base`. Unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {}) {
  require(j.is_object(), "config must be a JSON object");
  static const std::vector<std::string> known{
      "model", "policies", "particles", "n_steps", "replicates", "seed", "taus", "lag",
      "test_functions", "burn_in", "reference_particles", "block_size", "blocks", "particle_grid",
      "gap", "laziness", "record", "window_from", "window_to", "threads", "out_dir"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("unknown config field '" + key + "'");
    }
  }
  if (j.contains("model")) base.model = model_from_json(j.at("model"));
  detail::read_field(j, "policies", base.policies);
  detail::read_field(j, "particles", base.particles);
  detail::read_field(j, "n_steps", base.n_steps);
  detail::read_field(j, "replicates", base.replicates);
  detail::read_field(j, "seed", base.seed);
  detail::read_field(j, "taus", base.taus);
  detail::read_field(j, "lag", base.lag);
  detail::read_field(j, "test_functions", base.test_functions);
  detail::read_field(j, "burn_in", base.burn_in);
  detail::read_field(j, "reference_particles", base.reference_particles);
  detail::read_field(j, "block_size", base.block_size);
  detail::read_field(j, "blocks", base.blocks);
  detail::read_field(j, "particle_grid", base.particle_grid);
  detail::read_field(j, "gap", base.gap);
  detail::read_field(j, "laziness", base.laziness);
  detail::read_field(j, "window_from", base.window_from);
  detail::read_field(j, "window_to", base.window_to);
  detail::read_field(j, "threads", base.threads);
  if (j.contains("record")) {
    std::string path;
    detail::read_field(j, "record", path);
    base.record_path = path;
  }
  if (j.contains("out_dir")) {
    std::string dir;
    detail::read_field(j, "out_dir", dir);
    base.out_dir = dir;
  }
  return base;
}

/// Runs fn(r) for r = 0..count-1 on a pool of threads. Each call must write
/// only to its own slot; the first exception (by index) is rethrown.
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t r = 0; r < count; ++r) fn(r);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t r = next++; r < count; r = next++) {
        try {
          fn(r);
        } catch (...) {
          errors[r] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Registered scalar test functions: x, x2 (x^2) and exp_half (exp(x/2)).
/// Finite-state labels are used as their numeric value.
inline std::function<double(double)> scalar_test_function(const std::string& name) {
  if (name == "x") return [](double x) { return x; };
  if (name == "x2") return [](double x) { return x * x; };
  if (name == "exp_half") return [](double x) { return std::exp(0.5 * x); };
  throw ValidationError("unknown test function '" + name + "' (expected x, x2 or exp_half)");
}

template <class State>
std::vector<TestFunction<State>> test_functions_for(const std::vector<std::string>& names) {
  std::vector<TestFunction<State>> out;
  for (const auto& name : names) {
    auto f = scalar_test_function(name);
    out.push_back([f](const State& s) { return f(static_cast<double>(s)); });
  }
  return out;
}

/// The record named in the config, or one simulated from the model.
template <class M>
ObservationRecord load_or_simulate(const M& model, const ExperimentConfig& config) {
  ObservationRecord record;
  if (config.record_path) {
    record = read_record_csv(*config.record_path);
    require(record.size() >= config.n_steps, "record is shorter than n_steps");
  } else {
    record = simulate_data(model, config.n_steps, split_seed(config.seed, kDataStream)).record;
  }
  validate_record(model, record);
  return record;
}

/// Policy strings with bare rule names (arpf, simple, random, greedy)
/// expanded over every tau.
inline std::vector<std::string> expand_policies(const ExperimentConfig& config) {
  std::vector<std::string> out;
  for (const auto& p : config.policies) {
    if (p == "arpf" || p == "simple" || p == "random" || p == "greedy") {
      for (double t : config.taus) out.push_back(p + ":" + format_real(t));
    } else {
      out.push_back(p);
    }
  }
  return out;
}

/// Threshold of an ESS-enforcing policy, if any.
inline std::optional<double> policy_threshold(const AdaptationPolicy& p) {
  if (auto a = std::get_if<ArpfPolicy>(&p)) return a->tau;
  if (auto b = std::get_if<AdaptiveBlocksPolicy>(&p)) return b->tau;
  return std::nullopt;
}

inline std::string file_safe(std::string s) {
  for (char& c : s)
    if (c == ':' || c == '/' || c == ' ') c = '_';
  return s;
}

inline std::ofstream open_output(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / name);
  if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
  return os;
}

/// Two sticky states with overlapping Gaussian emissions (means 0 and 1,
/// sd 1). Default model of the finite-state demos.
inline FiniteStateModel demo_finite_state() {
  return FiniteStateModel::gaussian({0.5, 0.5}, {0.9, 0.1, 0.1, 0.9}, {0.0, 1.0}, 1.0);
}

// ---------------------------------------------------------------------------
// Oracle output

/// `t,mean,variance,logZ` for the predictive laws pi_0..pi_T.
inline void write_kalman_csv(std::ostream& os, const std::vector<PredictiveMoments>& pred) {
  os << "t,mean,variance,logZ\n";
  for (std::size_t t = 0; t < pred.size(); ++t) {
    os << t << ',' << format_real(pred[t].mean) << ',' << format_real(pred[t].variance) << ','
       << format_real(pred[t].log_marginal_likelihood) << '\n';
  }
}

/// `t,p_1,...,p_S,logZ` for the predictive laws pi_0..pi_T.
inline void write_discrete_csv(std::ostream& os, const std::vector<DiscretePredictive>& pred) {
  os << "t";
  const std::size_t s = pred.empty() ? 0 : pred.front().probabilities.size();
  for (std::size_t k = 0; k < s; ++k) os << ",p_" << (k + 1);
  os << ",logZ\n";
  for (std::size_t t = 0; t < pred.size(); ++t) {
    os << t;
    for (double p : pred[t].probabilities) os << ',' << format_real(p);
    os << ',' << format_real(pred[t].log_marginal_likelihood) << '\n';
  }
}

// ---------------------------------------------------------------------------
// trace

struct PolicyTrace {
  std::string policy;
  std::vector<StepDiagnostics> diagnostics;
};

/// One run per policy on a shared record; writes trace_<policy>.csv restricted
/// to the configured window.
inline std::vector<PolicyTrace> trace_experiment(const ExperimentConfig& config, bool write = true) {
  config.validate();
  return std::visit(
      [&](const auto& model) {
        using State = typename std::decay_t<decltype(model)>::state_type;
        const auto record = load_or_simulate(model, config);
        const auto policies = expand_policies(config);
        std::vector<PolicyTrace> out(policies.size());
        for (std::size_t k = 0; k < policies.size(); ++k) {
          const auto policy = parse_policy(policies[k], config.particles);
          RunOptions<State> opt;
          opt.test_functions = test_functions_for<State>(config.test_functions);
          const auto trace = run(model, record, policy, config.particles, config.n_steps,
                                 split_seed(config.seed, k), opt);
          if (write) {
            auto os = open_output(config.out_dir, "trace_" + file_safe(policies[k]) + ".csv");
            write_trace_csv(os, trace, config.window_from, config.window_to);
          }
          out[k] = {policies[k], trace.diagnostics};
        }
        return out;
      },
      config.model);
}

// ---------------------------------------------------------------------------
// khist

struct KHistogram {
  std::string policy;
  int max_k = 0;
  std::vector<double> first_half;   // frequency of K = 0..max_k
  std::vector<double> second_half;
  double fraction_above_one = 0.0;  // over both halves
  double total_variation = 0.0;     // between the halves
  std::vector<int> distinct_k;
};

/// Frequencies of K_n after burn-in, split into two equal time halves.
inline std::vector<KHistogram> khist_experiment(const ExperimentConfig& config, bool write = true) {
  require(config.n_steps > config.burn_in + 1, "khist: run is shorter than the burn-in");
  auto traces = trace_experiment(config, false);
  const int m = floor_log2(config.particles);
  std::vector<KHistogram> out;
  for (const auto& t : traces) {
    KHistogram h;
    h.policy = t.policy;
    h.max_k = m;
    h.first_half.assign(m + 1, 0.0);
    h.second_half.assign(m + 1, 0.0);
    // Diagnostics row n describes alpha_{n-1}; rows 1..n_steps carry a choice.
    const std::size_t start = config.burn_in + 1;
    const std::size_t count = config.n_steps + 1 - start;
    const std::size_t half = count / 2;
    std::size_t above = 0;
    std::vector<bool> seen(m + 1, false);
    for (std::size_t i = 0; i < 2 * half; ++i) {
      const int k = t.diagnostics[start + i].k_n;
      (i < half ? h.first_half : h.second_half)[k] += 1.0 / static_cast<double>(half);
      if (k > 1) ++above;
      seen[k] = true;
    }
    h.fraction_above_one = static_cast<double>(above) / static_cast<double>(2 * half);
    for (int k = 0; k <= m; ++k) {
      h.total_variation += 0.5 * std::abs(h.first_half[k] - h.second_half[k]);
      if (seen[k]) h.distinct_k.push_back(k);
    }
    out.push_back(std::move(h));
  }
  if (write) {
    auto os = open_output(config.out_dir, "khist.csv");
    os << "policy,k,first_half,second_half\n";
    for (const auto& h : out)
      for (int k = 0; k <= h.max_k; ++k)
        os << h.policy << ',' << k << ',' << format_real(h.first_half[k]) << ','
           << format_real(h.second_half[k]) << '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// ess-growth

struct EssGrowth {
  std::string rule;
  std::vector<double> mean_ess;  // k = 0..m
};

/// Time-averaged E at every k for Simple, Random and Greedy at taus[0], with
/// the adaptation loop probing all k.
inline std::vector<EssGrowth> ess_growth_experiment(const ExperimentConfig& config, bool write = true) {
  config.validate();
  require(is_power_of_two(config.particles), "ess-growth: particles must be a power of two");
  require(config.n_steps > config.burn_in, "ess-growth: run is shorter than the burn-in");
  const double tau = config.taus.empty() ? 0.6 : config.taus.front();
  const int m = floor_log2(config.particles);
  std::vector<EssGrowth> out;
  std::visit(
      [&](const auto& model) {
        const auto record = load_or_simulate(model, config);
        const AdaptationRule rules[] = {AdaptationRule::simple, AdaptationRule::random,
                                        AdaptationRule::greedy};
        for (std::size_t r = 0; r < 3; ++r) {
          const AdaptationPolicy policy = AdaptiveBlocksPolicy{rules[r], tau, true};
          auto sys = init(model, config.particles, split_seed(config.seed, r));
          std::vector<double> sum(m + 1, 0.0);
          std::size_t used = 0;
          for (std::size_t t = 0; t < config.n_steps; ++t) {
            auto res = step(sys, model, record[t], policy, StepOptions{nullptr, true});
            if (t + 1 <= config.burn_in) continue;
            const auto& traj = res.detail->ess_trajectory;
            for (int k = 0; k <= m; ++k) sum[k] += traj[k];
            ++used;
          }
          for (double& v : sum) v /= static_cast<double>(used);
          out.push_back({rule_name(rules[r]), std::move(sum)});
        }
      },
      config.model);
  if (write) {
    auto os = open_output(config.out_dir, "ess_growth.csv");
    os << "k,simple,random,greedy\n";
    for (int k = 0; k <= m; ++k)
      os << k << ',' << format_real(out[0].mean_ess[k]) << ',' << format_real(out[1].mean_ess[k]) << ','
         << format_real(out[2].mean_ess[k]) << '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// mse

struct MseRow {
  std::string policy;
  std::string phi;
  std::string estimand;  // lag_smoother, filter or predictor
  double mse = 0.0;
  double se = 0.0;
  std::size_t replicates = 0;
  std::vector<double> per_replicate;  // time-averaged squared error of each replicate
};

struct MseReport {
  std::vector<MseRow> rows;
  std::string reference;  // "exact" or "bpf"
  const MseRow& find(const std::string& policy, const std::string& phi, const std::string& estimand) const {
    for (const auto& r : rows)
      if (r.policy == policy && r.phi == phi && r.estimand == estimand) return r;
    throw ValidationError("no MSE row for " + policy + "/" + phi + "/" + estimand);
  }
};

inline const char* const kEstimands[] = {"lag_smoother", "filter", "predictor"};

namespace detail {

// Estimates per time index n = 0..T-1 and test function:
//   [0] phi(X_{n-lag}) given y_{0:n} (n >= lag), [1] phi(X_n) given y_{0:n},
//   [2] phi(X_n) given y_{0:n-1}.
using EstimateTable = std::array<std::vector<std::vector<double>>, 3>;

template <class M>
EstimateTable particle_estimates(const M& model, const ObservationRecord& record, const AdaptationPolicy& policy,
                                 std::size_t n_part, std::size_t n_steps, std::size_t lag, std::uint64_t seed,
                                 const std::vector<TestFunction<typename M::state_type>>& phis) {
  EstimateTable table;
  for (auto& t : table) t.assign(n_steps, std::vector<double>(phis.size(), std::nan("")));
  auto sys = init(model, n_part, seed, InitOptions{lag, std::nullopt});
  for (std::size_t n = 0; n < n_steps; ++n) {
    const auto upd = updated_log_weights(sys, model, record[n]);
    for (std::size_t f = 0; f < phis.size(); ++f) {
      table[2][n][f] = estimate_filter(sys, phis[f]);
      table[1][n][f] = weighted_estimate<typename M::state_type>(upd, sys.states(), phis[f]);
      if (n >= lag) table[0][n][f] = lag_smoother_estimate(sys, lag, phis[f], upd);
    }
    step(sys, model, record[n], policy);
  }
  return table;
}

inline double gaussian_expectation(const std::string& phi, double mean, double var) {
  if (phi == "x") return mean;
  if (phi == "x2") return mean * mean + var;
  if (phi == "exp_half") return std::exp(0.5 * mean + 0.125 * var);
  throw ValidationError("unknown test function '" + phi + "'");
}

// Overwrites the filter and predictor rows with exact values when the model
// has an oracle.
template <class M>
bool exact_reference(const M& model, const ObservationRecord& record, std::size_t n_steps,
                     const std::vector<std::string>& names, EstimateTable& table) {
  ObservationRecord head = record;
  head.observations.resize(n_steps);
  if constexpr (std::is_same_v<M, LinearGaussianModel>) {
    const auto k = kalman_filter(model, head);
    for (std::size_t n = 0; n < n_steps; ++n)
      for (std::size_t f = 0; f < names.size(); ++f) {
        table[1][n][f] = gaussian_expectation(names[f], k.filtered[n].mean, k.filtered[n].variance);
        table[2][n][f] = gaussian_expectation(names[f], k.predictive[n].mean, k.predictive[n].variance);
      }
    return true;
  } else if constexpr (std::is_same_v<M, FiniteStateModel>) {
    const auto d = discrete_forward_full(model, head);
    for (std::size_t n = 0; n < n_steps; ++n)
      for (std::size_t f = 0; f < names.size(); ++f) {
        const auto phi = scalar_test_function(names[f]);
        double filt = 0.0, pred = 0.0;
        for (std::size_t s = 0; s < model.state_count(); ++s) {
          filt += d.filtered[n][s] * phi(static_cast<double>(s));
          pred += d.predictive[n].probabilities[s] * phi(static_cast<double>(s));
        }
        table[1][n][f] = filt;
        table[2][n][f] = pred;
      }
    return true;
  } else {
    return false;
  }
}

}  // namespace detail

/// Mean squared error against a reference, averaged over time steps n >=
/// burn_in and over replicates. The reference is a BPF with
/// reference_particles (lag smoother always; filter and predictor unless the
/// model has an exact oracle).
inline MseReport mse_experiment(const ExperimentConfig& config, bool write = true) {
  config.validate();
  require(config.lag < config.n_steps, "mse: lag must be smaller than n_steps");
  require(config.burn_in < config.n_steps, "mse: run is shorter than the burn-in");
  MseReport report;
  std::visit(
      [&](const auto& model) {
        using M = std::decay_t<decltype(model)>;
        using State = typename M::state_type;
        const auto record = load_or_simulate(model, config);
        const auto phis = test_functions_for<State>(config.test_functions);
        auto reference = detail::particle_estimates(model, record, FixedPolicy{InteractionSpec::full()},
                                                    config.reference_particles, config.n_steps, config.lag,
                                                    split_seed(config.seed, kReferenceStream), phis);
        report.reference =
            detail::exact_reference(model, record, config.n_steps, config.test_functions, reference) ? "exact"
                                                                                                      : "bpf";
        const auto policies = expand_policies(config);
        for (const auto& name : policies) {
          const auto policy = parse_policy(name, config.particles);
          // errors[r][estimand][phi]
          std::vector<std::array<std::vector<double>, 3>> errors(config.replicates);
          parallel_for(config.replicates, config.threads, [&](std::size_t r) {
            const auto est = detail::particle_estimates(model, record, policy, config.particles, config.n_steps,
                                                        config.lag, split_seed(config.seed, r), phis);
            for (std::size_t e = 0; e < 3; ++e) {
              errors[r][e].assign(phis.size(), 0.0);
              std::size_t used = 0;
              for (std::size_t n = config.burn_in; n < config.n_steps; ++n) {
                if (e == 0 && n < config.lag) continue;
                if (e == 2 && n == 0) continue;
                for (std::size_t f = 0; f < phis.size(); ++f) {
                  const double d = est[e][n][f] - reference[e][n][f];
                  errors[r][e][f] += d * d;
                }
                ++used;
              }
              for (double& v : errors[r][e]) v /= static_cast<double>(std::max<std::size_t>(used, 1));
            }
          });
          for (std::size_t e = 0; e < 3; ++e)
            for (std::size_t f = 0; f < phis.size(); ++f) {
              MseRow row{name, config.test_functions[f], kEstimands[e], 0.0, 0.0, config.replicates, {}};
              for (std::size_t r = 0; r < config.replicates; ++r) row.per_replicate.push_back(errors[r][e][f]);
              double mean = 0.0;
              for (double v : row.per_replicate) mean += v;
              mean /= static_cast<double>(config.replicates);
              double ss = 0.0;
              for (double v : row.per_replicate) ss += (v - mean) * (v - mean);
              row.mse = mean;
              row.se = config.replicates > 1
                           ? std::sqrt(ss / static_cast<double>(config.replicates - 1) /
                                       static_cast<double>(config.replicates))
                           : 0.0;
              report.rows.push_back(std::move(row));
            }
        }
      },
      config.model);
  if (write) {
    auto os = open_output(config.out_dir, "mse.csv");
    os << "policy,phi,estimand,mse,se,replicates,reference\n";
    for (const auto& r : report.rows)
      os << r.policy << ',' << r.phi << ',' << r.estimand << ',' << format_real(r.mse) << ','
         << format_real(r.se) << ',' << r.replicates << ',' << report.reference << '\n';
  }
  return report;
}

/// Mean and standard error of the paired differences a[r] - b[r].
inline std::pair<double, double> paired_difference(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, "paired_difference: need matching samples");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) mean += a[r] - b[r];
  mean /= n;
  double ss = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) ss += (a[r] - b[r] - mean) * (a[r] - b[r] - mean);
  return {mean, std::sqrt(ss / (n - 1) / n)};
}

// ---------------------------------------------------------------------------
// naive-demo

struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanEstimate mean_and_se(const std::vector<double>& v) {
  require(!v.empty(), "mean_and_se: no samples");
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0};
}

struct NaiveDemoReport {
  double oracle = 0.0;        // pi_n(phi)
  MeanEstimate weighted;      // block-design estimator
  MeanEstimate naive;         // unweighted average of the per-block filters
  MeanEstimate z_ratio;       // Z_n^N / Z_n
  double weighted_z = 0.0;    // (mean - oracle) / se
  double naive_z = 0.0;
  double z_ratio_z = 0.0;
};

/// blocks:<q> on N = q*s particles versus averaging s independent q-particle
/// filters with equal weight. phi is test_functions[0] applied to the label.
inline NaiveDemoReport naive_demo_experiment(const ExperimentConfig& config, bool write = true) {
  config.validate();
  const auto* model = std::get_if<FiniteStateModel>(&config.model);
  require(model != nullptr, "naive-demo needs a finite_state model");
  const std::size_t q = config.block_size, s = config.blocks, n = q * s;
  const auto record = load_or_simulate(*model, config);
  ObservationRecord head = record;
  head.observations.resize(config.n_steps);
  const auto exact = discrete_forward(*model, head);
  const auto phi = scalar_test_function(config.test_functions.at(0));
  NaiveDemoReport rep;
  for (std::size_t k = 0; k < model->state_count(); ++k)
    rep.oracle += exact[config.n_steps].probabilities[k] * phi(static_cast<double>(k));
  const double log_z = exact[config.n_steps].log_marginal_likelihood;
  const AdaptationPolicy policy = FixedPolicy{make_block_diagonal(n, q)};
  std::vector<double> weighted(config.replicates), naive(config.replicates), ratio(config.replicates);
  parallel_for(config.replicates, config.threads, [&](std::size_t r) {
    const auto trace = run(*model, record, policy, n, config.n_steps, split_seed(config.seed, r));
    const auto& sys = trace.final_system;
    weighted[r] = estimate_filter(sys, [&](std::size_t x) { return phi(static_cast<double>(x)); });
    // Weights are constant within blocks, so each block's own estimate is a
    // plain average and the equal-weight mean of them is the overall average.
    double sum = 0.0;
    for (auto x : sys.states()) sum += phi(static_cast<double>(x));
    naive[r] = sum / static_cast<double>(n);
    ratio[r] = std::exp(sys.log_normalizer() - log_z);
  });
  rep.weighted = mean_and_se(weighted);
  rep.naive = mean_and_se(naive);
  rep.z_ratio = mean_and_se(ratio);
  auto score = [](const MeanEstimate& e, double target) {
    return e.se > 0.0 ? (e.mean - target) / e.se : (e.mean == target ? 0.0 : INFINITY);
  };
  rep.weighted_z = score(rep.weighted, rep.oracle);
  rep.naive_z = score(rep.naive, rep.oracle);
  rep.z_ratio_z = score(rep.z_ratio, 1.0);
  if (write) {
    auto per = open_output(config.out_dir, "naive_replicates.csv");
    per << "replicate,weighted,naive,z_ratio\n";
    for (std::size_t r = 0; r < config.replicates; ++r)
      per << r << ',' << format_real(weighted[r]) << ',' << format_real(naive[r]) << ','
          << format_real(ratio[r]) << '\n';
    auto os = open_output(config.out_dir, "naive_summary.csv");
    os << "estimator,mean,se,target,z_score\n";
    os << "weighted," << format_real(rep.weighted.mean) << ',' << format_real(rep.weighted.se) << ','
       << format_real(rep.oracle) << ',' << format_real(rep.weighted_z) << '\n';
    os << "naive," << format_real(rep.naive.mean) << ',' << format_real(rep.naive.se) << ','
       << format_real(rep.oracle) << ',' << format_real(rep.naive_z) << '\n';
    os << "z_ratio," << format_real(rep.z_ratio.mean) << ',' << format_real(rep.z_ratio.se) << ",1,"
       << format_real(rep.z_ratio_z) << '\n';
  }
  return rep;
}

// ---------------------------------------------------------------------------
// hub-demo

struct BetaRow {
  std::size_t particles = 0;
  std::string matrix;  // star, star_lazy, blocks, to_hub
  double max_beta = 0.0;
  double min_beta = 0.0;
};

struct HubDemoReport {
  std::size_t steps = 0;
  bool collapsed_to_hub = false;  // every state equals zeta_0^1 for n >= 1
  double max_filter_error = 0.0;  // |pi_n^N(x) - zeta_0^1|
  std::vector<BetaRow> beta;
};

/// Delta dynamics (a = 1, zero state noise) under the to-hub interaction,
/// then beta vectors for star walks and block designs over the particle grid.
inline HubDemoReport hub_demo_experiment(const ExperimentConfig& config, bool write = true) {
  config.validate();
  LinearGaussianModel model;
  if (const auto* lg = std::get_if<LinearGaussianModel>(&config.model)) model = *lg;
  model.a = 1.0;
  model.state_noise_sd = 0.0;
  const auto record = simulate_data(model, config.n_steps, split_seed(config.seed, kDataStream)).record;
  const std::size_t n = config.particles;
  HubDemoReport rep;
  rep.steps = config.n_steps;
  rep.collapsed_to_hub = true;
  auto sys = init(model, n, split_seed(config.seed, 0));
  const double hub = sys.states()[0];
  const AdaptationPolicy policy = DenseSequencePolicy{{make_to_hub(n)}};
  for (std::size_t t = 0; t < config.n_steps; ++t) {
    step(sys, model, record[t], policy);
    for (double x : sys.states()) rep.collapsed_to_hub = rep.collapsed_to_hub && x == hub;
    rep.max_filter_error =
        std::max(rep.max_filter_error, std::abs(estimate_filter(sys, [](double x) { return x; }) - hub));
  }
  for (std::size_t np : config.particle_grid) {
    auto add = [&](const std::string& name, const InteractionSpec& spec) {
      const std::vector<InteractionSpec> seq(config.gap, spec);
      const auto beta = beta_vectors(seq, config.gap, np);
      const auto& row = beta.front();
      rep.beta.push_back({np, name, *std::max_element(row.begin(), row.end()),
                          *std::min_element(row.begin(), row.end())});
    };
    if (np >= 3) {
      add("star", InteractionSpec(make_star_walk(np, 0.0)));
      add("star_lazy", InteractionSpec(make_star_walk(np, config.laziness)));
    }
    if (np % config.block_size == 0) add("blocks", make_block_diagonal(np, config.block_size));
    add("to_hub", InteractionSpec(make_to_hub(np)));
  }
  if (write) {
    auto os = open_output(config.out_dir, "hub_beta.csv");
    os << "N,matrix,gap,max_beta,min_beta\n";
    for (const auto& b : rep.beta)
      os << b.particles << ',' << b.matrix << ',' << config.gap << ',' << format_real(b.max_beta) << ','
         << format_real(b.min_beta) << '\n';
    auto sum = open_output(config.out_dir, "hub_summary.csv");
    sum << "steps,collapsed_to_hub,max_filter_error\n"
        << rep.steps << ',' << (rep.collapsed_to_hub ? 1 : 0) << ',' << format_real(rep.max_filter_error) << '\n';
  }
  return rep;
}

// ---------------------------------------------------------------------------
// unbiasedness

struct UnbiasednessRow {
  std::string policy;
  MeanEstimate ratio;       // Z_n^N / Z_n
  double z_score = 0.0;     // (mean - 1) / se
  double min_ess = 1.0;     // over every step of every replicate
  std::size_t violations = 0;  // steps with E_n^N < tau for threshold policies
  std::size_t replicates = 0;
};

/// log Z_n from the exact oracle of the configured model.
inline double exact_log_z(const AnyModel& model, const ObservationRecord& record, std::size_t n) {
  ObservationRecord head = record;
  head.observations.resize(n);
  if (const auto* lg = std::get_if<LinearGaussianModel>(&model))
    return kalman_predictive(*lg, head).back().log_marginal_likelihood;
  if (const auto* fs = std::get_if<FiniteStateModel>(&model))
    return discrete_forward(*fs, head).back().log_marginal_likelihood;
  throw ValidationError("unbiasedness needs a model with an exact likelihood (linear_gaussian or finite_state)");
}

/// Mean of Z_n^N / Z_n over replicates for each policy, plus ESS enforcement
/// counts for threshold policies.
inline std::vector<UnbiasednessRow> unbiasedness_experiment(const ExperimentConfig& config, bool write = true) {
  config.validate();
  std::vector<UnbiasednessRow> rows;
  std::visit(
      [&](const auto& model) {
        const auto record = load_or_simulate(model, config);
        const double log_z = exact_log_z(config.model, record, config.n_steps);
        for (const auto& name : expand_policies(config)) {
          const auto policy = parse_policy(name, config.particles);
          const auto tau = policy_threshold(policy);
          std::vector<double> ratio(config.replicates), min_ess(config.replicates);
          std::vector<std::size_t> bad(config.replicates);
          parallel_for(config.replicates, config.threads, [&](std::size_t r) {
            auto sys = init(model, config.particles, split_seed(config.seed, r));
            double lo = 1.0;
            std::size_t v = 0;
            for (std::size_t t = 0; t < config.n_steps; ++t) {
              const auto d = step(sys, model, record[t], policy).diagnostics;
              lo = std::min(lo, d.ess_coeff);
              if (tau && d.ess_coeff < *tau) ++v;
            }
            ratio[r] = std::exp(sys.log_normalizer() - log_z);
            min_ess[r] = lo;
            bad[r] = v;
          });
          UnbiasednessRow row;
          row.policy = name;
          row.ratio = mean_and_se(ratio);
          row.z_score = row.ratio.se > 0 ? (row.ratio.mean - 1.0) / row.ratio.se : 0.0;
          row.min_ess = *std::min_element(min_ess.begin(), min_ess.end());
          for (auto b : bad) row.violations += b;
          row.replicates = config.replicates;
          rows.push_back(std::move(row));
        }
      },
      config.model);
  if (write) {
    auto os = open_output(config.out_dir, "unbiasedness.csv");
    os << "policy,mean_ratio,se,z_score,replicates,min_ess,ess_violations\n";
    for (const auto& r : rows)
      os << r.policy << ',' << format_real(r.ratio.mean) << ',' << format_real(r.ratio.se) << ','
         << format_real(r.z_score) << ',' << r.replicates << ',' << format_real(r.min_ess) << ','
         << r.violations << '\n';
  }
  return rows;
}

// ---------------------------------------------------------------------------
// complexity

struct ComplexityPoint {
  std::size_t particles = 0;
  double ops_per_call = 0.0;
};

/// Counted operations of one adaptive selection plus the weight update, with
/// tau = 1 so the loop always runs to k = m. Averaged over `calls` random
/// weight vectors.
inline std::vector<ComplexityPoint> complexity_counts(AdaptationRule rule, const std::vector<std::size_t>& grid,
                                                      std::size_t calls, std::uint64_t seed) {
  std::vector<ComplexityPoint> out;
  for (std::size_t n : grid) {
    Rng rng(split_seed(seed, n));
    OpCounter counter;
    std::vector<double> u(n);
    for (std::size_t c = 0; c < calls; ++c) {
      for (double& v : u) v = 2.0 * rng.normal();
      const auto sel = adapt_select(u, rule, 1.0, rng, AdaptOptions{&counter});
      propagate_weights(sel.spec, u, 1, &counter);
    }
    out.push_back({n, static_cast<double>(counter.ops) / static_cast<double>(calls)});
  }
  return out;
}

/// Least-squares slope of log y against log x.
inline double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "log_log_slope: need two or more points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace asmc

#endif  // ASMC_EXPERIMENTS_HPP
