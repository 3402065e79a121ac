#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "asmc/engine.hpp"
#include "asmc/oracles.hpp"

using namespace asmc;

namespace {

FiniteStateModel three_state() {
  return FiniteStateModel::gaussian({0.5, 0.3, 0.2}, {0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.1, 0.3, 0.6},
                                    {-1.0, 0.0, 1.5}, 0.8);
}

// Potential log c_n added on top of the base model at one chosen time.
struct ShiftedModel {
  using state_type = double;
  using observation_type = double;
  static constexpr StateKind state_kind = StateKind::scalar_real;
  static constexpr const char* tag = "shifted";
  LinearGaussianModel base;
  std::size_t at = 0;
  double log_c = 0.0;
  double sample_prior(Rng& rng) const { return base.sample_prior(rng); }
  double sample_transition(double x, Rng& rng) const { return base.sample_transition(x, rng); }
  double log_potential(double x, double y, std::size_t n) const {
    return base.log_potential(x, y, n) + (n == at ? log_c : 0.0);
  }
};

// Potential that depends on nothing: every particle gets log c.
struct FlatModel {
  using state_type = double;
  using observation_type = double;
  static constexpr StateKind state_kind = StateKind::scalar_real;
  static constexpr const char* tag = "flat";
  double log_c = std::log(0.3);
  double sample_prior(Rng& rng) const { return rng.normal(); }
  double sample_transition(double x, Rng& rng) const { return x + rng.normal(); }
  double log_potential(double, double, std::size_t) const { return log_c; }
};

double spread(const std::vector<double>& v) {
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

}  // namespace

TEST(Init, SingleParticleAndUnitNormalizer) {
  LinearGaussianModel m;
  auto sys = init(m, 1, 3);
  EXPECT_EQ(sys.size(), 1u);
  EXPECT_EQ(sys.log_normalizer(), 0.0);
  EXPECT_EQ(estimate_log_z(sys), 0.0);
  EXPECT_EQ(sys.ess_coeff(), 1.0);
  EXPECT_EQ(sys.step(), 0u);
  EXPECT_NEAR(log_sum_exp(sys.log_weights()), 0.0, 1e-15);
}

TEST(Init, Deterministic) {
  StochasticVolatilityModel m;
  auto a = init(m, 100, 42);
  auto b = init(m, 100, 42);
  auto c = init(m, 100, 43);
  EXPECT_EQ(a.states(), b.states());
  EXPECT_NE(a.states(), c.states());
  EXPECT_THROW(init(m, 0, 1), ValidationError);
}

TEST(Ess, Examples) {
  const double z = kNegInf;
  EXPECT_NEAR(ess_coefficient(std::vector<double>(5, -3.0)), 1.0, 1e-15);
  EXPECT_NEAR(ess_coefficient(std::vector<double>{0.0, z, z, z}), 0.25, 1e-15);
  EXPECT_NEAR(ess_coefficient(std::vector<double>{std::log(0.5), std::log(0.5), z, z}), 0.5, 1e-15);
  EXPECT_THROW(ess_coefficient(std::vector<double>{z, z}), NumericalError);
}

TEST(Ess, BoundsOnRandomWeights) {
  Rng rng(9);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> w(17);
    for (double& v : w) v = 5.0 * rng.normal();
    const double e = ess_coefficient(w);
    EXPECT_GE(e, 1.0 / 17 - 1e-15);
    EXPECT_LE(e, 1.0);
  }
}

TEST(Step, SisKeepsProductWeightsAndIdentityAncestry) {
  LinearGaussianModel m;
  const auto data = simulate_data(m, 20, 1);
  auto sys = init(m, 8, 2, InitOptions{20, std::nullopt});
  std::vector<double> log_prod(8, 0.0);
  const auto policy = FixedPolicy{InteractionSpec::identity()};
  for (std::size_t t = 0; t < 20; ++t) {
    for (std::size_t i = 0; i < 8; ++i) log_prod[i] += m.log_potential(sys.states()[i], data.record[t], t);
    const auto r = step(sys, m, data.record[t], policy);
    EXPECT_EQ(r.diagnostics.k_n, 0);
    EXPECT_EQ(r.diagnostics.degree, 1u);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(sys.ancestors()[i], i);
    const double norm = log_sum_exp(log_prod);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(sys.log_weights()[i], log_prod[i] - norm, 1e-9);
    EXPECT_NEAR(sys.log_normalizer(), norm - std::log(8.0), 1e-9);
  }
}

TEST(Step, BpfCollapsesWeightsAndMultipliesMeans) {
  StochasticVolatilityModel m;
  const auto data = simulate_data(m, 20, 5);
  auto sys = init(m, 8, 6);
  double log_z = 0.0;
  for (std::size_t t = 0; t < 20; ++t) {
    const auto g = log_potential_vector(m, std::span<const double>(sys.states()), data.record[t], t);
    log_z += log_sum_exp(g) - std::log(8.0);
    const auto r = step(sys, m, data.record[t], FixedPolicy{InteractionSpec::full()});
    EXPECT_LT(spread(sys.log_weights()), 1e-12);
    EXPECT_EQ(r.diagnostics.ess_coeff, 1.0);
    EXPECT_EQ(r.diagnostics.degree, 8u);
    EXPECT_EQ(r.diagnostics.k_n, 3);
    EXPECT_NEAR(sys.log_normalizer(), log_z, 1e-9);
  }
}

TEST(Step, SwapMatrixSwapsWeights) {
  const std::vector<double> u{std::log(0.2), std::log(0.7)};
  const auto w = propagate_weights(InteractionSpec(DenseStochasticMatrix(2, {0, 1, 1, 0})), u, 1);
  EXPECT_NEAR(std::exp(w.log_weights[0] + w.log_increment), 0.7, 1e-15);
  EXPECT_NEAR(std::exp(w.log_weights[1] + w.log_increment), 0.2, 1e-15);
}

TEST(Step, RecursiveWeightsMatchPathEnumeration) {
  Rng rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n_part = 2 + rep % 3;
    const std::size_t steps = 1 + (rep / 3) % 3;
    std::vector<DenseStochasticMatrix> alphas;
    std::vector<std::vector<double>> pots(steps, std::vector<double>(n_part));
    for (std::size_t p = 0; p < steps; ++p) {
      std::vector<double> e(n_part * n_part);
      for (std::size_t i = 0; i < n_part; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n_part; ++j) s += (e[i * n_part + j] = rng.uniform());
        for (std::size_t j = 0; j < n_part; ++j) e[i * n_part + j] /= s;
      }
      alphas.emplace_back(n_part, std::move(e));
      for (double& g : pots[p]) g = 0.05 + 3.0 * rng.uniform();
    }
    std::vector<double> lw(n_part, -std::log(static_cast<double>(n_part)));
    double offset = std::log(static_cast<double>(n_part));
    for (std::size_t p = 0; p < steps; ++p) {
      std::vector<double> u(n_part);
      for (std::size_t i = 0; i < n_part; ++i) u[i] = lw[i] + std::log(pots[p][i]);
      const auto w = propagate_weights(InteractionSpec(alphas[p]), u, p + 1);
      lw = w.log_weights;
      offset += w.log_increment;
    }
    const auto exact = enumerate_weights(alphas, pots, steps);
    for (std::size_t i = 0; i < n_part; ++i) {
      EXPECT_NEAR(std::exp(lw[i] + offset) / exact[i], 1.0, 1e-12);
    }
  }
}

TEST(Step, AllZeroBlockNamesStepAndBlock) {
  const std::vector<double> u{0.0, 0.0, kNegInf, kNegInf};
  try {
    propagate_weights(make_block_diagonal(4, 2), u, 7);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("block 1"), std::string::npos);
  }
  // A single zero weight under SIS is harmless.
  EXPECT_NO_THROW(propagate_weights(InteractionSpec::identity(), u, 1));
  EXPECT_THROW(propagate_weights(InteractionSpec::identity(), std::vector<double>(3, kNegInf), 1),
               NumericalError);
}

TEST(Step, ZeroPotentialsEverywhereIsAnError) {
  FiniteStateModel m({1.0, 0.0}, {1.0, 0.0, 0.0, 1.0},
                     [](std::size_t s, double) { return s == 0 ? kNegInf : 0.0; });
  auto sys = init(m, 4, 1);
  EXPECT_THROW(step(sys, m, 0.0, FixedPolicy{InteractionSpec::full()}), NumericalError);
}

TEST(Step, EssStaysInBounds) {
  StochasticVolatilityModel m;
  const auto data = simulate_data(m, 100, 3);
  for (const char* p : {"sis", "bpf", "arpf:0.5", "simple:0.5", "random:0.7", "greedy:0.3", "blocks:4"}) {
    const auto trace = run(m, data.record, parse_policy(p, 16), 16, 100, 4);
    for (const auto& d : trace.diagnostics) {
      EXPECT_GE(d.ess_coeff, 1.0 / 16 - 1e-12) << p;
      EXPECT_LE(d.ess_coeff, 1.0) << p;
      EXPECT_DOUBLE_EQ(d.n_eff, 16 * d.ess_coeff);
    }
  }
}

TEST(Estimate, ConstantsAndIndicator) {
  StochasticVolatilityModel m;
  const auto data = simulate_data(m, 5, 3);
  auto trace = run(m, data.record, ArpfPolicy{0.9}, 32, 5, 8);
  const auto& sys = trace.final_system;
  EXPECT_NEAR(estimate_filter(sys, [](double) { return 1.0; }), 1.0, 1e-15);
  EXPECT_NEAR(estimate_filter(sys, [](double) { return -2.5; }), -2.5, 1e-14);
  auto fresh = init(m, 32, 9);
  const double first = fresh.states()[0];
  EXPECT_NEAR(estimate_filter(fresh, [&](double x) { return x == first ? 1.0 : 0.0; }), 1.0 / 32, 1e-15);
}

TEST(Estimate, LogZForSisWithConstantPotential) {
  FlatModel m;
  auto sys = init(m, 10, 1);
  EXPECT_EQ(estimate_log_z(sys), 0.0);
  step(sys, m, 0.0, FixedPolicy{InteractionSpec::identity()});
  EXPECT_NEAR(estimate_log_z(sys), std::log(0.3), 1e-15);
}

TEST(Lag, ZeroLagIsFilter) {
  StochasticVolatilityModel m;
  const auto data = simulate_data(m, 30, 3);
  RunOptions<double> opt;
  opt.max_lag = 5;
  auto trace = run(m, data.record, parse_policy("greedy:0.6", 64), 64, 30, 1, opt);
  const auto& sys = trace.final_system;
  auto phi = [](double x) { return x * x; };
  EXPECT_EQ(lag_smoother_estimate(sys, 0, phi), estimate_filter(sys, phi));
  EXPECT_EQ(sys.retained_lag(), 5u);
  EXPECT_NO_THROW(lag_smoother_estimate(sys, 5, phi));
  EXPECT_THROW(lag_smoother_estimate(sys, 6, phi), ValidationError);
}

TEST(Lag, SisAncestryIsIdentity) {
  LinearGaussianModel m;
  const auto data = simulate_data(m, 10, 2);
  RunOptions<double> opt;
  opt.max_lag = 4;
  auto trace = run(m, data.record, FixedPolicy{InteractionSpec::identity()}, 6, 10, 1, opt);
  for (std::size_t lag = 0; lag <= 4; ++lag)
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(trace.final_system.ancestor_index(i, lag), i);
}

TEST(Lag, HandTracedLineage) {
  using A = ParticleSystemAccess<double>;
  ParticleSystem<double> sys;
  A::states(sys) = {10.0, 20.0};
  A::past_states(sys) = {{1.0, 2.0}, {3.0, 4.0}};
  A::ancestors(sys) = {{1, 0}, {0, 1}};
  A::log_weights(sys) = {std::log(0.25), std::log(0.75)};
  A::step(sys) = 2;
  A::max_lag(sys) = 2;
  auto id = [](double x) { return x; };
  EXPECT_DOUBLE_EQ(lag_smoother_estimate(sys, 0, id), 17.5);
  EXPECT_DOUBLE_EQ(lag_smoother_estimate(sys, 1, id), 3.75);
  EXPECT_DOUBLE_EQ(lag_smoother_estimate(sys, 2, id), 1.25);
}

TEST(Lag, TooEarlyRejected) {
  LinearGaussianModel m;
  auto sys = init(m, 4, 1, InitOptions{5, std::nullopt});
  EXPECT_THROW(lag_smoother_estimate(sys, 1, [](double x) { return x; }), ValidationError);
}

TEST(Run, ZeroStepsHasOnlyInitialRow) {
  LinearGaussianModel m;
  const auto data = simulate_data(m, 3, 1);
  const auto trace = run(m, data.record, ArpfPolicy{0.5}, 8, 0, 1);
  ASSERT_EQ(trace.diagnostics.size(), 1u);
  EXPECT_EQ(trace.diagnostics[0].n, 0u);
  EXPECT_EQ(trace.diagnostics[0].log_z, 0.0);
  EXPECT_THROW(run(m, data.record, ArpfPolicy{0.5}, 8, 4, 1), ValidationError);
}

TEST(Run, BitIdenticalAcrossCalls) {
  StochasticVolatilityModel m;
  const auto data = simulate_data(m, 50, 1);
  RunOptions<double> opt;
  opt.test_functions = {[](const double& x) { return x; }};
  for (const char* p : {"random:0.6", "greedy:0.6", "bpf"}) {
    const auto a = run(m, data.record, parse_policy(p, 32), 32, 50, 11, opt);
    const auto b = run(m, data.record, parse_policy(p, 32), 32, 50, 11, opt);
    std::ostringstream sa, sb;
    write_trace_csv(sa, a);
    write_trace_csv(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(a.final_system.states(), b.final_system.states());
  }
}

TEST(Run, TraceCsvLayout) {
  LinearGaussianModel m;
  const auto data = simulate_data(m, 2, 1);
  RunOptions<double> opt;
  opt.test_functions = {[](const double& x) { return x; }, [](const double& x) { return x * x; }};
  const auto trace = run(m, data.record, FixedPolicy{InteractionSpec::full()}, 4, 2, 1, opt);
  std::ostringstream os;
  write_trace_csv(os, trace);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "n,ess_coeff,n_eff,k_n,degree,logZ,phi_1,phi_2");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 12), "0,1,4,0,1,0,");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 2);
}

TEST(Run, BpfAgreesWithForwardAlgorithm) {
  const auto m = three_state();
  const auto data = simulate_data(m, 25, 4);
  const auto exact = discrete_forward(m, data.record);
  constexpr int kReps = 20;
  std::vector<std::vector<double>> est(kReps);
  for (int r = 0; r < kReps; ++r) {
    auto trace = run(m, data.record, FixedPolicy{InteractionSpec::full()}, 10000, 25, split_seed(7, r));
    for (std::size_t s = 0; s < 3; ++s)
      est[r].push_back(estimate_filter(trace.final_system, [s](std::size_t x) { return x == s ? 1.0 : 0.0; }));
  }
  for (std::size_t s = 0; s < 3; ++s) {
    double mean = 0.0, sq = 0.0;
    for (int r = 0; r < kReps; ++r) mean += est[r][s];
    mean /= kReps;
    for (int r = 0; r < kReps; ++r) sq += (est[r][s] - mean) * (est[r][s] - mean);
    const double se = std::sqrt(sq / (kReps - 1) / kReps);
    EXPECT_LT(std::abs(mean - exact[25].probabilities[s]), 3 * se + 1e-12) << "state " << s;
  }
}

TEST(Run, BlocksEvolveLikeIndependentSmallFilters) {
  StochasticVolatilityModel m;
  const auto data = simulate_data(m, 30, 2);
  const std::size_t n = 16, q = 4;
  const auto spec = make_block_diagonal(n, q);
  RunOptions<double> opt;
  opt.block_streams = spec.blocks();
  const std::uint64_t seed = 99;
  const auto big = run(m, data.record, FixedPolicy{spec}, n, 30, seed, opt);
  double log_z_sum = 0.0;
  for (std::size_t b = 0; b < n / q; ++b) {
    const auto small = run(m, data.record, FixedPolicy{InteractionSpec::full()}, q, 30, split_seed(seed, b));
    for (std::size_t i = 0; i < q; ++i) {
      EXPECT_EQ(big.final_system.states()[b * q + i], small.final_system.states()[i]);
    }
    log_z_sum += std::exp(small.final_system.log_normalizer());
  }
  // Z^N of the block run is the mean of the block normalizers.
  EXPECT_NEAR(big.final_system.log_normalizer(), std::log(log_z_sum / (n / q)), 1e-9);
}

TEST(Run, ScalingPotentialsShiftsOnlyLogZ) {
  LinearGaussianModel base;
  const auto data = simulate_data(base, 30, 3);
  ShiftedModel plain{base, 12, 0.0};
  ShiftedModel scaled{base, 12, std::log(7.5)};
  RunOptions<double> opt;
  opt.test_functions = {[](const double& x) { return x; }};
  for (const char* p : {"arpf:0.6", "simple:0.6", "random:0.6", "greedy:0.6"}) {
    const auto a = run(plain, data.record, parse_policy(p, 64), 64, 30, 5, opt);
    const auto b = run(scaled, data.record, parse_policy(p, 64), 64, 30, 5, opt);
    for (std::size_t t = 0; t <= 30; ++t) {
      EXPECT_EQ(a.diagnostics[t].k_n, b.diagnostics[t].k_n) << p;
      EXPECT_NEAR(a.diagnostics[t].ess_coeff, b.diagnostics[t].ess_coeff, 1e-9);
      EXPECT_NEAR(a.estimates[t][0], b.estimates[t][0], 1e-9);
      EXPECT_NEAR(b.diagnostics[t].log_z - a.diagnostics[t].log_z, t > 12 ? std::log(7.5) : 0.0, 1e-9);
    }
  }
}

TEST(Run, DetailsRecordSpecsAndPotentials) {
  StochasticVolatilityModel m;
  const auto data = simulate_data(m, 10, 3);
  RunOptions<double> opt;
  opt.record_details = true;
  const auto trace = run(m, data.record, parse_policy("greedy:0.9", 16), 16, 10, 5, opt);
  ASSERT_EQ(trace.details.size(), 10u);
  ASSERT_EQ(trace.log_weight_history.size(), 11u);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_EQ(trace.details[t].spec.degree(16), trace.diagnostics[t + 1].degree);
    EXPECT_EQ(trace.details[t].log_potentials.size(), 16u);
    EXPECT_GE(trace.details[t].ess_trajectory.back(), 0.9);
  }
}
