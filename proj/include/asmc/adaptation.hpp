#ifndef ASMC_ADAPTATION_HPP
#define ASMC_ADAPTATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"
#include "ess.hpp"
#include "interaction.hpp"
#include "numeric.hpp"
#include "random.hpp"

namespace asmc {

/// Instrumentation for complexity checks: comparisons, merges and per-element
/// weight updates performed while selecting and applying an interaction.
struct OpCounter {
  std::uint64_t ops = 0;
  void add(std::uint64_t n = 1) { ops += n; }
};

inline void count(OpCounter* c, std::uint64_t n = 1) {
  if (c != nullptr) c->add(n);
}

enum class AdaptationRule { simple, random, greedy };

inline const char* rule_name(AdaptationRule r) {
  switch (r) {
    case AdaptationRule::simple: return "simple";
    case AdaptationRule::random: return "random";
    case AdaptationRule::greedy: return "greedy";
  }
  return "?";
}

struct FixedPolicy {
  InteractionSpec spec;
};

/// Resample (Full) when the ESS criterion of the pre-weights is strictly below tau.
struct ArpfPolicy {
  double tau = 0.5;
};

/// Smallest-degree B-matrix found by pairwise block merging that reaches tau.
struct AdaptiveBlocksPolicy {
  AdaptationRule rule = AdaptationRule::simple;
  double tau = 0.5;
  /// Evaluate E for every k = 0..m without changing the returned K.
  bool probe_all_k = false;
};

/// alpha_{n-1} = matrices[(n-1) mod size]; a single matrix repeats forever.
struct DenseSequencePolicy {
  std::vector<DenseStochasticMatrix> matrices;
};

using AdaptationPolicy = std::variant<FixedPolicy, ArpfPolicy, AdaptiveBlocksPolicy, DenseSequencePolicy>;

inline void validate_tau(double tau) {
  require(tau > 0.0 && tau <= 1.0, "threshold tau must lie in (0, 1]");
}

/// Parses `sis | bpf | arpf:<tau> | simple:<tau> | random:<tau> | greedy:<tau> | blocks:<q>`.
/// blocks:<q> needs N to build the partition.
inline AdaptationPolicy parse_policy(const std::string& text, std::size_t n) {
  if (text == "sis") return FixedPolicy{InteractionSpec::identity()};
  if (text == "bpf") return FixedPolicy{InteractionSpec::full()};
  const auto colon = text.find(':');
  require(colon != std::string::npos, "unknown policy '" + text + "'");
  const auto head = text.substr(0, colon);
  const auto arg = text.substr(colon + 1);
  double value = 0.0;
  try {
    std::size_t used = 0;
    value = std::stod(arg, &used);
    require(used == arg.size(), "");
  } catch (const std::exception&) {
    throw ValidationError("policy '" + text + "' has a non-numeric argument");
  }
  if (head == "blocks") {
    require(value >= 1.0 && value == std::floor(value), "blocks:<q> needs a positive integer q");
    return FixedPolicy{make_block_diagonal(n, static_cast<std::size_t>(value))};
  }
  validate_tau(value);
  if (head == "arpf") return ArpfPolicy{value};
  if (head == "simple") return AdaptiveBlocksPolicy{AdaptationRule::simple, value};
  if (head == "random") return AdaptiveBlocksPolicy{AdaptationRule::random, value};
  if (head == "greedy") return AdaptiveBlocksPolicy{AdaptationRule::greedy, value};
  throw ValidationError("unknown policy '" + text + "'");
}

struct AdaptationOutput {
  InteractionSpec spec;
  /// Depth K: the chosen degree is 2^K for B-matrix choices.
  int k = 0;
  /// E at every visited k (every k = 0..m in probe mode).
  std::vector<double> ess_trajectory;
  /// Block ids of B(k, .) for every visited k, when requested.
  std::vector<std::vector<std::size_t>> level_block_ids;
};

struct AdaptOptions {
  OpCounter* counter = nullptr;
  bool probe_all_k = false;
  /// Keep every level's partition and verify the level weights against the
  /// explicit block sums 2^-k sum_{j in B(k,i)} exp(u_j).
  bool record_levels = false;
};

/// Threshold rule: Full iff the ESS criterion of the pre-weights is < tau.
inline InteractionSpec arpf_select(std::span<const double> log_pre_weights, double tau) {
  validate_tau(tau);
  return ess_coefficient(log_pre_weights) < tau ? InteractionSpec::full()
                                                 : InteractionSpec::identity();
}

/// Greedy index list: odd positions (1-based) take the largest weights in
/// descending order, even positions the smallest in ascending order from the
/// back, so position 2i-1 is paired with 2i largest-with-smallest. Indices
/// with tied weights keep ascending order within the permutation.
inline std::vector<std::size_t> greedy_order(std::span<const double> weights,
                                             OpCounter* counter = nullptr) {
  const std::size_t m = weights.size();
  require(m % 2 == 0, "greedy_order: need an even number of weights");
  std::vector<std::size_t> sorted(m);
  for (std::size_t i = 0; i < m; ++i) sorted[i] = i;
  std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
    count(counter);
    if (weights[a] != weights[b]) return weights[a] > weights[b];
    return a < b;
  });
  // Slot r of the descending order lands at 0-based position slot[r].
  std::vector<std::size_t> slot(m);
  const std::size_t half = m / 2;
  for (std::size_t r = 0; r < m; ++r) slot[r] = r < half ? 2 * r : 2 * (m - 1 - r) + 1;
  std::vector<std::size_t> order(m);
  std::vector<std::size_t> tied_slots;
  for (std::size_t a = 0; a < m;) {
    std::size_t b = a + 1;
    while (b < m && weights[sorted[b]] == weights[sorted[a]]) ++b;
    if (b - a == 1) {
      order[slot[a]] = sorted[a];
    } else {
      tied_slots.assign(slot.begin() + static_cast<std::ptrdiff_t>(a),
                        slot.begin() + static_cast<std::ptrdiff_t>(b));
      std::sort(tied_slots.begin(), tied_slots.end());
      for (std::size_t t = 0; t < b - a; ++t) order[tied_slots[t]] = sorted[a + t];
    }
    a = b;
  }
  count(counter, m);
  return order;
}

namespace detail {

// Level-k blocks as linked lists over particle indices, so merging two blocks
// is O(1) and materializing the partition is O(N).
class BlockLists {
 public:
  explicit BlockLists(std::size_t n) : head_(n), tail_(n), next_(n, kEnd) {
    for (std::size_t i = 0; i < n; ++i) head_[i] = tail_[i] = i;
  }

  std::size_t count() const { return head_.size(); }

  void merge_pairs(std::span<const std::size_t> order) {
    const std::size_t half = order.size() / 2;
    std::vector<std::size_t> head(half), tail(half);
    for (std::size_t i = 0; i < half; ++i) {
      const std::size_t a = order[2 * i], b = order[2 * i + 1];
      next_[tail_[a]] = head_[b];
      head[i] = head_[a];
      tail[i] = tail_[b];
    }
    head_ = std::move(head);
    tail_ = std::move(tail);
  }

  std::vector<std::size_t> block_ids() const {
    std::vector<std::size_t> ids(next_.size());
    for (std::size_t b = 0; b < head_.size(); ++b)
      for (std::size_t i = head_[b]; i != kEnd; i = next_[i]) ids[i] = b;
    return ids;
  }

 private:
  static constexpr std::size_t kEnd = static_cast<std::size_t>(-1);
  std::vector<std::size_t> head_, tail_, next_;
};

inline InteractionSpec spec_from_block_ids(std::vector<std::size_t> ids, std::size_t blocks) {
  if (blocks == ids.size()) return InteractionSpec::identity();
  if (blocks == 1) return InteractionSpec::full();
  return BlockPartition::from_block_ids(std::move(ids));
}

}  // namespace detail

/// Adaptive B-matrix selection: merge level weights pairwise (order chosen by
/// the rule) until E >= tau. Pre-weights are log(W_{n-1}^i g_{n-1}(zeta^i)).
/// The Random rule draws one permutation of [N] at k = 0 on every call.
inline AdaptationOutput adapt_select(std::span<const double> log_pre_weights, AdaptationRule rule,
                                     double tau, Rng& rng, const AdaptOptions& options = {}) {
  validate_tau(tau);
  OpCounter* counter = options.counter;
  const bool probe_all_k = options.probe_all_k;
#ifndef NDEBUG
  const bool check_levels = true;
#else
  const bool check_levels = options.record_levels;
#endif
  const std::size_t n = log_pre_weights.size();
  require(is_power_of_two(n), "adaptive selection needs N to be a power of two");
  const int m = floor_log2(n);
  const double log_n = std::log(static_cast<double>(n));

  std::vector<double> level(log_pre_weights.begin(), log_pre_weights.end());
  const double log_mean0 = log_sum_exp(level) - log_n;
  if (log_mean0 == kNegInf) throw NumericalError("all particle weights zero");
  count(counter, n);

  auto level_ess = [&](int k) {
    if (k == m) return 1.0;  // single block: the merged weight is the mean itself
    double max = kNegInf;
    for (double v : level) max = std::max(max, v);
    double sum2 = 0.0;
    for (double v : level) sum2 += std::exp(2.0 * (v - max));
    count(counter, level.size());
    const double log_den = k * kLogTwo - log_n + 2.0 * max + std::log(sum2);
    return std::min(1.0, std::exp(2.0 * log_mean0 - log_den));
  };

  std::vector<std::size_t> permutation;
  if (rule == AdaptationRule::random) {
    permutation.resize(n);
    for (std::size_t i = 0; i < n; ++i) permutation[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) std::swap(permutation[i], permutation[rng.index(i + 1)]);
    count(counter, n);
  }

  AdaptationOutput out;
  detail::BlockLists lists(n);
  int k = 0;
  double e = level_ess(0);
  out.ess_trajectory.push_back(e);
  bool chosen = e >= tau;
  std::vector<std::size_t> chosen_ids;
  std::size_t chosen_blocks = n;
  if (chosen) {
    chosen_ids = lists.block_ids();
    out.k = 0;
  }
  auto check_level = [&](int k) {
    if (!check_levels) return;
    auto ids = lists.block_ids();
    std::vector<std::vector<double>> members(level.size());
    for (std::size_t i = 0; i < n; ++i) members[ids[i]].push_back(log_pre_weights[i]);
    for (std::size_t b = 0; b < level.size(); ++b) {
      const double explicit_sum = log_sum_exp(members[b]) - k * kLogTwo;
      if (explicit_sum == kNegInf && level[b] == kNegInf) continue;
      if (!(std::abs(explicit_sum - level[b]) <= 1e-9 * std::max(1.0, std::abs(explicit_sum)))) {
        throw NumericalError("adaptive selection: level weights disagree with block sums");
      }
    }
    if (options.record_levels) out.level_block_ids.push_back(std::move(ids));
  };
  check_level(0);
  std::vector<std::size_t> order;
  while (k < m && (!chosen || probe_all_k)) {
    const std::size_t size = level.size();
    if (rule == AdaptationRule::greedy) {
      order = greedy_order(level, counter);
    } else if (rule == AdaptationRule::random && k == 0) {
      order = permutation;
    } else {
      order.resize(size);
      for (std::size_t i = 0; i < size; ++i) order[i] = i;
    }
    std::vector<double> merged(size / 2);
    for (std::size_t i = 0; i < size / 2; ++i) {
      merged[i] = log_add_exp(level[order[2 * i]], level[order[2 * i + 1]]) - kLogTwo;
    }
    count(counter, size / 2);
    lists.merge_pairs(order);
    level = std::move(merged);
    ++k;
    e = level_ess(k);
    out.ess_trajectory.push_back(e);
    check_level(k);
    if (!chosen && e >= tau) {
      chosen = true;
      out.k = k;
      chosen_ids = lists.block_ids();
      chosen_blocks = lists.count();
      count(counter, n);
    }
  }
  out.spec = detail::spec_from_block_ids(std::move(chosen_ids), chosen_blocks);
  return out;
}

/// Applies a policy at line (*) of the sampler for step `step` (choosing
/// alpha_{step-1}). Validates that the returned spec fits N.
inline AdaptationOutput select_interaction(const AdaptationPolicy& policy,
                                           std::span<const double> log_pre_weights,
                                           std::size_t step, Rng& rng,
                                           OpCounter* counter = nullptr) {
  const std::size_t n = log_pre_weights.size();
  const int m = floor_log2(n);
  AdaptationOutput out = std::visit(
      [&](const auto& p) -> AdaptationOutput {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FixedPolicy>) {
          return {p.spec, floor_log2(p.spec.degree(n)), {}, {}};
        } else if constexpr (std::is_same_v<P, ArpfPolicy>) {
          validate_tau(p.tau);
          const double e = ess_coefficient(log_pre_weights);
          count(counter, n);
          if (e < p.tau) return {InteractionSpec::full(), m, {e}, {}};
          return {InteractionSpec::identity(), 0, {e}, {}};
        } else if constexpr (std::is_same_v<P, AdaptiveBlocksPolicy>) {
          return adapt_select(log_pre_weights, p.rule, p.tau, rng, AdaptOptions{counter, p.probe_all_k});
        } else {
          require(!p.matrices.empty(), "dense sequence policy has no matrices");
          const auto& a = p.matrices[(step - 1) % p.matrices.size()];
          return {InteractionSpec(a), 0, {}, {}};
        }
      },
      policy);
  if (out.spec.is_blocks()) {
    require(out.spec.blocks().size() == n, "policy returned a partition of the wrong size");
  } else if (out.spec.is_dense()) {
    require(out.spec.dense().size() == n, "policy returned a matrix of the wrong size");
  }
  return out;
}

/// T_n: the last m <= n with alpha_{m-1} = Full, or 0 if there is none.
/// specs[m-1] is alpha_{m-1}; only Identity/Full choices are allowed.
inline std::size_t last_resampling_time(std::span<const InteractionSpec> specs, std::size_t n) {
  require(n <= specs.size(), "last_resampling_time: n exceeds the trace length");
  for (const auto& s : specs.first(n)) {
    require(s.is_identity() || s.is_full(), "last_resampling_time: trace is not an ARPF trace");
  }
  for (std::size_t m = n; m >= 1; --m) {
    if (specs[m - 1].is_full()) return m;
  }
  return 0;
}

/// Checks, for every step n of an ARPF run, that the normalized log-weights
/// match prod_{p=T_n}^{n-1} g_p(zeta_p^i) up to normalization.
/// log_potentials[p][i] = log g_p(zeta_p^i); log_weights[n] are the run's
/// normalized log-weights at step n (n = 0..T).
inline bool arpf_weight_identity_check(std::span<const InteractionSpec> specs,
                                       const std::vector<std::vector<double>>& log_potentials,
                                       const std::vector<std::vector<double>>& log_weights,
                                       double tolerance = 1e-9) {
  require(!log_weights.empty(), "arpf check: no weights recorded");
  const std::size_t steps = log_weights.size() - 1;
  require(specs.size() >= steps && log_potentials.size() >= steps,
          "arpf check: insufficient retained history");
  for (std::size_t n = 1; n <= steps; ++n) {
    const std::size_t t = last_resampling_time(specs, n);
    const std::size_t particles = log_weights[n].size();
    std::vector<double> expected(particles, 0.0);
    for (std::size_t p = t; p < n; ++p) {
      require(log_potentials[p].size() == particles, "arpf check: potential row size mismatch");
      for (std::size_t i = 0; i < particles; ++i) expected[i] += log_potentials[p][i];
    }
    const double norm = log_sum_exp(expected);
    for (std::size_t i = 0; i < particles; ++i) {
      const double want = expected[i] - norm;
      const double got = log_weights[n][i];
      if (want == kNegInf && got == kNegInf) continue;
      if (!(std::abs(want - got) <= tolerance)) return false;
    }
  }
  return true;
}

}  // namespace asmc

#endif  // ASMC_ADAPTATION_HPP
