#ifndef ASMC_INTERACTION_HPP
#define ASMC_INTERACTION_HPP

#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"

namespace asmc {

/// Row-stochastic N x N matrix, stored row-major. Only used at small N.
class DenseStochasticMatrix {
 public:
  DenseStochasticMatrix(std::size_t n, std::vector<double> entries)
      : n_(n), entries_(std::move(entries)) {
    require(n_ >= 1, "stochastic matrix must have N >= 1");
    require(entries_.size() == n_ * n_, "stochastic matrix must have N*N entries");
    for (std::size_t i = 0; i < n_; ++i) {
      double sum = 0.0;
      for (double v : row(i)) {
        require(v >= 0.0 && std::isfinite(v), "stochastic matrix entries must be >= 0");
        sum += v;
      }
      require(std::abs(sum - 1.0) <= 1e-12,
              "stochastic matrix row " + std::to_string(i) + " does not sum to 1");
    }
  }

  static DenseStochasticMatrix identity(std::size_t n) {
    std::vector<double> e(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) e[i * n + i] = 1.0;
    return {n, std::move(e)};
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * n_ + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(entries_).subspan(i * n_, n_);
  }
  const std::vector<double>& entries() const { return entries_; }

  std::vector<double> column_sums() const {
    std::vector<double> c(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) c[j] += (*this)(i, j);
    return c;
  }

  /// Largest number of nonzero entries in a row.
  std::size_t max_row_support() const {
    std::size_t best = 0;
    for (std::size_t i = 0; i < n_; ++i) {
      std::size_t c = 0;
      for (double v : row(i)) c += v > 0.0 ? 1 : 0;
      best = std::max(best, c);
    }
    return best;
  }

  friend bool operator==(const DenseStochasticMatrix&, const DenseStochasticMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<double> entries_;
};

inline DenseStochasticMatrix operator*(const DenseStochasticMatrix& a,
                                       const DenseStochasticMatrix& b) {
  require(a.size() == b.size(), "matrix product size mismatch");
  const std::size_t n = a.size();
  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) e[i * n + j] += a(i, k) * b(k, j);
  // Products of stochastic matrices stay stochastic; renormalize rounding.
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += e[i * n + j];
    for (std::size_t j = 0; j < n; ++j) e[i * n + j] /= s;
  }
  return {n, std::move(e)};
}

/// Partition of [N] into equal-size blocks; the B-matrix it induces has
/// entries 1/d within a block and 0 elsewhere. Storage is O(N).
class BlockPartition {
 public:
  /// block_ids[i] is the block of particle i; ids must be 0..s-1, each used
  /// by exactly d = N/s particles.
  static BlockPartition from_block_ids(std::vector<std::size_t> block_ids) {
    const std::size_t n = block_ids.size();
    require(n >= 1, "partition must cover at least one index");
    std::size_t count = 0;
    for (auto b : block_ids) count = std::max(count, b + 1);
    std::vector<std::size_t> sizes(count, 0);
    for (auto b : block_ids) ++sizes[b];
    for (std::size_t b = 0; b < count; ++b) {
      require(sizes[b] > 0, "partition block ids must be contiguous from 0");
      require(sizes[b] == sizes[0], "partition blocks must all have the same size");
    }
    BlockPartition p;
    p.block_of_ = std::move(block_ids);
    p.block_size_ = sizes[0];
    p.members_.resize(n);
    p.offsets_.assign(count + 1, 0);
    for (std::size_t b = 0; b < count; ++b) p.offsets_[b + 1] = p.offsets_[b] + sizes[b];
    std::vector<std::size_t> cursor(p.offsets_.begin(), p.offsets_.end() - 1);
    for (std::size_t i = 0; i < n; ++i) p.members_[cursor[p.block_of_[i]]++] = i;
    return p;
  }

  static BlockPartition from_blocks(const std::vector<std::vector<std::size_t>>& blocks) {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.size();
    std::vector<std::size_t> ids(n, n);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (auto i : blocks[b]) {
        require(i < n, "partition index out of range");
        require(ids[i] == n, "partition blocks overlap");
        ids[i] = b;
      }
    }
    return from_block_ids(std::move(ids));
  }

  static BlockPartition singletons(std::size_t n) {
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    return from_block_ids(std::move(ids));
  }

  static BlockPartition single_block(std::size_t n) {
    return from_block_ids(std::vector<std::size_t>(n, 0));
  }

  std::size_t size() const { return block_of_.size(); }
  std::size_t block_count() const { return offsets_.size() - 1; }
  std::size_t block_size() const { return block_size_; }
  std::size_t block_of(std::size_t i) const { return block_of_[i]; }
  const std::vector<std::size_t>& block_ids() const { return block_of_; }
  /// Members of block b in ascending index order.
  std::span<const std::size_t> members(std::size_t b) const {
    return std::span<const std::size_t>(members_).subspan(offsets_[b], offsets_[b + 1] - offsets_[b]);
  }

  /// Equality of the induced same-block relation (block labels are irrelevant).
  friend bool operator==(const BlockPartition& a, const BlockPartition& b) {
    if (a.size() != b.size() || a.block_count() != b.block_count()) return false;
    std::vector<std::size_t> map(a.block_count(), a.block_count());
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto& m = map[a.block_of(i)];
      if (m == a.block_count()) m = b.block_of(i);
      if (m != b.block_of(i)) return false;
    }
    return true;
  }

 private:
  BlockPartition() = default;

  std::vector<std::size_t> block_of_;
  std::vector<std::size_t> members_;
  std::vector<std::size_t> offsets_;
  std::size_t block_size_ = 0;
};

struct IdentityInteraction {};
struct FullInteraction {};

/// A member of the interaction family: Identity (no interaction), Full
/// (complete interaction), an equal-block partition, or a dense matrix.
class InteractionSpec {
 public:
  using Variant =
      std::variant<IdentityInteraction, FullInteraction, BlockPartition, DenseStochasticMatrix>;

  InteractionSpec() : v_(IdentityInteraction{}) {}
  InteractionSpec(IdentityInteraction v) : v_(v) {}
  InteractionSpec(FullInteraction v) : v_(v) {}
  InteractionSpec(BlockPartition v) : v_(std::move(v)) {}
  InteractionSpec(DenseStochasticMatrix v) : v_(std::move(v)) {}

  static InteractionSpec identity() { return IdentityInteraction{}; }
  static InteractionSpec full() { return FullInteraction{}; }

  const Variant& variant() const { return v_; }
  bool is_identity() const { return std::holds_alternative<IdentityInteraction>(v_); }
  bool is_full() const { return std::holds_alternative<FullInteraction>(v_); }
  bool is_blocks() const { return std::holds_alternative<BlockPartition>(v_); }
  bool is_dense() const { return std::holds_alternative<DenseStochasticMatrix>(v_); }
  const BlockPartition& blocks() const { return std::get<BlockPartition>(v_); }
  const DenseStochasticMatrix& dense() const { return std::get<DenseStochasticMatrix>(v_); }

  /// Identity, Full and Blocks all induce a partition.
  bool is_partition() const { return !is_dense(); }

  /// Throws unless the spec is usable with n particles.
  void check_size(std::size_t n) const {
    if (is_blocks()) require(blocks().size() == n, "partition size does not match N");
    if (is_dense()) require(dense().size() == n, "dense matrix size does not match N");
  }

  BlockPartition partition(std::size_t n) const {
    if (is_identity()) return BlockPartition::singletons(n);
    if (is_full()) return BlockPartition::single_block(n);
    if (is_blocks()) return blocks();
    throw ValidationError("dense interaction has no block partition");
  }

  /// Graph degree: block size for partitions, widest row support for dense.
  std::size_t degree(std::size_t n) const {
    if (is_identity()) return 1;
    if (is_full()) return n;
    if (is_blocks()) return blocks().block_size();
    return dense().max_row_support();
  }

  DenseStochasticMatrix to_dense(std::size_t n) const {
    if (is_dense()) return dense();
    const auto p = partition(n);
    std::vector<double> e(n * n, 0.0);
    const double w = 1.0 / static_cast<double>(p.block_size());
    for (std::size_t i = 0; i < n; ++i)
      for (auto j : p.members(p.block_of(i))) e[i * n + j] = w;
    return {n, std::move(e)};
  }

  friend bool operator==(const InteractionSpec& a, const InteractionSpec& b) {
    if (a.is_dense() || b.is_dense()) {
      const std::size_t n = a.is_dense() ? a.dense().size() : b.dense().size();
      if (a.is_blocks() && a.blocks().size() != n) return false;
      if (b.is_blocks() && b.blocks().size() != n) return false;
      return a.to_dense(n) == b.to_dense(n);
    }
    if (a.v_.index() == b.v_.index() && !a.is_blocks()) return true;
    if (!a.is_blocks() && !b.is_blocks()) return false;  // Identity vs Full
    const std::size_t n = a.is_blocks() ? a.blocks().size() : b.blocks().size();
    return a.partition(n) == b.partition(n);
  }

 private:
  Variant v_;
};

/// s = N/q contiguous blocks {(l-1)q+1, ..., lq}; q = 1 gives Identity and
/// q = N gives Full.
inline InteractionSpec make_block_diagonal(std::size_t n, std::size_t q) {
  require(n >= 1 && q >= 1 && n % q == 0, "block size q must divide N");
  if (q == 1) return InteractionSpec::identity();
  if (q == n) return InteractionSpec::full();
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i / q;
  return BlockPartition::from_block_ids(std::move(ids));
}

/// Simple random walk on the star graph with hub at index 0, made lazy with
/// holding probability `laziness`.
inline DenseStochasticMatrix make_star_walk(std::size_t n, double laziness = 0.0) {
  require(n >= 3, "star walk needs N >= 3");
  require(laziness >= 0.0 && laziness < 1.0, "star walk laziness must be in [0, 1)");
  const double move = 1.0 - laziness;
  std::vector<double> e(n * n, 0.0);
  e[0] = laziness;
  for (std::size_t j = 1; j < n; ++j) e[j] = move / static_cast<double>(n - 1);
  for (std::size_t i = 1; i < n; ++i) {
    e[i * n + 0] = move;
    e[i * n + i] = laziness;
  }
  return {n, std::move(e)};
}

/// Every row is the point mass on index 0: all edges lead to the hub.
inline DenseStochasticMatrix make_to_hub(std::size_t n) {
  require(n >= 1, "to-hub matrix needs N >= 1");
  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) e[i * n] = 1.0;
  return {n, std::move(e)};
}

/// Row p (p = 0..n) holds beta_{p,n}: the uniform vector on [N] pulled back
/// through alpha_{n-1}, ..., alpha_p.
inline std::vector<std::vector<double>> beta_vectors(std::span<const InteractionSpec> alphas,
                                                     std::size_t n, std::size_t particles) {
  require(alphas.size() >= n, "beta_vectors: need at least n interaction matrices");
  require(particles >= 1, "beta_vectors: N must be >= 1");
  std::vector<std::vector<double>> beta(n + 1, std::vector<double>(particles));
  beta[n].assign(particles, 1.0 / static_cast<double>(particles));
  for (std::size_t p = n; p-- > 0;) {
    const auto& next = beta[p + 1];
    auto& cur = beta[p];
    const auto& alpha = alphas[p];
    alpha.check_size(particles);
    if (alpha.is_dense()) {
      std::fill(cur.begin(), cur.end(), 0.0);
      const auto& a = alpha.dense();
      for (std::size_t j = 0; j < particles; ++j)
        for (std::size_t i = 0; i < particles; ++i) cur[i] += next[j] * a(j, i);
    } else if (alpha.is_identity()) {
      cur = next;
    } else {
      const auto part = alpha.partition(particles);
      const double w = 1.0 / static_cast<double>(part.block_size());
      for (std::size_t b = 0; b < part.block_count(); ++b) {
        double s = 0.0;
        for (auto j : part.members(b)) s += next[j];
        for (auto i : part.members(b)) cur[i] = s * w;
      }
    }
  }
  return beta;
}

/// True iff the uniform distribution on [N] is invariant (all column sums 1).
inline bool check_uniform_invariance(const InteractionSpec& spec) {
  if (!spec.is_dense()) return true;
  for (double c : spec.dense().column_sums()) {
    if (std::abs(c - 1.0) > 1e-12) return false;
  }
  return true;
}

/// CSV with header `i,block_id`, one row per particle index.
inline void write_partition_csv(std::ostream& os, const BlockPartition& p) {
  os << "i,block_id\n";
  for (std::size_t i = 0; i < p.size(); ++i) os << i << ',' << p.block_of(i) << '\n';
}

inline BlockPartition read_partition_csv(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)) && line == "i,block_id",
          "partition CSV header must be 'i,block_id'");
  std::vector<std::size_t> ids;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, "partition CSV row without comma");
    require(std::stoull(line.substr(0, comma)) == ids.size(), "partition CSV rows out of order");
    ids.push_back(std::stoull(line.substr(comma + 1)));
  }
  return BlockPartition::from_block_ids(std::move(ids));
}

}  // namespace asmc

#endif  // ASMC_INTERACTION_HPP
