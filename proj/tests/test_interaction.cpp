#include <asmc/interaction.hpp>
#include <asmc/random.hpp>

#include <gtest/gtest.h>

#include <sstream>

namespace {

using namespace asmc;

DenseStochasticMatrix random_stochastic(std::size_t n, Rng& rng) {
  std::vector<double> e(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (e[i * n + j] = rng.uniform());
    for (std::size_t j = 0; j < n; ++j) e[i * n + j] /= s;
  }
  return {n, std::move(e)};
}

TEST(BlockDiagonal, Canonicalization) {
  EXPECT_TRUE(make_block_diagonal(4, 4).is_full());
  EXPECT_TRUE(make_block_diagonal(4, 1).is_identity());
  auto spec = make_block_diagonal(6, 2);
  ASSERT_TRUE(spec.is_blocks());
  const auto& p = spec.blocks();
  EXPECT_EQ(p.block_count(), 3u);
  EXPECT_EQ(p.block_size(), 2u);
  for (std::size_t b = 0; b < 3; ++b) {
    auto m = p.members(b);
    EXPECT_EQ(m[0], 2 * b);
    EXPECT_EQ(m[1], 2 * b + 1);
  }
  EXPECT_THROW(make_block_diagonal(6, 4), ValidationError);
}

TEST(InteractionSpec, EqualityOnInducedPartition) {
  EXPECT_EQ(InteractionSpec(BlockPartition::singletons(5)), InteractionSpec::identity());
  EXPECT_EQ(InteractionSpec(BlockPartition::single_block(5)), InteractionSpec::full());
  EXPECT_NE(InteractionSpec::identity(), InteractionSpec::full());
  auto a = BlockPartition::from_block_ids({0, 1, 0, 1});
  auto b = BlockPartition::from_block_ids({1, 0, 1, 0});
  auto c = BlockPartition::from_block_ids({0, 0, 1, 1});
  EXPECT_EQ(InteractionSpec(a), InteractionSpec(b));
  EXPECT_NE(InteractionSpec(a), InteractionSpec(c));
  EXPECT_EQ(InteractionSpec(DenseStochasticMatrix::identity(3)), InteractionSpec::identity());
  EXPECT_EQ(InteractionSpec(c), InteractionSpec(InteractionSpec(c).to_dense(4)));
}

TEST(BlockPartition, RejectsUnequalOrOverlapping) {
  EXPECT_THROW(BlockPartition::from_block_ids({0, 0, 1}), ValidationError);
  EXPECT_THROW(BlockPartition::from_block_ids({0, 2, 0, 2}), ValidationError);
  EXPECT_THROW(BlockPartition::from_blocks({{0, 1}, {1, 2}}), ValidationError);
}

TEST(BlockPartition, InducedMatrixIsDoublyStochastic) {
  auto spec = InteractionSpec(BlockPartition::from_blocks({{0, 3}, {1, 5}, {2, 4}}));
  auto d = spec.to_dense(6);
  for (double c : d.column_sums()) EXPECT_NEAR(c, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(d(0, 3), 0.5);
  EXPECT_DOUBLE_EQ(d(0, 1), 0.0);
}

TEST(StarWalk, ThreeVertexRows) {
  auto s = make_star_walk(3, 0.0);
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 1), 0.5);
  EXPECT_EQ(s(0, 2), 0.5);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_EQ(s(i, 0), 1.0);
    EXPECT_EQ(s(i, 1), 0.0);
    EXPECT_EQ(s(i, 2), 0.0);
  }
  EXPECT_THROW(make_star_walk(2), ValidationError);
}

TEST(StarWalk, TwoStepsFromLeafReturnToLeaves) {
  auto s = make_star_walk(5, 0.0);
  auto s2 = s * s;
  // leaf -> hub -> uniform leaf
  for (std::size_t j = 1; j < 5; ++j) EXPECT_NEAR(s2(2, j), 0.25, 1e-15);
  EXPECT_NEAR(s2(2, 0), 0.0, 1e-15);
  // hub -> leaf -> hub
  EXPECT_NEAR(s2(0, 0), 1.0, 1e-15);
}

TEST(StarWalk, LazyStationaryIsDegreeProportional) {
  for (std::size_t n : {3u, 8u, 33u}) {
    auto s = make_star_walk(n, 0.5);
    std::vector<double> pi(n, 1.0 / (2.0 * (n - 1)));
    pi[0] = 0.5;
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) v += pi[i] * s(i, j);
      EXPECT_NEAR(v, pi[j], 1e-14);
    }
  }
}

TEST(ToHub, RowsArePointMasses) {
  EXPECT_EQ(InteractionSpec(make_to_hub(1)), InteractionSpec::identity());
  auto h = make_to_hub(3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(h(i, 0), 1.0);
    EXPECT_EQ(h(i, 1), 0.0);
  }
}

TEST(Beta, UniformAndIdentityGiveOneOverN) {
  for (auto spec : {InteractionSpec::full(), InteractionSpec::identity(), make_block_diagonal(8, 2)}) {
    std::vector<InteractionSpec> seq(4, spec);
    auto beta = beta_vectors(seq, 4, 8);
    ASSERT_EQ(beta.size(), 5u);
    for (const auto& row : beta)
      for (double v : row) EXPECT_DOUBLE_EQ(v, 1.0 / 8);
  }
}

TEST(Beta, ToHubConcentratesOnHub) {
  std::vector<InteractionSpec> seq(3, InteractionSpec(make_to_hub(5)));
  auto beta = beta_vectors(seq, 3, 5);
  for (std::size_t p = 0; p < 3; ++p) {
    EXPECT_DOUBLE_EQ(beta[p][0], 1.0);
    for (std::size_t i = 1; i < 5; ++i) EXPECT_DOUBLE_EQ(beta[p][i], 0.0);
  }
}

TEST(Beta, MatchesDenseProductIdentity) {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 4, steps = 1 + trial % 4;
    std::vector<InteractionSpec> seq;
    std::vector<DenseStochasticMatrix> dense;
    for (std::size_t p = 0; p < steps; ++p) {
      dense.push_back(random_stochastic(n, rng));
      seq.emplace_back(dense.back());
    }
    auto beta = beta_vectors(seq, steps, n);
    for (std::size_t p = 0; p <= steps; ++p) {
      // alpha_{p,n} = alpha_{n-1} * ... * alpha_p composed as in the recursion.
      auto prod = DenseStochasticMatrix::identity(n);
      for (std::size_t q = steps; q-- > p;) prod = prod * dense[q];
      double row_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double expected = 0.0;
        for (std::size_t j = 0; j < n; ++j) expected += prod(j, i) / double(n);
        EXPECT_NEAR(beta[p][i], expected, 1e-12);
        row_sum += beta[p][i];
      }
      EXPECT_NEAR(row_sum, 1.0, 1e-10);
      EXPECT_GE(*std::max_element(beta[p].begin(), beta[p].end()), 1.0 / double(n) - 1e-15);
    }
  }
}

TEST(UniformInvariance, Families) {
  EXPECT_TRUE(check_uniform_invariance(make_block_diagonal(8, 4)));
  EXPECT_TRUE(check_uniform_invariance(InteractionSpec(BlockPartition::from_blocks({{0, 2}, {1, 3}}))));
  EXPECT_FALSE(check_uniform_invariance(InteractionSpec(make_to_hub(4))));
  EXPECT_FALSE(check_uniform_invariance(InteractionSpec(make_star_walk(5, 0.0))));
  EXPECT_TRUE(check_uniform_invariance(InteractionSpec(make_to_hub(1))));
}

TEST(PartitionCsv, RoundTrip) {
  auto p = BlockPartition::from_blocks({{0, 3}, {1, 2}});
  std::stringstream ss;
  write_partition_csv(ss, p);
  EXPECT_EQ(ss.str(), "i,block_id\n0,0\n1,1\n2,1\n3,0\n");
  EXPECT_EQ(read_partition_csv(ss), p);
}

}  // namespace
