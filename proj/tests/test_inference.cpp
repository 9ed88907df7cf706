#include <map>
#include <random>

#include <gtest/gtest.h>

#include <sparcd/inference.hpp>

#include "oracles.hpp"

using namespace sparcd;

namespace {

ConditionTensor noise_tensor(std::size_t n, std::size_t r, std::size_t t, std::uint64_t seed, double couple = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n * r * t);
  for (auto& x : v) x = d(rng);
  if (couple != 0.0) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < t; ++k)
        for (std::size_t q = 1; q < 4; ++q) v[(i * r + q) * t + k] += couple * v[(i * r) * t + k];
  }
  return ConditionTensor(n, r, t, std::move(v));
}

RunConfig small_config(std::size_t b, std::uint64_t seed) {
  RunConfig c;
  c.k_mode = FixedK{2};
  c.permutations = b;
  c.seed = seed;
  c.threads = 1;
  return c;
}

}  // namespace

TEST(BhAdjust, HandWorkedExample) {
  const std::vector<double> p{0.01, 0.02, 0.03, 0.5};
  const auto bh = bh_adjust(std::span<const double>(p), 0.05);
  EXPECT_EQ(bh.rejected, (std::vector<bool>{true, true, true, false}));
  EXPECT_DOUBLE_EQ(bh.p_adj(0), 0.04);
  EXPECT_DOUBLE_EQ(bh.p_adj(1), 0.04);
  EXPECT_DOUBLE_EQ(bh.p_adj(2), 0.04);
  EXPECT_DOUBLE_EQ(bh.p_adj(3), 0.5);
}

TEST(BhAdjust, AllZeroAllOneAndEmpty) {
  const std::vector<double> zeros(5, 0.0), ones(5, 1.0);
  const auto z = bh_adjust(std::span<const double>(zeros), 0.05);
  EXPECT_EQ(z.rejected, std::vector<bool>(5, true));
  const auto o = bh_adjust(std::span<const double>(ones), 0.05);
  EXPECT_EQ(o.rejected, std::vector<bool>(5, false));
  EXPECT_EQ(o.p_adj, Vector::Ones(5));
  const auto e = bh_adjust(std::span<const double>(), 0.05);
  EXPECT_EQ(e.p_adj.size(), 0);
  const std::vector<double> bad{0.5, 1.5};
  EXPECT_THROW(bh_adjust(std::span<const double>(bad), 0.05), ValidationError);
}

TEST(BhAdjust, MatchesExhaustiveOracleMonotoneAndClamped) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 1 + static_cast<std::size_t>(trial % 40);
    std::vector<double> p(m);
    for (auto& v : p) v = trial % 3 == 0 ? std::floor(u(rng) * 10.0) / 100.0 : std::pow(u(rng), 3.0);
    const auto bh = bh_adjust(std::span<const double>(p), 0.05);
    EXPECT_EQ(bh.rejected, oracle::bh_reject(p, 0.05));
    const auto adj = oracle::bh_adjusted(p);
    for (std::size_t i = 0; i < m; ++i) {
      EXPECT_DOUBLE_EQ(bh.p_adj(static_cast<Eigen::Index>(i)), adj[i]);
      EXPECT_LE(bh.p_adj(static_cast<Eigen::Index>(i)), 1.0);
      EXPECT_GE(bh.p_adj(static_cast<Eigen::Index>(i)), p[i]);
      // m*p/k and k*alpha/m round independently.
      if (bh.rejected[i]) EXPECT_LE(bh.p_adj(static_cast<Eigen::Index>(i)), 0.05 * (1.0 + 1e-14));
      for (std::size_t j = 0; j < m; ++j) {
        if (p[i] <= p[j]) EXPECT_LE(bh.p_adj(static_cast<Eigen::Index>(i)), bh.p_adj(static_cast<Eigen::Index>(j)));
      }
    }
  }
}

TEST(PermuteSubjects, PairedPatternsAreUniform) {
  std::map<unsigned, int> counts;
  const int draws = 10000;
  for (int b = 0; b < draws; ++b) {
    Engine rng = make_engine(99, Stream::permutation, static_cast<std::uint64_t>(b));
    const auto a = permute_subjects(4, 4, PairingMode::paired_subjects, rng);
    unsigned pattern = 0;
    for (unsigned i = 0; i < 4; ++i) {
      EXPECT_EQ(a.x[i] % 4, i);
      EXPECT_EQ(a.x[i] + a.y[i], 4 + 2 * i);
      if (a.x[i] >= 4) pattern |= 1u << i;
    }
    ++counts[pattern];
  }
  ASSERT_EQ(counts.size(), 16u);
  const double expect = draws / 16.0;
  const double se = std::sqrt(draws * (1.0 / 16.0) * (15.0 / 16.0));
  for (const auto& [pattern, c] : counts) EXPECT_LE(std::abs(c - expect), 3.0 * se) << pattern;
}

TEST(PermuteSubjects, UnpairedKeepsGroupSizes) {
  Engine rng = make_engine(5, Stream::permutation, 0);
  const auto a = permute_subjects(3, 5, PairingMode::unpaired_subjects, rng);
  EXPECT_EQ(a.x.size(), 3u);
  EXPECT_EQ(a.y.size(), 5u);
  std::vector<std::size_t> all(a.x);
  all.insert(all.end(), a.y.begin(), a.y.end());
  std::sort(all.begin(), all.end());
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(all[k], k);
  EXPECT_THROW(permute_subjects(3, 0, PairingMode::unpaired_subjects, rng), ValidationError);
  EXPECT_THROW(permute_subjects(3, 4, PairingMode::paired_subjects, rng), ValidationError);
}

TEST(PermuteSubjects, TensorLevelSwapsWholeRecords) {
  const auto x = noise_tensor(5, 3, 4, 1);
  const auto y = noise_tensor(5, 3, 4, 2);
  Engine rng = make_engine(8, Stream::permutation, 0);
  Engine twin = rng;
  const auto [px, py] = permute_subjects(x, y, PairingMode::paired_subjects, rng);
  const auto a = permute_subjects(5, 5, PairingMode::paired_subjects, twin);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& src = a.x[i] < 5 ? x : y;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(px(i, r, t), src(i, r, t));
  }
}

TEST(PermuteBlocks, SeventyAssignmentsAreUniform) {
  BlockDesign d;
  std::vector<Block> blocks;
  for (std::size_t k = 0; k < 8; ++k) blocks.push_back({k < 4 ? Label::A : Label::B, 10 * k, 10 * k + 10});
  d.subjects = {blocks};
  std::map<unsigned, int> counts;
  const int draws = 70000;
  for (int b = 0; b < draws; ++b) {
    Engine rng = make_engine(7, Stream::permutation, static_cast<std::uint64_t>(b));
    const auto p = permute_blocks(d, rng);
    unsigned pattern = 0;
    int a_count = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_EQ(p.subjects[0][k].start, blocks[k].start);
      if (p.subjects[0][k].label == Label::A) {
        pattern |= 1u << k;
        ++a_count;
      }
    }
    EXPECT_EQ(a_count, 4);
    ++counts[pattern];
  }
  ASSERT_EQ(counts.size(), 70u);
  const double expect = draws / 70.0;
  const double se = std::sqrt(draws * (1.0 / 70.0) * (69.0 / 70.0));
  for (const auto& [pattern, c] : counts) EXPECT_LE(std::abs(c - expect), 4.0 * se) << pattern;
}

TEST(PermuteBlocks, OneOfEachGivesTwoAssignments) {
  BlockDesign d;
  d.subjects = {{{Label::A, 0, 5}, {Label::B, 5, 10}}};
  int swapped = 0;
  for (int b = 0; b < 2000; ++b) {
    Engine rng = make_engine(3, Stream::permutation, static_cast<std::uint64_t>(b));
    swapped += permute_blocks(d, rng).subjects[0][0].label == Label::B ? 1 : 0;
  }
  EXPECT_NEAR(swapped / 2000.0, 0.5, 0.05);
}

TEST(PermutationTest, PValuesFollowTheCountingFormula) {
  const auto x = noise_tensor(12, 8, 6, 41, 1.0);
  const auto y = noise_tensor(12, 8, 6, 42);
  const auto rep = permutation_test(x, y, small_config(40, 5), PairingMode::paired_subjects);
  ASSERT_EQ(rep.null_stats.rows(), 40);
  ASSERT_EQ(rep.null_stats.cols(), 8);
  for (Eigen::Index r = 0; r < 8; ++r) {
    int count = 0;
    for (Eigen::Index b = 0; b < 40; ++b) count += rep.null_stats(b, r) >= rep.observed.scores(r) ? 1 : 0;
    EXPECT_EQ(rep.p_raw(r), count / 40.0);
    EXPECT_EQ(std::round(rep.p_raw(r) * 40.0), rep.p_raw(r) * 40.0);
    if (rep.rejected[static_cast<std::size_t>(r)]) EXPECT_LE(rep.p_bh(r), 0.05);
  }
  auto cfg = small_config(40, 5);
  cfg.add_one = true;
  const auto smooth = permutation_test(x, y, cfg, PairingMode::paired_subjects);
  for (Eigen::Index r = 0; r < 8; ++r) {
    EXPECT_DOUBLE_EQ(smooth.p_raw(r), (rep.p_raw(r) * 40.0 + 1.0) / 41.0);
  }
}

TEST(PermutationTest, ObservedMatchesDirectPipeline) {
  const auto x = noise_tensor(10, 7, 5, 43, 0.8);
  const auto y = noise_tensor(10, 7, 5, 44);
  const auto rep = permutation_test(x, y, small_config(3, 1), PairingMode::paired_subjects);
  const auto direct = run_sparcd(connectivity_matrix(x, {true, 1}), connectivity_matrix(y, {true, 1}), FixedK{2});
  EXPECT_EQ(rep.observed.scores, direct.scores);
}

TEST(PermutationTest, DeterministicAcrossThreadCounts) {
  const auto x = noise_tensor(10, 9, 5, 45, 0.5);
  const auto y = noise_tensor(10, 9, 5, 46);
  auto cfg = small_config(24, 77);
  cfg.k_mode = AutoK{2, 6};
  const auto one = permutation_test(x, y, cfg, PairingMode::unpaired_subjects);
  cfg.threads = 4;
  const auto four = permutation_test(x, y, cfg, PairingMode::unpaired_subjects);
  EXPECT_EQ(one.null_stats, four.null_stats);
  EXPECT_EQ(one.p_raw, four.p_raw);
  EXPECT_EQ(one.k_per_perm, four.k_per_perm);
}

TEST(PermutationTest, RejectsBadConfig) {
  const auto x = noise_tensor(6, 5, 4, 47);
  const auto y = noise_tensor(6, 5, 4, 48);
  EXPECT_THROW(permutation_test(x, y, small_config(0, 1), PairingMode::paired_subjects), ValidationError);
  EXPECT_THROW(permutation_test(x, y, small_config(5, 1), PairingMode::paired_blocks), ValidationError);
  const auto z = noise_tensor(5, 5, 4, 49);
  EXPECT_THROW(permutation_test(x, z, small_config(5, 1), PairingMode::paired_subjects), ValidationError);
}

TEST(PermutationTest, BlockLevel) {
  const auto raw = noise_tensor(6, 6, 40, 50, 0.7);
  BlockDesign d;
  for (int i = 0; i < 6; ++i) {
    d.subjects.push_back({{Label::A, 0, 10}, {Label::B, 10, 20}, {Label::A, 20, 30}, {Label::B, 30, 40}});
  }
  auto cfg = small_config(30, 9);
  const auto rep = permutation_test_blocks(raw, d, cfg);
  EXPECT_EQ(rep.mode, PairingMode::paired_blocks);
  EXPECT_EQ(rep.null_stats.rows(), 30);
  cfg.threads = 3;
  EXPECT_EQ(permutation_test_blocks(raw, d, cfg).null_stats, rep.null_stats);
}

TEST(PermutationTest, ProgressReachesTotal) {
  const auto x = noise_tensor(6, 5, 4, 51);
  const auto y = noise_tensor(6, 5, 4, 52);
  std::size_t last = 0, calls = 0;
  permutation_test(x, y, small_config(7, 1), PairingMode::paired_subjects, [&](std::size_t done, std::size_t total) {
    EXPECT_EQ(total, 7u);
    last = std::max(last, done);
    ++calls;
  });
  EXPECT_EQ(last, 7u);
  EXPECT_EQ(calls, 7u);
}
