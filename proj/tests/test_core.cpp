#include <random>

#include <gtest/gtest.h>

#include <sparcd/core.hpp>

#include "oracles.hpp"

using namespace sparcd;

namespace {

// Two graphs sharing structure except that block [0, split) is cut in Y.
std::pair<Matrix, Matrix> block_pair(long r, long split, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 0.1);
  Matrix wx(r, r), wy(r, r);
  for (long i = 0; i < r; ++i) {
    wx(i, i) = wy(i, i) = 1.0;
    for (long j = i + 1; j < r; ++j) {
      const bool same_block = (i / 6) == (j / 6);
      double v = u(rng) + (same_block ? 0.6 : 0.0);
      wx(i, j) = wx(j, i) = v;
      if (i < split && j < split && (i < split / 2) != (j < split / 2)) v = u(rng);
      wy(i, j) = wy(j, i) = v;
    }
  }
  return {wx, wy};
}

Matrix random_symmetric(long r, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Matrix m(r, r);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j <= i; ++j) m(i, j) = m(j, i) = d(rng);
  return m;
}

}  // namespace

TEST(Projector, IdempotentWithTraceRMinusK) {
  std::mt19937_64 rng(21);
  const Matrix w = oracle::random_weights(12, rng);
  const auto basis = symmetric_eigen(normalized_laplacian(w).L);
  for (std::size_t k = 1; k < 12; ++k) {
    const auto q = projector(basis, k);
    EXPECT_LT((q.Q * q.Q - q.Q).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(q.Q.trace(), 12.0 - static_cast<double>(k), 1e-12);
    EXPECT_LT((q.Q * basis.vectors.leftCols(static_cast<Eigen::Index>(k))).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(projector(basis, 0), ValidationError);
  EXPECT_THROW(projector(basis, 12), ValidationError);
}

TEST(FilteredOperator, MatchesTripleProduct) {
  std::mt19937_64 rng(22);
  const Matrix wx = oracle::random_weights(10, rng);
  const Matrix wy = oracle::random_weights(10, rng);
  const auto lx = normalized_laplacian(wx);
  const auto ly = normalized_laplacian(wy);
  const auto qx = projector(symmetric_eigen(lx.L), 3);
  const Matrix lt_y = filtered_operator(qx, ly);
  const Matrix expect = oracle::triple(qx.Q, Matrix::Identity(10, 10) - ly.L, qx.Q);
  EXPECT_LT((lt_y - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ((lt_y - lt_y.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DifferentialOperator, AntisymmetricInArguments) {
  const auto [wx, wy] = block_pair(24, 12, 23);
  const auto ab = run_sparcd(wx, wy, FixedK{3});
  const auto ba = run_sparcd(wy, wx, FixedK{3});
  EXPECT_LT((ab.ld + ba.ld).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((ab.scores - ba.scores).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LeadingEigvec, AgreesWithFullSolver) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    const long r = 2 + trial * 3;
    const Matrix m = random_symmetric(r, rng);
    const auto lead = leading_eigvec(m);
    const auto full = symmetric_eigen(m);
    Eigen::Index best = 0;
    full.values.cwiseAbs().maxCoeff(&best);
    EXPECT_NEAR(lead.lambda, full.values(best), 1e-10 * std::max(1.0, std::abs(lead.lambda)));
    EXPECT_NEAR(std::abs(lead.v.dot(full.vectors.col(best))), 1.0, 1e-9);
    EXPECT_NEAR(lead.v.norm(), 1.0, 1e-12);
    EXPECT_LT((m * lead.v - lead.lambda * lead.v).norm(), 1e-9 * std::max(1.0, std::abs(lead.lambda)));
  }
}

TEST(LeadingEigvec, PowerIterationOracle) {
  const auto [wx, wy] = block_pair(30, 12, 25);
  const auto res = run_sparcd(wx, wy, FixedK{4});
  const Vector v = oracle::power_leading(res.ld);
  EXPECT_NEAR(std::abs(v.dot(res.v_d)), 1.0, 1e-8);
}

TEST(LeadingEigvec, SignedModePicksLargestValue) {
  Matrix m = Matrix::Zero(3, 3);
  m(0, 0) = -5.0;
  m(1, 1) = 2.0;
  m(2, 2) = 1.0;
  EXPECT_NEAR(leading_eigvec(m).lambda, -5.0, 1e-12);
  EXPECT_NEAR(leading_eigvec(m, LeadingMode::largest_signed).lambda, 2.0, 1e-12);
}

TEST(RegionScores, UnitSumAndEtaBounds) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 20; ++trial) {
    const long r = 5 + trial;
    const auto res = run_sparcd(oracle::random_weights(r, rng), oracle::random_weights(r, rng), FixedK{2});
    EXPECT_NEAR(res.scores.sum(), 1.0, 1e-12);
    EXPECT_GE(res.scores.minCoeff(), 0.0);
    EXPECT_GE(res.eta, 1.0 / std::sqrt(static_cast<double>(r)) - 1e-12);
    EXPECT_LE(res.eta, 1.0 + 1e-12);
  }
}

TEST(RunSparcd, IdenticalGraphsAreDegenerate) {
  std::mt19937_64 rng(27);
  const Matrix w = oracle::random_weights(8, rng);
  const auto res = run_sparcd(w, w, FixedK{2});
  EXPECT_TRUE(res.degenerate);
  EXPECT_LT((res.scores.array() - 1.0 / 8.0).abs().maxCoeff(), 1e-15);
}

TEST(RunSparcd, LocalizesTheSplitBlock) {
  const auto [wx, wy] = block_pair(36, 12, 28);
  const auto res = run_sparcd(wx, wy, AutoK{2, 20});
  double inside = 0.0;
  for (int r = 0; r < 12; ++r) inside += res.scores(r);
  EXPECT_GT(inside, 0.8);
}

TEST(SelectK, CurveMatchesIndividualEvaluations) {
  const auto [wx, wy] = block_pair(30, 12, 29);
  const auto sel = select_k(wx, wy, 2, 12);
  ASSERT_EQ(sel.eta_curve.size(), 11u);
  const SpectralPair pair(wx, wy);
  std::size_t best = 0;
  for (std::size_t i = 0; i < sel.eta_curve.size(); ++i) {
    EXPECT_EQ(sel.eta_curve[i], pair.evaluate(2 + i).eta);
    if (sel.eta_curve[i] > sel.eta_curve[best]) best = i;
  }
  EXPECT_EQ(sel.K, 2 + best);
  const auto parallel = select_k(wx, wy, 2, 12, SpectralOptions{LeadingMode::largest_magnitude, 4});
  EXPECT_EQ(parallel.K, sel.K);
  EXPECT_EQ(parallel.eta_curve, sel.eta_curve);
}

TEST(SelectK, TiesGoToSmallestK) {
  // Identical graphs give uniform scores for every K, so eta is flat.
  std::mt19937_64 rng(30);
  const Matrix w = oracle::random_weights(10, rng);
  EXPECT_EQ(select_k(w, w, 3, 8).K, 3u);
}
