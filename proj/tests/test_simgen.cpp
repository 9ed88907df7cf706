#include <gtest/gtest.h>

#include <sparcd/dcorr.hpp>
#include <sparcd/simgen.hpp>

using namespace sparcd;

namespace {

SimSpec small_linear() {
  SimSpec s = default_spec(Regime::linear);
  s.n = 20;
  s.T = 12;
  s.seed = 4;
  return s;
}

SimSpec small_nonlinear() {
  SimSpec s = default_spec(Regime::nonlinear);
  s.n = 12;
  s.T = 10;
  s.q = 3;
  s.l = 6;
  s.split_layouts = {{3, 3}};
  s.seed = 5;
  return s;
}

}  // namespace

TEST(BlockCovariance, GammaZeroIsIdentity) {
  Engine rng = make_engine(1, Stream::sim_parameters);
  const Matrix s = block_covariance(7, 0.0, rng);
  EXPECT_LT((s - Matrix::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BlockCovariance, SpectrumAndTrace) {
  Engine rng = make_engine(2, Stream::sim_parameters);
  for (double gamma : {0.5, 1.0, 1.9}) {
    const Matrix s = block_covariance(10, gamma, rng);
    EXPECT_EQ((s - s.transpose()).cwiseAbs().maxCoeff(), 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    Vector ev = es.eigenvalues().reverse();
    double trace = 0.0;
    for (int k = 0; k < 10; ++k) {
      EXPECT_NEAR(ev(k), std::pow(1.0 / (k + 1), gamma), 1e-10);
      trace += std::pow(k + 1.0, -gamma);
    }
    EXPECT_NEAR(s.trace(), trace, 1e-10);
  }
}

TEST(BlockCovariance, HaarBasisIsOrthogonal) {
  Engine rng = make_engine(3, Stream::sim_parameters);
  const Matrix u = haar_orthogonal(9, rng);
  EXPECT_LT((u.transpose() * u - Matrix::Identity(9, 9)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GenLinear, DefaultLayoutsGiveNinetyRegionsAndTwentyTruth) {
  const auto data = gen_linear(small_linear());
  EXPECT_EQ(data.x.regions(), 90u);
  EXPECT_EQ(data.y.regions(), 90u);
  EXPECT_EQ(data.truth.count(), 20u);
  for (std::size_t r = 0; r < 90; ++r) EXPECT_EQ(data.truth.mask[r], r < 20);
}

TEST(GenLinear, DeterministicAndThreadInvariant) {
  const auto a = gen_linear(small_linear(), 1);
  const auto b = gen_linear(small_linear(), 4);
  EXPECT_TRUE(a.x == b.x);
  EXPECT_TRUE(a.y == b.y);
  auto other = small_linear();
  other.seed = 5;
  EXPECT_FALSE(gen_linear(other).x == a.x);
}

TEST(GenLinear, EmpiricalCovarianceMatchesTemplate) {
  SimSpec s;
  s.regime = Regime::linear;
  s.layouts_x = {{4, 4}};
  s.split_layouts = {};
  s.gamma = 1.9;
  s.n = 200;
  s.T = 50;
  s.seed = 11;
  const auto data = gen_linear(s);
  Engine params = make_engine(s.seed, Stream::sim_parameters);
  const Matrix f = block_factor(4, s.gamma, params);
  const Matrix sigma = f * f.transpose();

  auto cross = [&](std::size_t a, std::size_t b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t t = 0; t < s.T; ++t) sum += data.x(i, a, t) * data.x(i, b, t);
    return sum / static_cast<double>(s.n * s.T);
  };
  const double count = static_cast<double>(s.n * s.T);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a; b < 4; ++b) {
      const double target = sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      const double var = sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) *
                             sigma(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b)) +
                         target * target;
      EXPECT_LE(std::abs(cross(a, b) - target), 5.0 * std::sqrt(var / count)) << a << "," << b;
    }
  }
  // Cross-block pairs are independent.
  for (std::size_t a = 0; a < 4; ++a) {
    const double var = sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
    EXPECT_LE(std::abs(cross(a, 4 + a)), 5.0 * std::sqrt(var * 2.0 / count));
  }
}

TEST(GenLinear, NullSpecSharesStructure) {
  auto s = small_linear();
  s.split_layouts.clear();
  const auto data = gen_linear(s);
  EXPECT_EQ(data.truth.count(), 0u);
}

TEST(GenLinear, SplitMustMatchBlock) {
  auto s = small_linear();
  s.split_layouts = {{10, 11}};
  EXPECT_THROW(gen_linear(s), ValidationError);
}

TEST(GenNonlinear, Defaults) {
  const SimSpec s = default_spec(Regime::nonlinear);
  EXPECT_EQ(s.regions(), 144u);
  EXPECT_EQ(s.split_index(), 7u);
}

TEST(GenNonlinear, SeedsAndSineBounds) {
  auto s = small_nonlinear();
  s.sigma = 0.0;
  const auto data = gen_nonlinear(s);
  EXPECT_EQ(data.x.regions(), 18u);
  EXPECT_EQ(data.truth.count(), 6u);
  for (std::size_t r = 0; r < 18; ++r) EXPECT_EQ(data.truth.mask[r], r >= 12);
  for (std::size_t i = 0; i < s.n; ++i) {
    for (std::size_t r = 0; r < 18; ++r) {
      const bool seed_x = r % 6 == 0;
      const bool seed_y = seed_x || r == 15;
      for (std::size_t t = 0; t < s.T; ++t) {
        if (!seed_x) EXPECT_LE(std::abs(data.x(i, r, t)), 1.0);
        if (!seed_y) EXPECT_LE(std::abs(data.y(i, r, t)), 1.0);
      }
    }
  }
}

TEST(GenNonlinear, WithinBlockDependenceBeatsCrossBlock) {
  auto s = small_nonlinear();
  s.n = 150;
  s.T = 20;
  s.sigma = 0.5;
  int wins = 0;
  const int trials = 10;
  for (int k = 0; k < trials; ++k) {
    s.seed = 100 + static_cast<std::uint64_t>(k);
    const auto data = gen_nonlinear(s);
    const double within = dcor(data.x.region(0), data.x.region(1));
    const double cross = dcor(data.x.region(0), data.x.region(7));
    wins += within > cross ? 1 : 0;
  }
  EXPECT_GE(wins, trials * 95 / 100);
}

TEST(GenNonlinear, DeterministicAndThreadInvariant) {
  const auto a = gen_nonlinear(small_nonlinear(), 1);
  const auto b = gen_nonlinear(small_nonlinear(), 3);
  EXPECT_TRUE(a.x == b.x);
  EXPECT_TRUE(a.y == b.y);
}

TEST(GenHybrid, EndpointsReduceToComponents) {
  SimSpec s = default_spec(Regime::hybrid);
  s.n = 8;
  s.T = 6;
  s.q = 3;
  s.l = 6;
  s.split_layouts = {{3, 3}};
  s.sigma = 0.0;
  s.seed = 12;
  s.alpha = 1.0;
  const auto one = gen_hybrid(s);
  const auto lin = gen_linear(hybrid_linear_part(s));
  EXPECT_TRUE(one.x == lin.x);
  EXPECT_TRUE(one.y == lin.y);
  s.alpha = 0.0;
  const auto zero = gen_hybrid(s);
  const auto nl = gen_nonlinear(hybrid_nonlinear_part(s));
  EXPECT_TRUE(zero.x == nl.x);
  EXPECT_EQ(zero.truth.mask, nl.truth.mask);
  EXPECT_EQ(one.truth.mask, nl.truth.mask);
}

TEST(GenHybrid, VarianceGrowsAdditivelyWithSigmaSquared) {
  SimSpec s = default_spec(Regime::hybrid);
  s.n = 60;
  s.T = 40;
  s.alpha = 0.5;
  s.seed = 13;
  // Non-seed region in block 0: var = base + sigma^2.
  auto sample_var = [&](double sigma) {
    s.sigma = sigma;
    const auto data = gen_hybrid(s);
    double sum = 0.0, sq = 0.0;
    const double count = static_cast<double>(s.n * s.T * 5);
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t r = 1; r < 6; ++r)
        for (std::size_t t = 0; t < s.T; ++t) {
          sum += data.x(i, r, t);
          sq += data.x(i, r, t) * data.x(i, r, t);
        }
    return sq / count - (sum / count) * (sum / count);
  };
  const std::vector<double> sigmas{0.0, 0.5, 1.0, 1.5};
  std::vector<double> vars;
  for (double sg : sigmas) vars.push_back(sample_var(sg));
  // Least-squares slope of var against sigma^2 should be close to 1.
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    mx += sigmas[k] * sigmas[k] / 4.0;
    my += vars[k] / 4.0;
  }
  double num = 0, den = 0;
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    const double dx = sigmas[k] * sigmas[k] - mx;
    num += dx * (vars[k] - my);
    den += dx * dx;
  }
  EXPECT_NEAR(num / den, 1.0, 0.1);
}

TEST(GenHybrid, RequiresAlpha) {
  SimSpec s = default_spec(Regime::hybrid);
  EXPECT_THROW(gen_hybrid(s), ValidationError);
  s.alpha = 1.5;
  EXPECT_THROW(gen_hybrid(s), ValidationError);
}

TEST(SimJson, TruthRoundTrip) {
  const auto data = gen_linear(small_linear());
  const auto j = nlohmann::json::parse(to_json(data.truth).dump());
  EXPECT_EQ(truth_from_json(j).mask, data.truth.mask);
}
