#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "oracles.hpp"

using namespace setgp;

namespace {

double min_eig(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

Eigen::Vector2d pt(double a, double b) { return {a, b}; }

std::uniform_real_distribution<double> unit(0.0, 1.0);

}  // namespace

TEST(InnerCorr, IdentityGivesOne) {
  EXPECT_EQ(inner_corr(pt(0.3, 0.7), pt(0.3, 0.7), {0.01}), 1.0);
  EXPECT_EQ(inner_corr(pt(0.3, 0.7), pt(0.3, 0.7), {5.0}), 1.0);
}

TEST(InnerCorr, HandValues) {
  EXPECT_DOUBLE_EQ(inner_corr(pt(0, 0), pt(1, 1), {1.0}), std::exp(-1.0));
  Eigen::VectorXd x(1), y(1);
  x << 0.0;
  y << 0.5;
  EXPECT_DOUBLE_EQ(inner_corr(x, y, {0.5}), std::exp(-0.5));
}

TEST(InnerCorr, ErrorsOnDimensionMismatchAndBadTheta) {
  Eigen::VectorXd x(1);
  x << 0.0;
  EXPECT_THROW(inner_corr(x, pt(0, 0), {1.0}), InputError);
  EXPECT_THROW(inner_corr(pt(0, 0), pt(0, 0), {0.0}), InputError);
  EXPECT_THROW(inner_corr(pt(0, 0), pt(0, 0), {-1.0}), InputError);
}

TEST(DsKernel, Singletons) {
  PointSet x{{0.2, 0.4}};
  PointSet y{{0.9, 0.1}};
  EXPECT_DOUBLE_EQ(ds_kernel(x, x, {0.3}), 1.0);
  EXPECT_DOUBLE_EQ(ds_kernel(x, y, {0.3}), inner_corr(pt(0.2, 0.4), pt(0.9, 0.1), {0.3}));
}

TEST(DsKernel, TwoPointHandExpansion) {
  PointSet s{{0, 0}, {1, 1}};
  PointSet t{{0, 0}};
  EXPECT_DOUBLE_EQ(ds_kernel(s, t, {1.0}), (1.0 + std::exp(-1.0)) / 2.0);
}

TEST(DsKernel, MatchesNaiveDoubleSumAndStaysInUnitInterval) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const auto s = oracle::random_set(rng, 1 + rep % 10, 1 + rep % 3);
    const auto t = oracle::random_set(rng, 1 + (rep * 7) % 10, 1 + rep % 3);
    const double theta = 0.05 + 2.0 * unit(rng);
    const double k = ds_kernel(s, t, {theta});
    EXPECT_NEAR(k, oracle::k0(s, t, theta), 1e-14);
    EXPECT_GT(k, 0.0);
    EXPECT_LE(k, 1.0);
  }
}

TEST(DsKernel, DimensionMismatchThrows) {
  EXPECT_THROW(ds_kernel(PointSet{{0.1}}, PointSet{{0.1, 0.2}}, {1.0}), InputError);
}

TEST(EmbedDistance, SelfDistanceIsZero) {
  std::mt19937_64 rng(5);
  const auto s = oracle::random_set(rng, 6);
  EXPECT_EQ(embed_distance(s, s, {0.4}), 0.0);
}

TEST(EmbedDistance, Singletons) {
  PointSet x{{0.1, 0.1}};
  PointSet y{{0.6, 0.3}};
  const double r = inner_corr(pt(0.1, 0.1), pt(0.6, 0.3), {0.5});
  EXPECT_NEAR(embed_distance(x, y, {0.5}), std::sqrt(2.0 - 2.0 * r), 1e-15);
}

TEST(EmbedDistance, CornerSingletonsApproachSqrtTwo) {
  PointSet zero{{0, 0}};
  PointSet one{{1, 1}};
  EXPECT_GT(embed_distance(zero, one, {1e-3}), std::numbers::sqrt2 - 1e-6);
  EXPECT_LE(embed_distance(zero, one, {1e-3}), std::numbers::sqrt2 + 1e-10);
}

TEST(DeKernel, ZeroDistanceGivesVariance) {
  std::mt19937_64 rng(8);
  const auto s = oracle::random_set(rng, 4);
  EXPECT_DOUBLE_EQ(de_kernel(s, s, {{0.3}, 0.7, 1.0}), 1.0);
  EXPECT_DOUBLE_EQ(de_kernel(s, s, {{0.3}, 0.7, 2.5}), 2.5);
}

TEST(DeKernel, SingletonClosedForm) {
  PointSet x{{0.2, 0.8}};
  PointSet y{{0.5, 0.5}};
  const double r = inner_corr(pt(0.2, 0.8), pt(0.5, 0.5), {0.4});
  EXPECT_NEAR(de_kernel(x, y, {{0.4}, 1.0, 1.0}), std::exp(-(1.0 - r)), 1e-15);
}

TEST(DeKernel, MatchesNaiveReferenceOnTenPointSets) {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 30; ++rep) {
    const auto s = oracle::random_set(rng, 10);
    const auto t = oracle::random_set(rng, 10);
    const double th = 0.05 + 1.4 * unit(rng);
    const double tx = 0.05 + 2.0 * unit(rng);
    EXPECT_NEAR(de_kernel(s, t, {{tx}, th, 1.7}), oracle::de(s, t, th, tx, 1.7), 1e-12);
  }
}

TEST(DeCorrGrad, VanishesOnEqualSets) {
  std::mt19937_64 rng(2);
  const auto s = oracle::random_set(rng, 5);
  const auto g = de_corr_grad(s, s, {{0.3}, 0.5, 1.0});
  EXPECT_EQ(g.d_theta_h, 0.0);
  EXPECT_EQ(g.d_theta_x, 0.0);
}

TEST(DeCorrGrad, SingletonHandDerivative) {
  const double th = 0.6;
  const double tx = 0.35;
  PointSet x{{0.1, 0.3}};
  PointSet y{{0.7, 0.4}};
  const double dist2 = 0.36 + 0.01;
  const double r = std::exp(-dist2 / (2 * tx * tx));
  const double rh = std::exp(-(2.0 - 2.0 * r) / (2 * th * th));
  const double dd2 = -2.0 * r * dist2 / (tx * tx * tx);
  const auto g = de_corr_grad(x, y, {{tx}, th, 1.0});
  EXPECT_NEAR(g.d_theta_x, -rh * dd2 / (2 * th * th), 1e-13);
  EXPECT_NEAR(g.d_theta_h, rh * (2.0 - 2.0 * r) / (th * th * th), 1e-13);
}

TEST(DeCorrGrad, MatchesCentralDifferencesOnRandomPairs) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> theta(0.05, 2.0);
  std::uniform_int_distribution<int> card(1, 10);
  for (int rep = 0; rep < 100; ++rep) {
    const auto s = oracle::random_set(rng, card(rng));
    const auto t = oracle::random_set(rng, card(rng));
    const double th = theta(rng);
    const double tx = theta(rng);
    const auto g = de_corr_grad(s, t, {{tx}, th, 1.0});
    const double h = 1e-6;
    const double fd_h = oracle::central_diff([&](double v) { return oracle::de(s, t, v, tx); }, th, h);
    const double fd_x = oracle::central_diff([&](double v) { return oracle::de(s, t, th, v); }, tx, h);
    EXPECT_NEAR(g.d_theta_h, fd_h, 1e-5 * std::abs(fd_h) + 1e-9) << "rep " << rep;
    EXPECT_NEAR(g.d_theta_x, fd_x, 1e-5 * std::abs(fd_x) + 1e-9) << "rep " << rep;
  }
}

TEST(DeCorrelationWithGradients, AgreesWithPairwiseEvaluation) {
  std::mt19937_64 rng(4);
  std::vector<PointSet> sets;
  for (int i = 0; i < 12; ++i) sets.push_back(oracle::random_set(rng, 1 + i % 6));
  const auto cg = de_correlation_with_gradients(sets, 0.4, 0.25);
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t j = 0; j < sets.size(); ++j) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto jj = static_cast<Eigen::Index>(j);
      const auto g = de_corr_grad(sets[i], sets[j], {{0.25}, 0.4, 1.0});
      EXPECT_NEAR(cg.corr(ii, jj), de_kernel(sets[i], sets[j], {{0.25}, 0.4, 1.0}), 1e-13);
      EXPECT_NEAR(cg.d_theta_h(ii, jj), g.d_theta_h, 1e-12);
      EXPECT_NEAR(cg.d_theta_x(ii, jj), g.d_theta_x, 1e-12);
    }
}

TEST(Gram, SingleSet) {
  PointSet s{{0.1, 0.2}, {0.3, 0.3}};
  const auto k = gram(std::vector<PointSet>{s}, KernelSpec::double_sum(0.5));
  ASSERT_EQ(k.rows(), 1);
  EXPECT_DOUBLE_EQ(k(0, 0), oracle::k0(s, s, 0.5));
  const auto kd = gram(std::vector<PointSet>{s}, KernelSpec::deep_embedding(0.3, 0.5, 2.0));
  EXPECT_DOUBLE_EQ(kd(0, 0), 2.0);
}

TEST(Gram, DoubleSumTripleIsSingular) {
  const std::vector<PointSet> triple{PointSet{{0.2, 0.3}}, PointSet{{0.8, 0.6}},
                                     PointSet{{0.2, 0.3}, {0.8, 0.6}}};
  const auto k = gram(triple, KernelSpec::double_sum(0.4));
  EXPECT_NEAR(k.determinant(), 0.0, 1e-15);
}

TEST(Gram, DeepEmbeddingOverDistinctSetsIsPositiveDefinite) {
  std::mt19937_64 rng(17);
  const auto sets = oracle::random_sets(rng, 20, 5);
  EXPECT_GT(min_eig(gram(sets, KernelSpec::deep_embedding(0.5, 0.3))), 0.0);
}

TEST(Gram, MatchesNaiveAndIsExactlySymmetric) {
  std::mt19937_64 rng(23);
  std::vector<PointSet> sets;
  for (int i = 0; i < 25; ++i) sets.push_back(oracle::random_set(rng, 1 + i % 9, 3));
  for (const auto& spec : {KernelSpec::double_sum(0.3, 1.5), KernelSpec::deep_embedding(0.2, 0.7, 0.8)}) {
    const auto k = gram(sets, spec);
    EXPECT_EQ(k, k.transpose());
    for (std::size_t i = 0; i < sets.size(); ++i)
      for (std::size_t j = 0; j < sets.size(); ++j) {
        const double ref = spec.family == KernelFamily::DoubleSum
                               ? 1.5 * oracle::k0(sets[i], sets[j], 0.3)
                               : oracle::de(sets[i], sets[j], 0.2, 0.7, 0.8);
        EXPECT_NEAR(k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), ref, 1e-12);
      }
  }
}

TEST(Gram, CrossGramAgreesWithGram) {
  std::mt19937_64 rng(29);
  const auto a = oracle::random_sets(rng, 7, 4);
  const auto b = oracle::random_sets(rng, 5, 3);
  std::vector<PointSet> all = a;
  all.insert(all.end(), b.begin(), b.end());
  const auto spec = KernelSpec::deep_embedding(0.3, 0.2);
  const auto full = gram(all, spec);
  const auto cross = cross_gram(a, b, spec);
  EXPECT_LT((cross - full.topRightCorner(7, 5)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Gram, DimensionMismatchThrows) {
  const std::vector<PointSet> mixed{PointSet{{0.1}}, PointSet{{0.1, 0.2}}};
  EXPECT_THROW(gram(mixed, KernelSpec::double_sum(1.0)), InputError);
}

TEST(DsGramFinite, TwoPointGroundIsSingular) {
  GroundSet ground({pt(0.1, 0.9), pt(0.4, 0.2)});
  const std::vector<std::vector<std::size_t>> subsets{{0}, {1}, {0, 1}};
  const auto k = ds_gram_finite(ground, subsets, {0.3});
  EXPECT_LE(min_eig(k), 1e-12 * k.trace());
}

TEST(DsGramFinite, MembershipMatrixOfOverlappingSubsetsIsSingular) {
  std::mt19937_64 rng(31);
  std::vector<Point> pts;
  for (int i = 0; i < 5; ++i) pts.push_back(pt(unit(rng), unit(rng)));
  GroundSet ground(pts);
  const std::vector<std::vector<std::size_t>> subsets{{0, 1, 4}, {2, 3, 4}, {0, 3, 4}, {1, 2, 4}};
  for (double theta : {0.05, 0.3, 1.0}) {
    const auto k = ds_gram_finite(ground, subsets, {theta});
    EXPECT_LE(min_eig(k), 1e-12 * k.trace()) << theta;
    EXPECT_THROW(fit(SetDataset{2, {ground.subset(subsets[0]), ground.subset(subsets[1]),
                                    ground.subset(subsets[2]), ground.subset(subsets[3])},
                                {1.0, 2.0, 3.0, 4.0}},
                     KernelSpec::double_sum(theta), JitterPolicy::none()),
                 SingularMatrixError);
  }
}

TEST(DsGramFinite, WholeGroundSet) {
  std::vector<Point> pts{pt(0.1, 0.1), pt(0.5, 0.9), pt(0.7, 0.3)};
  GroundSet ground(pts);
  const std::vector<std::vector<std::size_t>> subsets{{0, 1, 2}};
  const auto k = ds_gram_finite(ground, subsets, {0.4});
  ASSERT_EQ(k.rows(), 1);
  EXPECT_NEAR(k(0, 0), oracle::k0(ground.subset(subsets[0]), ground.subset(subsets[0]), 0.4), 1e-14);
}

TEST(DsGramFinite, AgreesWithPairwiseDoubleSum) {
  std::mt19937_64 rng(37);
  std::vector<Point> pts;
  for (int i = 0; i < 12; ++i) pts.push_back(pt(unit(rng), unit(rng)));
  GroundSet ground(pts);
  std::vector<std::vector<std::size_t>> subsets;
  std::vector<PointSet> sets;
  for (int s = 0; s < 15; ++s) {
    std::vector<std::size_t> idx(12);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(1 + s % 6));
    sets.push_back(ground.subset(idx));
    subsets.push_back(idx);
  }
  const auto k = ds_gram_finite(ground, subsets, {0.25});
  const auto ref = gram(sets, KernelSpec::double_sum(0.25));
  EXPECT_LT((k - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DsGramFinite, RejectsBadIndices) {
  GroundSet ground({pt(0.1, 0.9), pt(0.4, 0.2)});
  const std::vector<std::vector<std::size_t>> out_of_range{{0, 2}};
  const std::vector<std::vector<std::size_t>> repeated{{1, 1}};
  const std::vector<std::vector<std::size_t>> empty{{}};
  EXPECT_THROW(ds_gram_finite(ground, out_of_range, {0.3}), InputError);
  EXPECT_THROW(ds_gram_finite(ground, repeated, {0.3}), InputError);
  EXPECT_THROW(ds_gram_finite(ground, empty, {0.3}), InputError);
  EXPECT_THROW(GroundSet({pt(0.1, 0.9), pt(0.1, 0.9)}), InputError);
}

TEST(ConditionNumber, SimpleMatrices) {
  EXPECT_DOUBLE_EQ(condition_number(Eigen::MatrixXd::Identity(4, 4)), 1.0);
  Eigen::MatrixXd d = Eigen::Vector2d(4.0, 1.0).asDiagonal();
  EXPECT_NEAR(condition_number(d), 4.0, 1e-14);
}

TEST(ConditionNumber, SingularTripleIsInfinite) {
  const std::vector<PointSet> triple{PointSet{{0.3, 0.3}}, PointSet{{0.5, 0.9}},
                                     PointSet{{0.3, 0.3}, {0.5, 0.9}}};
  EXPECT_TRUE(std::isinf(condition_number(gram(triple, KernelSpec::double_sum(0.6)))));
}

TEST(ConditionNumber, RejectsAsymmetricInput) {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 0.5, 0.2, 1.0;
  EXPECT_THROW(condition_number(m), InputError);
}

TEST(JitterBound, ClampedCases) {
  EXPECT_NEAR(jitter_bound(3.0, std::exp(4.0), 4.0), 0.0, 1e-15);
  EXPECT_EQ(jitter_bound(3.0, 10.0, 4.0), 0.0);
  EXPECT_THROW(jitter_bound(3.0, 10.0, 0.0), InputError);
  EXPECT_THROW(jitter_bound(3.0, 10.0, -1.0), InputError);
}

TEST(JitterBound, WorkedExample) {
  const double a = std::log(1e8);
  const double delta = jitter_bound(10.0, 1e12, a);
  EXPECT_NEAR(delta, 1e-7, 1e-10);
  const double lmin = 10.0 / 1e12;
  EXPECT_LE((10.0 + delta) / (lmin + delta), 1e8 * (1 + 1e-10));
}

TEST(JitterBound, GuaranteeOnRandomSpectra) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> logk(0.0, 16.0);
  for (int rep = 0; rep < 200; ++rep) {
    const double lmax = 0.1 + 10.0 * unit(rng);
    const double kappa = std::pow(10.0, logk(rng));
    const double a = 1.0 + 6.0 * unit(rng);
    const double delta = jitter_bound(lmax, kappa, a);
    const double lmin = lmax / kappa;
    EXPECT_LE((lmax + delta) / (lmin + delta), std::exp(a) * (1 + 1e-10));
  }
}

TEST(KernelProperties, ExactSymmetry) {
  std::mt19937_64 rng(43);
  for (int rep = 0; rep < 40; ++rep) {
    const auto s = oracle::random_set(rng, 1 + rep % 8);
    const auto t = oracle::random_set(rng, 1 + (rep * 3) % 8);
    EXPECT_EQ(ds_kernel(s, t, {0.2}), ds_kernel(t, s, {0.2}));
    EXPECT_EQ(de_kernel(s, t, {{0.2}, 0.5, 1.0}), de_kernel(t, s, {{0.2}, 0.5, 1.0}));
    EXPECT_EQ(embed_distance(s, t, {0.7}), embed_distance(t, s, {0.7}));
  }
}

TEST(KernelProperties, DoubleSumQuadraticFormIsNonnegative) {
  std::mt19937_64 rng(47);
  std::normal_distribution<double> gauss;
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 2 + rep % 29;
    std::vector<PointSet> sets;
    for (int i = 0; i < n; ++i) sets.push_back(oracle::random_set(rng, 1 + i % 5));
    const auto k = gram(sets, KernelSpec::double_sum(0.05 + unit(rng)));
    Eigen::VectorXd a(n);
    for (int i = 0; i < n; ++i) a[i] = gauss(rng);
    EXPECT_GE(a.dot(k * a), -1e-10);
  }
}

TEST(KernelProperties, PseudometricAxiomsAndTriangleInequality) {
  std::mt19937_64 rng(53);
  for (int rep = 0; rep < 200; ++rep) {
    const InnerKernelParams p{0.05 + unit(rng)};
    const auto a = oracle::random_set(rng, 1 + rep % 6);
    const auto b = oracle::random_set(rng, 1 + rep % 4);
    const auto c = oracle::random_set(rng, 1 + rep % 7);
    EXPECT_EQ(embed_distance(a, a, p), 0.0);
    EXPECT_LE(embed_distance(a, c, p), embed_distance(a, b, p) + embed_distance(b, c, p) + 1e-10);
  }
}

TEST(KernelProperties, DistinctSetsHavePositiveDistance) {
  std::mt19937_64 rng(59);
  for (int rep = 0; rep < 100; ++rep) {
    const auto a = oracle::random_set(rng, 3);
    // Differ from a by one point only.
    PointSet::Coords c = a.coords();
    c(1, 0) = std::min(1.0, c(1, 0) + 0.05);
    const PointSet b(c);
    ASSERT_NE(a, b);
    EXPECT_GT(embed_distance(a, b, {0.3}), 0.0);
  }
}

TEST(KernelProperties, DoubleSumTripleSingularForAnyThetaAndPoints) {
  std::mt19937_64 rng(61);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Vector2d xa = pt(unit(rng), unit(rng));
    const Eigen::Vector2d xb = pt(unit(rng), unit(rng));
    const double theta = std::exp(std::log(0.01) + unit(rng) * std::log(300.0));
    const std::vector<Point> both{xa, xb};
    const std::vector<PointSet> triple{PointSet(std::span<const Point>(&both[0], 1)),
                                       PointSet(std::span<const Point>(&both[1], 1)),
                                       PointSet(std::span<const Point>(both))};
    const auto k = gram(triple, KernelSpec::double_sum(theta));
    EXPECT_LE(min_eig(k), 1e-10 * k.trace());
  }
}

TEST(KernelProperties, DeepEmbeddingGramFactorizesWithoutJitter) {
  std::mt19937_64 rng(67);
  std::uniform_int_distribution<int> card(1, 10);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<PointSet> sets;
    for (int i = 0; i < 200; ++i) sets.push_back(oracle::random_set(rng, card(rng)));
    std::sort(sets.begin(), sets.end());
    ASSERT_EQ(std::adjacent_find(sets.begin(), sets.end()), sets.end());
    const auto k = gram(sets, KernelSpec::deep_embedding(0.3, 0.2));
    EXPECT_TRUE(detail::checked_cholesky(k).ok());
  }
}

TEST(KernelProperties, DiameterBound) {
  std::mt19937_64 rng(71);
  for (int rep = 0; rep < 2000; ++rep) {
    const auto a = oracle::random_set(rng, 1 + rep % 5, 1 + rep % 3);
    const auto b = oracle::random_set(rng, 1 + rep % 4, 1 + rep % 3);
    EXPECT_LE(embed_distance(a, b, {std::exp(-7.0 + 9.0 * unit(rng))}), std::numbers::sqrt2 + 1e-10);
  }
}

TEST(KernelProperties, CornerDistanceNonincreasingInTheta) {
  PointSet zero{{0, 0, 0}};
  PointSet one{{1, 1, 1}};
  double prev = std::numeric_limits<double>::infinity();
  for (double theta = 1e-3; theta < 50.0; theta *= 1.3) {
    const double d = embed_distance(zero, one, {theta});
    EXPECT_LE(d, prev);
    prev = d;
  }
}

TEST(KernelProperties, PointOrderNeverChangesKernelValues) {
  std::mt19937_64 rng(73);
  for (int rep = 0; rep < 30; ++rep) {
    const auto s = oracle::random_set(rng, 6);
    const auto t = oracle::random_set(rng, 4);
    PointSet::Coords rev = s.coords().colwise().reverse();
    const PointSet s2(rev);
    EXPECT_EQ(ds_kernel(s, t, {0.3}), ds_kernel(s2, t, {0.3}));
    EXPECT_EQ(de_kernel(s, t, {{0.3}, 0.4, 1.0}), de_kernel(s2, t, {{0.3}, 0.4, 1.0}));
  }
}
