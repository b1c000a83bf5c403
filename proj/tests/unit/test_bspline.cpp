#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "splinemix/bspline.hpp"
#include "splinemix/error.hpp"
#include "splinemix/simulation.hpp"
#include "test_support.hpp"

namespace splinemix {
namespace {

using testing::expect_code;

TEST(MakeKnots, FiveBasisOnUnitInterval) {
  const auto b = make_knots(0.0, 1.0, 5, 3);
  const std::vector<double> expected{-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5};
  ASSERT_EQ(b.knots().size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(b.knots()[i], expected[i]);
  EXPECT_DOUBLE_EQ(b.spacing(), 0.5);
  EXPECT_EQ(b.domain_min(), 0.0);
  EXPECT_EQ(b.domain_max(), 1.0);
}

TEST(MakeKnots, SingleInteriorInterval) {
  const auto b = make_knots(0.0, 1.0, 4, 3);
  const std::vector<double> expected{-3, -2, -1, 0, 1, 2, 3, 4};
  ASSERT_EQ(b.knots().size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(b.knots()[i], expected[i]);
}

TEST(MakeKnots, RejectsTooFewBasis) {
  expect_code(ErrorCode::invalid_basis_count, [] { (void)make_knots(0.0, 1.0, 3, 3); });
}

TEST(MakeKnots, RejectsEmptyDomain) {
  expect_code(ErrorCode::invalid_domain, [] { (void)make_knots(1.0, 1.0, 5, 3); });
  expect_code(ErrorCode::invalid_domain, [] { (void)make_knots(2.0, 1.0, 5, 3); });
}

TEST(MakeKnots, EndpointsExactOnAwkwardDomain) {
  const auto b = make_knots(0.01, 1.0, 8, 3);
  EXPECT_EQ(b.knots()[3], 0.01);
  EXPECT_EQ(b.knots()[8], 1.0);
  for (std::size_t i = 1; i < b.knots().size(); ++i) {
    EXPECT_NEAR(b.knots()[i] - b.knots()[i - 1], b.spacing(), 1e-12);
  }
}

TEST(EvalBasis, DegreeZeroIsHalfOpen) {
  const auto b = make_knots(0.0, 1.0, 5, 3);
  ASSERT_EQ(b.knots()[3], 0.0);
  ASSERT_EQ(b.knots()[4], 0.5);
  EXPECT_EQ(eval_basis(b, 3, 0, 0.25), 1.0);
  EXPECT_EQ(eval_basis(b, 3, 0, 0.5), 0.0);
  EXPECT_EQ(eval_basis(b, 4, 0, 0.5), 1.0);
}

TEST(EvalBasis, CubicAtSupportCenterIsTwoThirds) {
  const auto b = make_knots(0.0, 1.0, 7, 3);
  for (int j = 0; j < 7; ++j) {
    const double center = b.knots()[j + 2];
    EXPECT_NEAR(eval_basis(b, j, 3, center), 2.0 / 3.0, 1e-14) << "j=" << j;
  }
}

TEST(EvalBasis, RejectsBadIndex) {
  const auto b = make_knots(0.0, 1.0, 5, 3);
  expect_code(ErrorCode::invalid_index, [&] { (void)eval_basis(b, -1, 3, 0.5); });
  expect_code(ErrorCode::invalid_index, [&] { (void)eval_basis(b, 5, 3, 0.5); });
  EXPECT_NO_THROW((void)eval_basis(b, 6, 1, 0.5));
  expect_code(ErrorCode::invalid_index, [&] { (void)eval_basis(b, 7, 1, 0.5); });
  EXPECT_NO_THROW((void)eval_basis(b, 7, 0, 0.5));
  expect_code(ErrorCode::invalid_index, [&] { (void)eval_basis(b, 8, 0, 0.5); });
}

TEST(EvalBasis, RightEndpointTakesLeftLimit) {
  const auto b = make_knots(0.0, 1.0, 6, 3);
  double sum = 0.0;
  for (int j = 0; j < 6; ++j) {
    const double at_end = eval_basis(b, j, 3, 1.0);
    const double near_end = eval_basis(b, j, 3, std::nextafter(1.0, 0.0));
    EXPECT_NEAR(at_end, near_end, 1e-12);
    sum += at_end;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(EvalBasis, MatchesClosedFormUniformCubic) {
  Rng rng(11, 0, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    const int m = 4 + static_cast<int>(rng.uniform() * 8);
    const double lo = -2.0 + 4.0 * rng.uniform();
    const double hi = lo + 0.1 + 3.0 * rng.uniform();
    const auto b = make_knots(lo, hi, m, 3);
    const double t = lo + (hi - lo) * rng.uniform();
    for (int j = 0; j < m; ++j) {
      const double u = (t - b.knots()[j]) / b.spacing();
      EXPECT_NEAR(eval_basis(b, j, 3, t), testing::cardinal_cubic(u), 1e-11);
    }
  }
}

TEST(DesignMatrix, RowsSumToOneOnSimulationGrid) {
  const auto b = make_knots(0.0, 1.0, 5, 3);
  const auto grid = observation_grid(0.01, 1.0, 50);
  const auto dm = design_matrix(b, grid);
  ASSERT_EQ(dm.values.rows(), 50);
  ASSERT_EQ(dm.values.cols(), 5);
  for (Eigen::Index i = 0; i < 50; ++i) EXPECT_NEAR(dm.values.row(i).sum(), 1.0, 1e-10);
}

TEST(DesignMatrix, LeftEndpointRow) {
  const auto b = make_knots(0.0, 1.0, 4, 3);
  const std::vector<double> t{0.0};
  const auto dm = design_matrix(b, t);
  EXPECT_NEAR(dm.values(0, 0), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(dm.values(0, 1), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(dm.values(0, 2), 1.0 / 6.0, 1e-15);
  EXPECT_EQ(dm.values(0, 3), 0.0);
  EXPECT_NEAR(dm.values.row(0).sum(), 1.0, 1e-15);
}

TEST(DesignMatrix, RejectsOutOfDomain) {
  const auto b = make_knots(0.0, 1.0, 5, 3);
  const std::vector<double> t{0.5, 1.5};
  expect_code(ErrorCode::out_of_domain, [&] { (void)design_matrix(b, t); });
  const std::vector<double> below{-1e-9};
  expect_code(ErrorCode::out_of_domain, [&] { (void)design_matrix(b, below); });
}

TEST(DesignMatrix, AgreesWithRecursionEverywhere) {
  Rng rng(12, 0, 0);
  for (int trial = 0; trial < 500; ++trial) {
    const int m = 4 + static_cast<int>(rng.uniform() * 10);
    const auto b = make_knots(0.01, 1.0, m, 3);
    std::vector<double> t(5);
    for (auto& x : t) x = 0.01 + 0.99 * rng.uniform();
    t.push_back(0.01);
    t.push_back(1.0);
    t.push_back(b.knots()[3 + (m - 3) / 2]);
    const auto dm = design_matrix(b, t);
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (int j = 0; j < m; ++j) {
        EXPECT_NEAR(dm.values(static_cast<Eigen::Index>(i), j), eval_basis(b, j, 3, t[i]), 1e-13);
      }
    }
  }
}

// Partition of unity, non-negativity, local support and the row sparsity
// bound over 10^4 random (basis, t) draws.
TEST(BasisProperties, RandomDraws) {
  Rng rng(13, 0, 0);
  for (int trial = 0; trial < 10000; ++trial) {
    const int m = 4 + static_cast<int>(rng.uniform() * 12);
    const double lo = -5.0 + 10.0 * rng.uniform();
    const double hi = lo + 1e-3 + 10.0 * rng.uniform();
    const auto b = make_knots(lo, hi, m, 3);
    const double t = lo + (hi - lo) * rng.uniform();
    double sum = 0.0;
    int nonzero = 0;
    for (int j = 0; j < m; ++j) {
      const double v = eval_basis(b, j, 3, t);
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      if (t < b.knots()[j] || t > b.knots()[j + 4]) ASSERT_EQ(v, 0.0);
      if (v != 0.0) ++nonzero;
      sum += v;
    }
    ASSERT_NEAR(sum, 1.0, 1e-10);
    ASSERT_LE(nonzero, 4);
  }
}

}  // namespace
}  // namespace splinemix
