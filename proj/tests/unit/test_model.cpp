#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "splinemix/bspline.hpp"
#include "splinemix/error.hpp"
#include "splinemix/model.hpp"
#include "splinemix/simulation.hpp"
#include "test_support.hpp"

namespace splinemix {
namespace {

using testing::expect_code;

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Subject one_point(double t, double x) { return Subject{"a", {t}, {x}}; }

double basis_norm2(const BasisSystem& b, double t) {
  const std::vector<double> td{t};
  return design_matrix(b, td).values.squaredNorm();
}

TEST(Dataset, ValidatesShape) {
  expect_code(ErrorCode::invalid_argument, [] { LongitudinalDataset d(std::vector<Subject>{}); });
  expect_code(ErrorCode::invalid_argument,
              [] { LongitudinalDataset d({Subject{"a", {0.1, 0.2}, {1.0}}}); });
  expect_code(ErrorCode::invalid_argument, [] { LongitudinalDataset d({Subject{"a", {}, {}}}); });
  expect_code(ErrorCode::invalid_argument,
              [] { LongitudinalDataset d({Subject{"a", {0.1}, {std::nan("")}}}); });
  const LongitudinalDataset d({Subject{"a", {0.3, 0.1}, {1, 2}}, Subject{"b", {0.7}, {3}}});
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.total_observations(), 3u);
  EXPECT_EQ(d.time_range(), std::make_pair(0.1, 0.7));
}

TEST(ParameterSet, Validates) {
  ParameterSet p{Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4), 1.0};
  EXPECT_NO_THROW(p.validate());
  p.noise_var = 0.0;
  expect_code(ErrorCode::invalid_argument, [&] { p.validate(); });
  p.noise_var = 1.0;
  p.gamma_cov(0, 1) = 0.5;
  expect_code(ErrorCode::invalid_argument, [&] { p.validate(); });
  p.gamma_cov(1, 0) = 0.5;
  EXPECT_NO_THROW(p.validate());
  p.gamma_cov(2, 2) = -1.0;
  expect_code(ErrorCode::invalid_argument, [&] { p.validate(); });
}

TEST(ModelSpec, RequiresCubicCounts) {
  expect_code(ErrorCode::invalid_basis_count, [] { ModelSpec{3, 4, 0.0, 1.0}.validate(); });
  expect_code(ErrorCode::invalid_basis_count, [] { ModelSpec{4, 3, 0.0, 1.0}.validate(); });
  expect_code(ErrorCode::invalid_domain, [] { ModelSpec{4, 4, 1.0, 0.0}.validate(); });
}

TEST(MarginalCovariance, SinglePointIdentityGamma) {
  const ModelSpec spec{4, 4, 0.0, 1.0};
  const ParameterSet p{Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4), 1.0};
  const auto w = marginal_covariance(spec, p, one_point(0.3, 0.0));
  ASSERT_EQ(w.rows(), 1);
  EXPECT_NEAR(w(0, 0), 1.0 + basis_norm2(spec.random_basis(), 0.3), 1e-15);
}

TEST(MarginalCovariance, LinearInGamma) {
  const ModelSpec spec{4, 5, 0.0, 1.0};
  const Subject s{"a", {0.1, 0.5, 0.9}, {0, 0, 0}};
  const double eps = 1e-7;
  const ParameterSet p{Eigen::VectorXd::Zero(4), eps * Eigen::MatrixXd::Identity(5, 5), 0.4};
  const auto phi = design_matrix(spec.random_basis(), s.times).values;
  const Eigen::MatrixXd expected =
      0.4 * Eigen::MatrixXd::Identity(3, 3) + eps * phi * phi.transpose();
  EXPECT_LT((marginal_covariance(spec, p, s) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MarginalCovariance, MatchesDoubleLoop) {
  Rng rng(21, 0, 0);
  const ModelSpec spec{4, 4, 0.0, 1.0};
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = testing::random_params(rng, 4, 4);
    Subject s{"a", {rng.uniform(), rng.uniform(), rng.uniform()}, {0, 0, 0}};
    const auto w = marginal_covariance(spec, p, s);
    const auto basis = spec.random_basis();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double v = (i == j) ? p.noise_var : 0.0;
        for (int k = 0; k < 4; ++k)
          for (int l = 0; l < 4; ++l)
            v += p.gamma_cov(k, l) * eval_basis(basis, k, 3, s.times[i]) *
                 eval_basis(basis, l, 3, s.times[j]);
        EXPECT_NEAR(w(i, j), v, 1e-13);
      }
    }
  }
}

TEST(MarginalCovariance, EigenvaluesBoundedBelowByNoise) {
  Rng rng(22, 0, 0);
  const ModelSpec spec{4, 6, 0.0, 1.0};
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = testing::random_params(rng, 4, 6);
    Subject s;
    for (int i = 0; i < 12; ++i) {
      s.times.push_back(rng.uniform());
      s.values.push_back(0.0);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(marginal_covariance(spec, p, s));
    EXPECT_GE(es.eigenvalues().minCoeff(), p.noise_var - 1e-10);
  }
}

TEST(LogDensity, StandardNormalAtMean) {
  const ModelSpec spec{4, 4, 0.0, 1.0};
  const double t = 0.4;
  const double g = 1e-9;
  const ParameterSet p{Eigen::VectorXd::Zero(4), g * Eigen::MatrixXd::Identity(4, 4),
                       1.0 - g * basis_norm2(spec.random_basis(), t)};
  EXPECT_NEAR(log_density(spec, p, one_point(t, 0.0)), -0.5 * kLog2Pi, 1e-14);
}

TEST(LogDensity, ScalarGaussian) {
  const ModelSpec spec{4, 4, 0.0, 1.0};
  const double t = 0.4;
  const double c = 1.5;
  const ParameterSet p{Eigen::VectorXd::Constant(4, c), Eigen::MatrixXd::Identity(4, 4),
                       4.0 - basis_norm2(spec.random_basis(), t)};
  EXPECT_NEAR(log_density(spec, p, one_point(t, c + 2.0)),
              -0.5 * kLog2Pi - 0.5 * std::log(4.0) - 0.5, 1e-13);
}

TEST(LogDensity, MatchesDenseOracle) {
  Rng rng(23, 0, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int mf = 4 + trial % 3;
    const int mr = 4 + (trial / 3) % 3;
    const ModelSpec spec{mf, mr, 0.0, 1.0};
    const auto p = testing::random_params(rng, mf, mr);
    const auto data = testing::random_dataset(rng, 1, 1, 15);
    const auto& s = data.subject(0);
    const auto phi_f = design_matrix(spec.fixed_basis(), s.times).values;
    const Eigen::Map<const Eigen::VectorXd> x(s.values.data(),
                                              static_cast<Eigen::Index>(s.values.size()));
    const double oracle = testing::mvn_logpdf(x, phi_f * p.beta, marginal_covariance(spec, p, s));
    EXPECT_NEAR(log_density(spec, p, s), oracle, 1e-10);
  }
}

TEST(LogDensity, PermutationInvariant) {
  Rng rng(24, 0, 0);
  const ModelSpec spec{5, 6, 0.0, 1.0};
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = testing::random_params(rng, 5, 6);
    const auto data = testing::random_dataset(rng, 1, 8, 8);
    Subject s = data.subject(0);
    const double base = log_density(spec, p, s);
    std::vector<int> order(s.times.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(order.size() - 1 - i);
    std::rotate(order.begin(), order.begin() + trial % 8, order.end());
    Subject q;
    for (int i : order) {
      q.times.push_back(s.times[i]);
      q.values.push_back(s.values[i]);
    }
    EXPECT_NEAR(log_density(spec, p, q), base, 1e-11 * (1.0 + std::abs(base)));
  }
}

TEST(LogDensity, RejectsIllConditionedCovariance) {
  const ModelSpec spec{4, 4, 0.0, 1.0};
  const ParameterSet p{Eigen::VectorXd::Zero(4), 1e8 * Eigen::MatrixXd::Identity(4, 4), 1e-8};
  Subject s{"a", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, {0, 0, 0, 0, 0, 0}};
  expect_code(ErrorCode::covariance_degenerate, [&] { (void)log_density(spec, p, s); });
}

TEST(LogLikelihood, SingleSubjectAndAdditivity) {
  Rng rng(25, 0, 0);
  const ModelSpec spec{5, 4, 0.0, 1.0};
  const auto p = testing::random_params(rng, 5, 4);
  const auto one = testing::random_dataset(rng, 1, 6, 6);
  EXPECT_EQ(log_likelihood(spec, p, one), log_density(spec, p, one.subject(0)));
  const LongitudinalDataset twice({one.subject(0), one.subject(0)});
  EXPECT_EQ(log_likelihood(spec, p, twice), 2.0 * log_density(spec, p, one.subject(0)));

  const auto data = testing::random_dataset(rng, 9, 1, 10);
  std::vector<Subject> left(data.subjects().begin(), data.subjects().begin() + 4);
  std::vector<Subject> right(data.subjects().begin() + 4, data.subjects().end());
  EXPECT_NEAR(log_likelihood(spec, p, data),
              log_likelihood(spec, p, LongitudinalDataset(left)) +
                  log_likelihood(spec, p, LongitudinalDataset(right)),
              1e-12 * std::abs(log_likelihood(spec, p, data)));
}

TEST(LogLikelihood, WoodburyRouteMatchesDense) {
  Rng rng(26, 0, 0);
  for (int trial = 0; trial < 60; ++trial) {
    const int mf = 4 + trial % 4;
    const int mr = 4 + (trial / 4) % 4;
    const ModelSpec spec{mf, mr, 0.0, 1.0};
    const auto p = testing::random_params(rng, mf, mr);
    auto data = testing::random_dataset(rng, 6, 1, 20);
    // Include subjects that share a time vector so grouping is exercised.
    std::vector<Subject> subs(data.subjects().begin(), data.subjects().end());
    Subject copy = subs[0];
    copy.id = "copy";
    for (auto& v : copy.values) v += 1.0;
    subs.push_back(copy);
    const LongitudinalDataset all(subs);
    const ModelDesign design(spec, all);
    EXPECT_LE(design.groups().size(), all.size() - 1);
    const double dense = log_likelihood(spec, p, all);
    EXPECT_NEAR(log_likelihood(design, p), dense, 1e-10 * (1.0 + std::abs(dense)));
  }
}

TEST(ModelDesign, RejectsTimesOutsideDomain) {
  const ModelSpec spec{4, 4, 0.2, 1.0};
  const LongitudinalDataset data({Subject{"a", {0.1, 0.5}, {0, 0}}});
  expect_code(ErrorCode::out_of_domain, [&] { ModelDesign d(spec, data); });
}

// The generating parameters should beat random perturbations of scale 0.5
// in the vast majority of directions.
TEST(LogLikelihood, TruthBeatsPerturbations) {
  auto design = SimulationDesign::reference(30);
  const auto g = generate_dataset(design, 0);
  const ModelSpec spec{5, 8, design.domain_min, design.domain_max};
  // Noise variance differs per subject in the generator; the pooled
  // empirical value stands in for it.
  double ss = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < g.data.size(); ++a) {
    for (std::size_t i = 0; i < g.data.subject(a).values.size(); ++i) {
      const double e = g.data.subject(a).values[i] - g.truth.values[a](static_cast<Eigen::Index>(i));
      ss += e * e;
      ++count;
    }
  }
  const ParameterSet ref{design.beta_true, design.gamma_cov_true,
                         ss / static_cast<double>(count)};
  const double base = log_likelihood(spec, ref, g.data);

  Rng rng(27, 0, 0);
  int wins = 0;
  const int trials = 200;
  int k = 0;
  while (k < trials) {
    ParameterSet q = ref;
    Eigen::VectorXd db(5);
    for (auto& v : db) v = rng.normal();
    q.beta += 0.5 * db / db.norm();
    Eigen::MatrixXd dg(8, 8);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j <= i; ++j) dg(i, j) = dg(j, i) = rng.normal();
    q.gamma_cov += 0.5 * dg / dg.norm();
    q.noise_var *= std::exp(0.5 * rng.normal());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q.gamma_cov);
    if (es.eigenvalues().minCoeff() <= 1e-6) continue;
    ++k;
    if (log_likelihood(spec, q, g.data) < base) ++wins;
  }
  EXPECT_GE(wins, static_cast<int>(0.95 * trials));
}

}  // namespace
}  // namespace splinemix
