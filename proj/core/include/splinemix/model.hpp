#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "splinemix/bspline.hpp"

namespace splinemix {

struct Subject {
  std::string id;
  std::vector<double> times;
  std::vector<double> values;
};

/// Repeated measurements for n subjects. Times need not be shared between
/// subjects. Construction validates: n >= 1, N_a >= 1, equal-length finite
/// times and values.
class LongitudinalDataset {
 public:
  LongitudinalDataset() = default;
  explicit LongitudinalDataset(std::vector<Subject> subjects);

  [[nodiscard]] std::size_t size() const noexcept { return subjects_.size(); }
  [[nodiscard]] const Subject& subject(std::size_t i) const { return subjects_.at(i); }
  [[nodiscard]] std::span<const Subject> subjects() const noexcept { return subjects_; }
  [[nodiscard]] std::size_t total_observations() const noexcept;
  /// (min t, max t) over all observations.
  [[nodiscard]] std::pair<double, double> time_range() const;

 private:
  std::vector<Subject> subjects_;
};

/// theta = {beta, Gamma, sigma^2}.
struct ParameterSet {
  Eigen::VectorXd beta;
  Eigen::MatrixXd gamma_cov;
  double noise_var = 1.0;

  /// Throws Error(invalid_argument) unless Gamma is square, symmetric to
  /// 1e-12 (relative), positive definite, and noise_var > 0.
  void validate() const;
};

/// Cubic B-spline bases for the mean (m_f functions) and for the random
/// curves (m_r functions) on a shared domain.
struct ModelSpec {
  static constexpr int degree = 3;

  int mf = 4;
  int mr = 4;
  double domain_min = 0.0;
  double domain_max = 1.0;

  void validate() const;
  [[nodiscard]] BasisSystem fixed_basis() const;
  [[nodiscard]] BasisSystem random_basis() const;
};

/// W_a = sigma^2 I + Phi_r Gamma Phi_r^T.
[[nodiscard]] Eigen::MatrixXd marginal_covariance(const ModelSpec& spec,
                                                  const ParameterSet& params,
                                                  const Subject& subject);

/// log f(x_a | t_a; theta) for one subject via a Cholesky factor of W_a.
/// Throws Error(covariance_degenerate) if W_a fails to factor or its
/// estimated condition number exceeds 1e12.
[[nodiscard]] double log_density(const ModelSpec& spec, const ParameterSet& params,
                                 const Subject& subject);

/// Sum of log_density over subjects.
[[nodiscard]] double log_likelihood(const ModelSpec& spec, const ParameterSet& params,
                                    const LongitudinalDataset& data);

/// Design matrices for a dataset under a spec, with subjects that share an
/// identical time vector pooled into one group so that per-design work
/// (cross products, factorizations) is done once per group.
class ModelDesign {
 public:
  struct Group {
    Eigen::MatrixXd phi_f;  ///< N x m_f
    Eigen::MatrixXd phi_r;  ///< N x m_r
    Eigen::MatrixXd ftf;    ///< Phi_f^T Phi_f
    Eigen::MatrixXd rtr;    ///< Phi_r^T Phi_r
    std::vector<int> members;
  };

  ModelDesign(const ModelSpec& spec, const LongitudinalDataset& data);

  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::size_t num_subjects() const noexcept { return values_.size(); }
  [[nodiscard]] std::size_t total_observations() const noexcept { return total_obs_; }
  [[nodiscard]] std::span<const Group> groups() const noexcept { return groups_; }
  [[nodiscard]] const Group& group_of(std::size_t subject) const {
    return groups_[group_index_.at(subject)];
  }
  [[nodiscard]] const Eigen::VectorXd& values(std::size_t subject) const {
    return values_.at(subject);
  }

 private:
  ModelSpec spec_;
  std::vector<Group> groups_;
  std::vector<int> group_index_;
  std::vector<Eigen::VectorXd> values_;
  std::size_t total_obs_ = 0;
};

/// Lower-triangular L with L L^T = Gamma. Throws Error(covariance_degenerate)
/// when Gamma is not numerically positive definite.
[[nodiscard]] Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& gamma_cov);

/// Same value as log_likelihood(spec, params, data), evaluated in the
/// m_r-dimensional form: |W| = sigma^{2N} |K| and
/// a^T W^{-1} a = (a^T a - sigma^{-2} |L_K^{-1} L^T Phi_r^T a|^2) / sigma^2
/// with K = I + sigma^{-2} L^T Phi_r^T Phi_r L.
[[nodiscard]] double log_likelihood(const ModelDesign& design, const ParameterSet& params);

}  // namespace splinemix
