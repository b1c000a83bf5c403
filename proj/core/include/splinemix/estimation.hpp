#pragma once

#include <vector>

#include <Eigen/Dense>

#include "splinemix/model.hpp"

namespace splinemix {

struct EmOptions {
  int max_iter = 500;
  /// Stop when |l_{j+1} - l_j| / (1 + |l_{j+1}|) < rel_tol.
  double rel_tol = 1e-8;
  /// Eigenvalue floor applied to Gamma after every update.
  double gamma_floor = 1e-10;
  /// Lower bound on sigma^2 after every update.
  double noise_floor = 1e-10;
  /// When false, Gamma and sigma^2 stay at their initial values and only
  /// beta is iterated (the known-variance case).
  bool update_variances = true;
  /// Posterior covariance used in the Gamma update: with sigma^2_{j+1}
  /// (true) or sigma^2_j (false).
  bool gamma_step_uses_updated_noise = true;

  void validate() const;
};

struct FittedModel {
  ModelSpec spec;
  ParameterSet params;
  std::vector<Eigen::VectorXd> subject_effects;  ///< gamma_hat per subject, length m_r
  std::vector<Eigen::VectorXd> fitted_values;    ///< x_hat per subject at its own times
  double loglik = 0.0;                           ///< log-likelihood at params
  std::vector<double> em_trace;                  ///< log-likelihood before each update and at exit
  bool converged = false;
  int iterations = 0;
};

/// beta_hat = (sum Phi_f^T W^{-1} Phi_f)^{-1} sum Phi_f^T W^{-1} x for
/// known Gamma and sigma^2. Throws Error(rank_deficient) if the normal
/// matrix is numerically singular.
[[nodiscard]] Eigen::VectorXd gls_beta(const ModelSpec& spec, const Eigen::MatrixXd& gamma_cov,
                                       double noise_var, const LongitudinalDataset& data);

/// Gamma Phi_r^T W^{-1} (x - Phi_f beta): the random-effect predictor in
/// marginal (N x N) form.
[[nodiscard]] Eigen::VectorXd blup_gamma_marginal(const ModelSpec& spec,
                                                  const ParameterSet& params,
                                                  const Eigen::VectorXd& beta_hat,
                                                  const Subject& subject);

/// (sigma^2 Gamma^{-1} + Phi_r^T Phi_r)^{-1} Phi_r^T (x - Phi_f beta): the
/// same predictor in m_r x m_r form.
[[nodiscard]] Eigen::VectorXd blup_gamma_conditional(const ModelSpec& spec,
                                                     const ParameterSet& params,
                                                     const Eigen::VectorXd& beta_hat,
                                                     const Subject& subject);

/// Phi_f beta_hat + Phi_r gamma_hat at the subject's observation times.
[[nodiscard]] Eigen::VectorXd predict_subject(const FittedModel& fit,
                                              const LongitudinalDataset& data,
                                              std::size_t subject_index);

/// Population mean curve Phi_f beta_hat at the subject's observation times.
[[nodiscard]] Eigen::VectorXd mean_curve(const FittedModel& fit, const LongitudinalDataset& data,
                                         std::size_t subject_index);

struct PooledFit {
  Eigen::VectorXd beta;  ///< minimum-norm least-squares solution
  double rss = 0.0;
  int rank = 0;
};

/// Ordinary least squares of every observation on Phi_f, ignoring subjects.
[[nodiscard]] PooledFit pooled_ols(const ModelSpec& spec, const LongitudinalDataset& data);

/// beta_0 from pooled OLS, Gamma_0 = s^2 I and sigma^2_0 = s^2 / 2 where
/// s^2 = RSS / sum N_a; both variances floored at 1e-8. Throws
/// Error(rank_deficient) when the pooled design has rank below m_f.
[[nodiscard]] ParameterSet default_init(const ModelSpec& spec, const LongitudinalDataset& data);

/// Maximum likelihood by EM with gamma_a as latent variables.
///
/// Each iteration, from (beta_j, Gamma_j, sigma^2_j):
///   E:  gamma_a = (sigma^2 Gamma^{-1} + Phi_r^T Phi_r)^{-1} Phi_r^T (x_a - Phi_f beta_j)
///   M1: sigma^2_{j+1} = sum_a (|x_a - Phi_f beta_j - Phi_r gamma_a|^2
///                       + tr(Phi_r C_a Phi_r^T)) / sum N_a,
///       C_a = (Gamma_j^{-1} + Phi_r^T Phi_r / sigma^2_j)^{-1}
///   M2: Gamma_{j+1} = (1/n) sum_a (gamma_a gamma_a^T + C'_a),
///       C'_a = (Gamma_j^{-1} + Phi_r^T Phi_r / sigma^2_{j+1})^{-1}
///   M3: beta_{j+1} = (sum Phi_f^T Phi_f)^{-1} sum Phi_f^T (x_a - Phi_r gamma_a)
///
/// C_a is evaluated as L (I + L^T Phi_r^T Phi_r L / sigma^2)^{-1} L^T with
/// Gamma = L L^T, which never forms Gamma^{-1}. Throws Error(em_degenerate)
/// if Gamma cannot be kept positive definite and Error(em_diverged) on a
/// non-finite likelihood.
[[nodiscard]] FittedModel em_fit(const ModelSpec& spec, const LongitudinalDataset& data,
                                 const ParameterSet& init, const EmOptions& opts = {});

}  // namespace splinemix
