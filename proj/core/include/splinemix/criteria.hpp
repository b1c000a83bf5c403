#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "splinemix/estimation.hpp"
#include "splinemix/model.hpp"

namespace splinemix {

/// Half-vectorization of a symmetric m x m matrix.
///
/// Order is column-major over the upper triangle, 0-based:
/// (0,0), (0,1), (1,1), (0,2), (1,2), (2,2), ...
/// so entry (h, k) with h <= k sits at k(k+1)/2 + h.
class VechIndex {
 public:
  explicit VechIndex(int m);

  [[nodiscard]] int dim() const noexcept { return m_; }
  [[nodiscard]] std::size_t size() const noexcept { return pairs_.size(); }
  [[nodiscard]] std::pair<int, int> pair(std::size_t idx) const { return pairs_.at(idx); }
  [[nodiscard]] std::size_t index(int h, int k) const;

  [[nodiscard]] Eigen::VectorXd pack(const Eigen::MatrixXd& sym) const;
  [[nodiscard]] Eigen::MatrixXd unpack(const Eigen::VectorXd& v) const;
  /// dGamma / dtheta_idx: Delta_hk + Delta_kh off the diagonal, Delta_hh on it.
  [[nodiscard]] Eigen::MatrixXd direction(std::size_t idx) const;

 private:
  int m_;
  std::vector<std::pair<int, int>> pairs_;
};

/// theta = (beta, vech Gamma, sigma^2) as one vector of length num_params.
[[nodiscard]] Eigen::VectorXd pack_theta(const ParameterSet& params);
[[nodiscard]] ParameterSet unpack_theta(const Eigen::VectorXd& theta, int mf, int mr);

/// p = m_f + m_r (m_r + 1) / 2 + 1.
[[nodiscard]] int num_params(int mf, int mr);

[[nodiscard]] double aic_value(double loglik, int p);
[[nodiscard]] double bic_value(double loglik, int p, std::size_t n);
/// -2 loglik + p (log n - log 2 pi) + log |I|.
[[nodiscard]] double bic_i_value(double loglik, int p, std::size_t n, double log_det_info);

/// Criteria of a fitted model, n = number of subjects.
[[nodiscard]] double aic(const FittedModel& fit, const LongitudinalDataset& data);
[[nodiscard]] double bic(const FittedModel& fit, const LongitudinalDataset& data);
[[nodiscard]] double bic_i(const FittedModel& fit, const LongitudinalDataset& data);

/// I(theta) = -(1/n) sum_a d^2 log f(x_a | theta) / dtheta dtheta^T in the
/// pack_theta coordinates, returned symmetrized.
///
/// With W = sigma^2 I + Phi_r Gamma Phi_r^T, a = x - Phi_f beta,
/// E_i = dGamma/dtheta_i (VechIndex::direction), B = Phi_r^T W^{-1} Phi_r,
/// c = Phi_r^T W^{-1} a and d = Phi_r^T W^{-2} a, the per-subject blocks are
///   (beta, beta)     -Phi_f^T W^{-1} Phi_f
///   (beta, Gamma_i)  -Phi_f^T W^{-1} Phi_r E_i c
///   (beta, sigma^2)  -Phi_f^T W^{-2} a
///   (Gamma_i, Gamma_j)  1/2 tr(E_i B E_j B) - c^T E_i B E_j c
///   (Gamma_i, sigma^2)  1/2 tr(E_i Phi_r^T W^{-2} Phi_r) - c^T E_i d
///   (sigma^2, sigma^2)  1/2 tr(W^{-2}) - a^T W^{-3} a
/// The Gamma rows follow from the chain rule through the symmetric
/// parametrization; they are the scalar form of the matrix-valued
/// "2G - diag(G)" expressions for derivatives with respect to a symmetric
/// matrix.
[[nodiscard]] Eigen::MatrixXd information_matrix(const ModelSpec& spec, const ParameterSet& params,
                                                 const LongitudinalDataset& data);
[[nodiscard]] Eigen::MatrixXd information_matrix(const FittedModel& fit,
                                                 const LongitudinalDataset& data);

/// log |I| from a Cholesky factor. Throws Error(information_degenerate) if I
/// is not finite or not positive definite.
[[nodiscard]] double log_det_information(const Eigen::MatrixXd& info);

/// Finite-difference Hessian of the log-likelihood (not scaled) in
/// pack_theta coordinates, Richardson-extrapolated from central differences
/// at h, h/2 and h/4. The likelihood is re-evaluated densely in extended
/// precision, independently of the analytic routes. Coordinate i uses
/// h = step * max(1, |theta_i|), halved until every perturbed point keeps
/// Gamma positive definite and sigma^2 > 0.
[[nodiscard]] Eigen::MatrixXd fd_hessian(const ModelSpec& spec, const LongitudinalDataset& data,
                                         const ParameterSet& params, double step = 1e-2);

/// Central-difference gradient of the log-likelihood, same conventions.
[[nodiscard]] Eigen::VectorXd fd_gradient(const ModelSpec& spec, const LongitudinalDataset& data,
                                          const ParameterSet& params, double step = 1e-6);

enum class Criterion { aic = 0, bic = 1, bic_i = 2 };
inline constexpr std::array<Criterion, 3> kAllCriteria{Criterion::aic, Criterion::bic,
                                                       Criterion::bic_i};
[[nodiscard]] std::string_view to_string(Criterion c) noexcept;

enum class CandidateStatus { ok, em_failed, info_failed };
[[nodiscard]] std::string_view to_string(CandidateStatus s) noexcept;

struct CandidateRecord {
  int mf = 0;
  int mr = 0;
  int p = 0;
  double loglik = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  double bic_i = 0.0;       ///< meaningful only when status == ok
  double log_det_info = 0.0;
  CandidateStatus status = CandidateStatus::ok;
  std::string detail;       ///< error code name for failed candidates
  bool converged = false;
  int iterations = 0;

  [[nodiscard]] bool eligible(Criterion c) const noexcept;
  [[nodiscard]] double value(Criterion c) const noexcept;
};

struct CriteriaReport {
  std::size_t num_subjects = 0;
  bool small_n = false;  ///< n < 2: the BIC penalties vanish or turn negative
  std::vector<CandidateRecord> candidates;
  /// Index into candidates of the argmin per criterion (by Criterion value).
  std::array<std::optional<std::size_t>, 3> chosen{};
  /// Fitted models parallel to candidates when SelectOptions::keep_fits.
  std::vector<std::optional<FittedModel>> fits;

  [[nodiscard]] std::optional<std::pair<int, int>> chosen_model(Criterion c) const;
};

struct SelectOptions {
  EmOptions em;
  /// Basis domain; defaults to the dataset's time range.
  std::optional<std::pair<double, double>> domain;
  int threads = 0;
  bool keep_fits = false;
};

/// Fits one candidate from default_init and evaluates all criteria. Never
/// throws for numerical failures; they are recorded in the status.
[[nodiscard]] CandidateRecord evaluate_candidate(const LongitudinalDataset& data,
                                                 const ModelSpec& spec, const EmOptions& em,
                                                 std::optional<FittedModel>* fit_out = nullptr);

/// Fills report.chosen: per criterion, the eligible candidate with the
/// smallest value; ties go to smaller m_f, then smaller m_r, then the
/// earlier row.
void choose_models(CriteriaReport& report);

/// Evaluates every (m_f, m_r) in the grid, candidates in lexicographic
/// order. Throws Error(invalid_argument) on an empty grid or values below 4
/// and Error(selection_failed) when every candidate fails.
[[nodiscard]] CriteriaReport select_model(const LongitudinalDataset& data,
                                          std::span<const int> mf_values,
                                          std::span<const int> mr_values,
                                          const SelectOptions& opts = {});

}  // namespace splinemix
