#include "splinemix/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>

#include "splinemix/error.hpp"

namespace splinemix {

LongitudinalDataset::LongitudinalDataset(std::vector<Subject> subjects)
    : subjects_(std::move(subjects)) {
  if (subjects_.empty()) {
    throw Error(ErrorCode::invalid_argument, "dataset has no subjects");
  }
  for (const auto& s : subjects_) {
    if (s.times.size() != s.values.size()) {
      throw Error(ErrorCode::invalid_argument,
                  "subject '" + s.id + "': times and values differ in length");
    }
    if (s.times.empty()) {
      throw Error(ErrorCode::invalid_argument, "subject '" + s.id + "' has no observations");
    }
    for (std::size_t i = 0; i < s.times.size(); ++i) {
      if (!std::isfinite(s.times[i]) || !std::isfinite(s.values[i])) {
        throw Error(ErrorCode::invalid_argument,
                    "subject '" + s.id + "' has a non-finite observation");
      }
    }
  }
}

std::size_t LongitudinalDataset::total_observations() const noexcept {
  std::size_t total = 0;
  for (const auto& s : subjects_) total += s.times.size();
  return total;
}

std::pair<double, double> LongitudinalDataset::time_range() const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : subjects_) {
    const auto [mn, mx] = std::minmax_element(s.times.begin(), s.times.end());
    lo = std::min(lo, *mn);
    hi = std::max(hi, *mx);
  }
  return {lo, hi};
}

void ParameterSet::validate() const {
  const auto m = gamma_cov.rows();
  if (gamma_cov.cols() != m || m == 0) {
    throw Error(ErrorCode::invalid_argument, "gamma_cov must be a non-empty square matrix");
  }
  if (!(noise_var > 0.0) || !std::isfinite(noise_var)) {
    throw Error(ErrorCode::invalid_argument, "noise_var must be positive and finite");
  }
  if (!beta.allFinite() || !gamma_cov.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "parameters must be finite");
  }
  const double scale = std::max(1.0, gamma_cov.cwiseAbs().maxCoeff());
  if ((gamma_cov - gamma_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorCode::invalid_argument, "gamma_cov is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gamma_cov, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "gamma_cov is not positive definite");
  }
}

void ModelSpec::validate() const {
  if (mf < degree + 1 || mr < degree + 1) {
    throw Error(ErrorCode::invalid_basis_count,
                "m_f and m_r must be at least " + std::to_string(degree + 1));
  }
  if (!std::isfinite(domain_min) || !std::isfinite(domain_max) || !(domain_min < domain_max)) {
    throw Error(ErrorCode::invalid_domain, "model domain must satisfy min < max");
  }
}

BasisSystem ModelSpec::fixed_basis() const {
  return make_knots(domain_min, domain_max, mf, degree);
}

BasisSystem ModelSpec::random_basis() const {
  return make_knots(domain_min, domain_max, mr, degree);
}

namespace {

void check_dimensions(const ModelSpec& spec, const ParameterSet& params) {
  if (params.beta.size() != spec.mf || params.gamma_cov.rows() != spec.mr ||
      params.gamma_cov.cols() != spec.mr) {
    throw Error(ErrorCode::invalid_argument, "parameter dimensions do not match the model spec");
  }
}

Eigen::Map<const Eigen::VectorXd> as_vector(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

}  // namespace

Eigen::MatrixXd marginal_covariance(const ModelSpec& spec, const ParameterSet& params,
                                    const Subject& subject) {
  check_dimensions(spec, params);
  const auto phi_r = design_matrix(spec.random_basis(), subject.times).values;
  Eigen::MatrixXd w = phi_r * params.gamma_cov * phi_r.transpose();
  w.diagonal().array() += params.noise_var;
  return w;
}

double log_density(const ModelSpec& spec, const ParameterSet& params, const Subject& subject) {
  check_dimensions(spec, params);
  const auto phi_f = design_matrix(spec.fixed_basis(), subject.times).values;
  const Eigen::MatrixXd w = marginal_covariance(spec, params, subject);

  Eigen::LLT<Eigen::MatrixXd> llt(w);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::covariance_degenerate,
                "marginal covariance of subject '" + subject.id + "' is not positive definite");
  }
  const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
  const double ratio = diag.maxCoeff() / diag.minCoeff();
  if (!(ratio * ratio <= 1e12)) {
    throw Error(ErrorCode::covariance_degenerate,
                "marginal covariance of subject '" + subject.id + "' is near singular");
  }

  const Eigen::VectorXd a = as_vector(subject.values) - phi_f * params.beta;
  const Eigen::VectorXd z = llt.matrixL().solve(a);
  const double n_obs = static_cast<double>(subject.times.size());
  const double log_det = 2.0 * diag.array().log().sum();
  return -0.5 * n_obs * std::log(2.0 * std::numbers::pi) - 0.5 * log_det - 0.5 * z.squaredNorm();
}

double log_likelihood(const ModelSpec& spec, const ParameterSet& params,
                      const LongitudinalDataset& data) {
  double total = 0.0;
  for (const auto& s : data.subjects()) total += log_density(spec, params, s);
  return total;
}

ModelDesign::ModelDesign(const ModelSpec& spec, const LongitudinalDataset& data) : spec_(spec) {
  spec_.validate();
  const auto fixed = spec_.fixed_basis();
  const auto random = spec_.random_basis();

  std::map<std::vector<double>, int> by_times;
  group_index_.reserve(data.size());
  values_.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subject(i);
    auto [it, inserted] = by_times.try_emplace(s.times, static_cast<int>(groups_.size()));
    if (inserted) {
      Group g;
      g.phi_f = design_matrix(fixed, s.times).values;
      g.phi_r = design_matrix(random, s.times).values;
      g.ftf = g.phi_f.transpose() * g.phi_f;
      g.rtr = g.phi_r.transpose() * g.phi_r;
      groups_.push_back(std::move(g));
    }
    groups_[it->second].members.push_back(static_cast<int>(i));
    group_index_.push_back(it->second);
    values_.push_back(as_vector(s.values));
    total_obs_ += s.times.size();
  }
}

Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& gamma_cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(gamma_cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::covariance_degenerate, "random-effect covariance is not positive definite");
  }
  return llt.matrixL();
}

double log_likelihood(const ModelDesign& design, const ParameterSet& params) {
  check_dimensions(design.spec(), params);
  const Eigen::MatrixXd l = covariance_factor(params.gamma_cov);
  const double s2 = params.noise_var;
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const auto mr = design.spec().mr;

  double total = 0.0;
  for (const auto& g : design.groups()) {
    Eigen::MatrixXd k = l.transpose() * g.rtr * l / s2;
    k.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt_k(k);
    if (llt_k.info() != Eigen::Success) {
      throw Error(ErrorCode::covariance_degenerate, "marginal covariance is not positive definite");
    }
    const double n_obs = static_cast<double>(g.phi_f.rows());
    const double log_det_w =
        n_obs * std::log(s2) + 2.0 * llt_k.matrixLLT().diagonal().array().log().sum();
    const Eigen::MatrixXd rl = g.phi_r * l;  // N x m_r

    Eigen::VectorXd a(g.phi_f.rows());
    Eigen::VectorXd u(mr);
    for (int idx : g.members) {
      a.noalias() = design.values(idx) - g.phi_f * params.beta;
      u.noalias() = rl.transpose() * a;
      llt_k.matrixL().solveInPlace(u);
      const double quad = (a.squaredNorm() - u.squaredNorm() / s2) / s2;
      total += -0.5 * (n_obs * log_2pi + log_det_w + quad);
    }
  }
  return total;
}

}  // namespace splinemix
