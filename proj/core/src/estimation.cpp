#include "splinemix/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "splinemix/error.hpp"

namespace splinemix {

void EmOptions::validate() const {
  if (max_iter < 1) throw Error(ErrorCode::invalid_argument, "max_iter must be at least 1");
  if (!(rel_tol > 0.0)) throw Error(ErrorCode::invalid_argument, "rel_tol must be positive");
  if (!(gamma_floor >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "gamma_floor must be non-negative");
  }
  if (!(noise_floor >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "noise_floor must be non-negative");
  }
}

namespace {

Eigen::Map<const Eigen::VectorXd> as_vector(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

// Solves a symmetric positive definite normal system, refusing numerically
// singular matrices.
Eigen::VectorXd solve_normal(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                             const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  if (!(ev.minCoeff() > 1e-12 * ev.maxCoeff())) {
    throw Error(ErrorCode::rank_deficient, std::string(what) + " normal matrix is singular");
  }
  return a.llt().solve(b);
}

Eigen::VectorXd combine(const Eigen::MatrixXd& phi_f, const Eigen::MatrixXd& phi_r,
                        const Eigen::VectorXd& beta, const Eigen::VectorXd& gamma) {
  Eigen::VectorXd out = phi_f * beta;
  out.noalias() += phi_r * gamma;
  return out;
}

// Symmetrizes and floors the spectrum. Returns false when no positive
// definite matrix can be recovered.
bool repair_covariance(Eigen::MatrixXd& gamma, double floor) {
  if (!gamma.allFinite()) return false;
  gamma = 0.5 * (gamma + gamma.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gamma);
  if (eig.info() != Eigen::Success) return false;
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (ev.minCoeff() >= floor && ev.minCoeff() > 0.0) return true;
  if (!(floor > 0.0)) return false;
  const Eigen::VectorXd clamped = ev.cwiseMax(floor);
  gamma = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
  gamma = 0.5 * (gamma + gamma.transpose()).eval();
  return true;
}

// Per-group quantities at a fixed (Gamma, sigma^2).
struct GroupState {
  Eigen::LLT<Eigen::MatrixXd> k_llt;  // I + L^T R^T R L / sigma^2
  Eigen::MatrixXd post_cov;           // L K^{-1} L^T
  double log_det_w = 0.0;
};

GroupState group_state(const ModelDesign::Group& g, const Eigen::MatrixXd& l, double s2) {
  GroupState st;
  Eigen::MatrixXd k = l.transpose() * g.rtr * l / s2;
  k.diagonal().array() += 1.0;
  st.k_llt.compute(k);
  if (st.k_llt.info() != Eigen::Success) {
    throw Error(ErrorCode::em_degenerate, "posterior precision lost positive definiteness");
  }
  const Eigen::MatrixXd half = st.k_llt.matrixL().solve(l.transpose());  // L_K^{-1} L^T
  st.post_cov = half.transpose() * half;
  st.log_det_w = static_cast<double>(g.phi_f.rows()) * std::log(s2) +
                 2.0 * st.k_llt.matrixLLT().diagonal().array().log().sum();
  return st;
}

}  // namespace

Eigen::VectorXd gls_beta(const ModelSpec& spec, const Eigen::MatrixXd& gamma_cov,
                         double noise_var, const LongitudinalDataset& data) {
  spec.validate();
  ParameterSet params{Eigen::VectorXd::Zero(spec.mf), gamma_cov, noise_var};
  params.validate();
  const auto fixed = spec.fixed_basis();

  Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(spec.mf, spec.mf);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(spec.mf);
  for (const auto& s : data.subjects()) {
    const auto phi_f = design_matrix(fixed, s.times).values;
    Eigen::LLT<Eigen::MatrixXd> llt(marginal_covariance(spec, params, s));
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::covariance_degenerate, "marginal covariance is not positive definite");
    }
    const Eigen::MatrixXd winv_f = llt.solve(phi_f);
    normal.noalias() += phi_f.transpose() * winv_f;
    rhs.noalias() += winv_f.transpose() * as_vector(s.values);
  }
  normal = 0.5 * (normal + normal.transpose()).eval();
  return solve_normal(normal, rhs, "GLS");
}

Eigen::VectorXd blup_gamma_marginal(const ModelSpec& spec, const ParameterSet& params,
                                    const Eigen::VectorXd& beta_hat, const Subject& subject) {
  const auto phi_f = design_matrix(spec.fixed_basis(), subject.times).values;
  const auto phi_r = design_matrix(spec.random_basis(), subject.times).values;
  Eigen::LLT<Eigen::MatrixXd> llt(marginal_covariance(spec, params, subject));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::covariance_degenerate, "marginal covariance is not positive definite");
  }
  const Eigen::VectorXd a = as_vector(subject.values) - phi_f * beta_hat;
  return params.gamma_cov * (phi_r.transpose() * llt.solve(a));
}

Eigen::VectorXd blup_gamma_conditional(const ModelSpec& spec, const ParameterSet& params,
                                       const Eigen::VectorXd& beta_hat, const Subject& subject) {
  const auto phi_f = design_matrix(spec.fixed_basis(), subject.times).values;
  const auto phi_r = design_matrix(spec.random_basis(), subject.times).values;
  Eigen::LLT<Eigen::MatrixXd> gamma_llt(params.gamma_cov);
  if (gamma_llt.info() != Eigen::Success) {
    throw Error(ErrorCode::covariance_degenerate, "random-effect covariance is not positive definite");
  }
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(spec.mr, spec.mr);
  Eigen::MatrixXd m = params.noise_var * gamma_llt.solve(identity);
  m.noalias() += phi_r.transpose() * phi_r;
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> m_llt(m);
  if (m_llt.info() != Eigen::Success) {
    throw Error(ErrorCode::covariance_degenerate, "posterior precision is not positive definite");
  }
  const Eigen::VectorXd a = as_vector(subject.values) - phi_f * beta_hat;
  return m_llt.solve(phi_r.transpose() * a);
}

Eigen::VectorXd predict_subject(const FittedModel& fit, const LongitudinalDataset& data,
                                std::size_t subject_index) {
  if (subject_index >= data.size() || subject_index >= fit.subject_effects.size()) {
    throw Error(ErrorCode::invalid_index, "subject index out of range");
  }
  const auto& times = data.subject(subject_index).times;
  const auto phi_f = design_matrix(fit.spec.fixed_basis(), times).values;
  const auto phi_r = design_matrix(fit.spec.random_basis(), times).values;
  return combine(phi_f, phi_r, fit.params.beta, fit.subject_effects[subject_index]);
}

Eigen::VectorXd mean_curve(const FittedModel& fit, const LongitudinalDataset& data,
                           std::size_t subject_index) {
  if (subject_index >= data.size()) {
    throw Error(ErrorCode::invalid_index, "subject index out of range");
  }
  const auto phi_f =
      design_matrix(fit.spec.fixed_basis(), data.subject(subject_index).times).values;
  return phi_f * fit.params.beta;
}

PooledFit pooled_ols(const ModelSpec& spec, const LongitudinalDataset& data) {
  spec.validate();
  const auto fixed = spec.fixed_basis();
  const auto total = static_cast<Eigen::Index>(data.total_observations());
  Eigen::MatrixXd x(total, spec.mf);
  Eigen::VectorXd y(total);
  Eigen::Index row = 0;
  for (const auto& s : data.subjects()) {
    const auto n = static_cast<Eigen::Index>(s.times.size());
    x.middleRows(row, n) = design_matrix(fixed, s.times).values;
    y.segment(row, n) = as_vector(s.values);
    row += n;
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
  cod.setThreshold(1e-12);
  PooledFit out;
  out.beta = cod.solve(y);
  out.rank = static_cast<int>(cod.rank());
  out.rss = (y - x * out.beta).squaredNorm();
  return out;
}

ParameterSet default_init(const ModelSpec& spec, const LongitudinalDataset& data) {
  const PooledFit ols = pooled_ols(spec, data);
  if (ols.rank < spec.mf) {
    throw Error(ErrorCode::rank_deficient, "pooled design has rank " + std::to_string(ols.rank) +
                                               " below m_f = " + std::to_string(spec.mf));
  }
  const double s2 = ols.rss / static_cast<double>(data.total_observations());
  constexpr double floor = 1e-8;
  ParameterSet init;
  init.beta = ols.beta;
  init.gamma_cov = std::max(s2, floor) * Eigen::MatrixXd::Identity(spec.mr, spec.mr);
  init.noise_var = std::max(0.5 * s2, floor);
  return init;
}

FittedModel em_fit(const ModelSpec& spec, const LongitudinalDataset& data,
                   const ParameterSet& init, const EmOptions& opts) {
  opts.validate();
  init.validate();
  const ModelDesign design(spec, data);
  if (init.beta.size() != spec.mf || init.gamma_cov.rows() != spec.mr) {
    throw Error(ErrorCode::invalid_argument, "initial parameters do not match the model spec");
  }

  const auto n = static_cast<double>(design.num_subjects());
  const auto total_obs = static_cast<double>(design.total_observations());
  const auto groups = design.groups();
  const int mf = spec.mf;
  const int mr = spec.mr;

  // The beta update's normal matrix does not change across iterations.
  Eigen::MatrixXd ftf_total = Eigen::MatrixXd::Zero(mf, mf);
  for (const auto& g : groups) ftf_total += static_cast<double>(g.members.size()) * g.ftf;
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ftf_total, Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    if (!(ev.minCoeff() > 1e-12 * ev.maxCoeff())) {
      throw Error(ErrorCode::rank_deficient, "fixed-effect design is rank deficient");
    }
  }
  const Eigen::LLT<Eigen::MatrixXd> ftf_llt(ftf_total);

  FittedModel fit;
  fit.spec = spec;
  fit.params = init;

  std::vector<Eigen::VectorXd> gamma(design.num_subjects(), Eigen::VectorXd::Zero(mr));
  std::vector<Eigen::VectorXd> resid(design.num_subjects());
  std::vector<GroupState> states(groups.size());

  // E-step at fit.params; also returns the log-likelihood at those params.
  const auto e_step = [&]() {
    const ParameterSet& p = fit.params;
    const Eigen::MatrixXd l = covariance_factor(p.gamma_cov);
    const double s2 = p.noise_var;
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    double loglik = 0.0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& g = groups[gi];
      states[gi] = group_state(g, l, s2);
      const auto& st = states[gi];
      const double n_obs = static_cast<double>(g.phi_f.rows());
      const Eigen::MatrixXd rl = g.phi_r * l;
      for (int idx : g.members) {
        Eigen::VectorXd& a = resid[idx];
        a = design.values(idx) - g.phi_f * p.beta;
        const Eigen::VectorXd s = g.phi_r.transpose() * a;
        gamma[idx].noalias() = st.post_cov * s / s2;
        Eigen::VectorXd u = rl.transpose() * a;
        st.k_llt.matrixL().solveInPlace(u);
        const double quad = (a.squaredNorm() - u.squaredNorm() / s2) / s2;
        loglik += -0.5 * (n_obs * log_2pi + st.log_det_w + quad);
      }
    }
    return loglik;
  };

  double current = e_step();
  if (!std::isfinite(current)) {
    throw Error(ErrorCode::em_diverged, "log-likelihood at the initial value is not finite");
  }
  fit.em_trace.push_back(current);

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    ParameterSet next = fit.params;
    const double s2 = fit.params.noise_var;

    // Step 2: sigma^2 from residuals at beta_j, gamma_(j), posterior cov at theta_j.
    double s2_next = s2;
    if (opts.update_variances) {
      double acc = 0.0;
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        const double trace_term = (states[gi].post_cov.cwiseProduct(g.rtr)).sum();
        for (int idx : g.members) {
          acc += (resid[idx] - g.phi_r * gamma[idx]).squaredNorm() + trace_term;
        }
      }
      s2_next = std::max(acc / total_obs, opts.noise_floor);
      next.noise_var = s2_next;
    }

    // Step 3: Gamma.
    if (opts.update_variances) {
      Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(mr, mr);
      const Eigen::MatrixXd l = covariance_factor(fit.params.gamma_cov);
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        for (int idx : g.members) acc.noalias() += gamma[idx] * gamma[idx].transpose();
        const Eigen::MatrixXd& post =
            opts.gamma_step_uses_updated_noise ? group_state(g, l, s2_next).post_cov
                                               : states[gi].post_cov;
        acc += static_cast<double>(g.members.size()) * post;
      }
      next.gamma_cov = acc / n;
      if (!repair_covariance(next.gamma_cov, opts.gamma_floor)) {
        throw Error(ErrorCode::em_degenerate, "Gamma update is not positive definite");
      }
    }

    // Step 4: beta from de-random-effected observations, pooled over subjects.
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(mf);
    for (const auto& g : groups) {
      for (int idx : g.members) {
        rhs.noalias() += g.phi_f.transpose() * (design.values(idx) - g.phi_r * gamma[idx]);
      }
    }
    next.beta = ftf_llt.solve(rhs);

    if (!next.beta.allFinite() || !std::isfinite(next.noise_var)) {
      throw Error(ErrorCode::em_diverged, "EM update produced non-finite parameters");
    }

    fit.params = std::move(next);
    double updated = 0.0;
    try {
      updated = e_step();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::covariance_degenerate) {
        throw Error(ErrorCode::em_degenerate, e.what());
      }
      throw;
    }
    if (!std::isfinite(updated)) {
      throw Error(ErrorCode::em_diverged, "log-likelihood became non-finite");
    }
    fit.em_trace.push_back(updated);
    fit.iterations = iter + 1;

    const double change = std::abs(updated - current) / (1.0 + std::abs(updated));
    current = updated;
    if (change < opts.rel_tol) {
      fit.converged = true;
      break;
    }
  }

  // gamma now holds the predictors at the final parameters.
  fit.subject_effects = gamma;
  fit.fitted_values.resize(design.num_subjects());
  for (std::size_t i = 0; i < design.num_subjects(); ++i) {
    fit.fitted_values[i] = predict_subject(fit, data, i);
  }
  try {
    fit.loglik = log_likelihood(spec, fit.params, data);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::covariance_degenerate) throw;
    fit.loglik = current;  // W too ill-conditioned for the dense route
  }
  return fit;
}

}  // namespace splinemix
