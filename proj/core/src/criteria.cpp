#include "splinemix/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <tuple>

#include "splinemix/error.hpp"
#include "splinemix/parallel.hpp"

namespace splinemix {

// --- vech -------------------------------------------------------------------

VechIndex::VechIndex(int m) : m_(m) {
  if (m < 1) throw Error(ErrorCode::invalid_argument, "vech dimension must be positive");
  pairs_.reserve(static_cast<std::size_t>(m * (m + 1) / 2));
  for (int k = 0; k < m; ++k) {
    for (int h = 0; h <= k; ++h) pairs_.emplace_back(h, k);
  }
}

std::size_t VechIndex::index(int h, int k) const {
  if (h > k) std::swap(h, k);
  if (h < 0 || k >= m_) throw Error(ErrorCode::invalid_index, "vech index out of range");
  return static_cast<std::size_t>(k * (k + 1) / 2 + h);
}

Eigen::VectorXd VechIndex::pack(const Eigen::MatrixXd& sym) const {
  if (sym.rows() != m_ || sym.cols() != m_) {
    throw Error(ErrorCode::invalid_argument, "vech pack: dimension mismatch");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) v(i) = sym(pairs_[i].first, pairs_[i].second);
  return v;
}

Eigen::MatrixXd VechIndex::unpack(const Eigen::VectorXd& v) const {
  if (v.size() != static_cast<Eigen::Index>(size())) {
    throw Error(ErrorCode::invalid_argument, "vech unpack: length mismatch");
  }
  Eigen::MatrixXd out(m_, m_);
  for (std::size_t i = 0; i < size(); ++i) {
    const auto [h, k] = pairs_[i];
    out(h, k) = v(i);
    out(k, h) = v(i);
  }
  return out;
}

Eigen::MatrixXd VechIndex::direction(std::size_t idx) const {
  const auto [h, k] = pair(idx);
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(m_, m_);
  e(h, k) = 1.0;
  e(k, h) = 1.0;
  return e;
}

Eigen::VectorXd pack_theta(const ParameterSet& params) {
  const auto mf = params.beta.size();
  const VechIndex vech(static_cast<int>(params.gamma_cov.rows()));
  Eigen::VectorXd theta(mf + static_cast<Eigen::Index>(vech.size()) + 1);
  theta.head(mf) = params.beta;
  theta.segment(mf, static_cast<Eigen::Index>(vech.size())) = vech.pack(params.gamma_cov);
  theta(theta.size() - 1) = params.noise_var;
  return theta;
}

ParameterSet unpack_theta(const Eigen::VectorXd& theta, int mf, int mr) {
  const VechIndex vech(mr);
  if (theta.size() != num_params(mf, mr)) {
    throw Error(ErrorCode::invalid_argument, "theta length does not match (m_f, m_r)");
  }
  ParameterSet p;
  p.beta = theta.head(mf);
  p.gamma_cov = vech.unpack(theta.segment(mf, static_cast<Eigen::Index>(vech.size())));
  p.noise_var = theta(theta.size() - 1);
  return p;
}

// --- criteria values ----------------------------------------------------------

int num_params(int mf, int mr) {
  if (mf < 1 || mr < 1) throw Error(ErrorCode::invalid_argument, "m_f and m_r must be positive");
  return mf + mr * (mr + 1) / 2 + 1;
}

double aic_value(double loglik, int p) { return -2.0 * loglik + 2.0 * p; }

double bic_value(double loglik, int p, std::size_t n) {
  return -2.0 * loglik + p * std::log(static_cast<double>(n));
}

double bic_i_value(double loglik, int p, std::size_t n, double log_det_info) {
  return -2.0 * loglik +
         p * (std::log(static_cast<double>(n)) - std::log(2.0 * std::numbers::pi)) +
         log_det_info;
}

double aic(const FittedModel& fit, const LongitudinalDataset&) {
  return aic_value(fit.loglik, num_params(fit.spec.mf, fit.spec.mr));
}

double bic(const FittedModel& fit, const LongitudinalDataset& data) {
  return bic_value(fit.loglik, num_params(fit.spec.mf, fit.spec.mr), data.size());
}

double bic_i(const FittedModel& fit, const LongitudinalDataset& data) {
  const double log_det = log_det_information(information_matrix(fit, data));
  return bic_i_value(fit.loglik, num_params(fit.spec.mf, fit.spec.mr), data.size(), log_det);
}

// --- analytic information matrix ---------------------------------------------

Eigen::MatrixXd information_matrix(const ModelSpec& spec, const ParameterSet& params,
                                   const LongitudinalDataset& data) {
  params.validate();
  const ModelDesign design(spec, data);
  const int mf = spec.mf;
  const int mr = spec.mr;
  const VechIndex vech(mr);
  const auto q = static_cast<Eigen::Index>(vech.size());
  const Eigen::Index p = mf + q + 1;
  const Eigen::Index off_g = mf;
  const Eigen::Index off_s = mf + q;

  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(p, p);

  for (const auto& g : design.groups()) {
    const auto n_obs = g.phi_f.rows();
    const double members = static_cast<double>(g.members.size());

    Eigen::MatrixXd w = g.phi_r * params.gamma_cov * g.phi_r.transpose();
    w.diagonal().array() += params.noise_var;
    Eigen::LLT<Eigen::MatrixXd> llt(w);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::information_degenerate, "marginal covariance is not positive definite");
    }
    const Eigen::MatrixXd winv = llt.solve(Eigen::MatrixXd::Identity(n_obs, n_obs));
    const Eigen::MatrixXd pf = llt.solve(g.phi_f);  // W^{-1} Phi_f
    const Eigen::MatrixXd pr = llt.solve(g.phi_r);  // W^{-1} Phi_r
    const Eigen::MatrixXd b = g.phi_r.transpose() * pr;
    const Eigen::MatrixXd f = g.phi_f.transpose() * pr;
    const Eigen::MatrixXd b2 = pr.transpose() * pr;
    const double tr_w2 = winv.squaredNorm();

    // Data enter the Gamma and sigma^2 rows only through these sums.
    Eigen::MatrixXd s_cc = Eigen::MatrixXd::Zero(mr, mr);  // sum c c^T
    Eigen::MatrixXd t_cd = Eigen::MatrixXd::Zero(mr, mr);  // sum c d^T
    Eigen::VectorXd c_sum = Eigen::VectorXd::Zero(mr);
    Eigen::VectorXd e_sum = Eigen::VectorXd::Zero(mf);      // sum Phi_f^T W^{-2} a
    double cubic_sum = 0.0;                                  // sum a^T W^{-3} a
    for (int idx : g.members) {
      const Eigen::VectorXd a = design.values(idx) - g.phi_f * params.beta;
      const Eigen::VectorXd wa = llt.solve(a);
      const Eigen::VectorXd c = g.phi_r.transpose() * wa;
      const Eigen::VectorXd d = pr.transpose() * wa;
      s_cc.noalias() += c * c.transpose();
      t_cd.noalias() += c * d.transpose();
      c_sum += c;
      e_sum.noalias() += pf.transpose() * wa;
      cubic_sum += wa.dot(winv * wa);
    }

    hess.topLeftCorner(mf, mf).noalias() -= members * (g.phi_f.transpose() * pf);
    hess.block(0, off_s, mf, 1) -= e_sum;

    // E_i = sum over terms e_a e_b^T: one term on the diagonal, two off it.
    const auto terms = [&](std::size_t i) {
      const auto [h, k] = vech.pair(i);
      std::array<std::pair<int, int>, 2> t{{{h, k}, {k, h}}};
      return std::make_pair(t, h == k ? 1 : 2);
    };

    for (std::size_t i = 0; i < vech.size(); ++i) {
      const auto [ti, ni] = terms(i);
      const auto row = off_g + static_cast<Eigen::Index>(i);

      Eigen::VectorXd beta_g = Eigen::VectorXd::Zero(mf);
      double gs = 0.0;
      for (int u = 0; u < ni; ++u) {
        const auto [ai, bi] = ti[u];
        beta_g += f.col(ai) * c_sum(bi);
        gs += 0.5 * members * b2(bi, ai) - t_cd(ai, bi);
      }
      hess.block(0, row, mf, 1) -= beta_g;
      hess(row, off_s) += gs;

      for (std::size_t j = 0; j <= i; ++j) {
        const auto [tj, nj] = terms(j);
        double v = 0.0;
        for (int u = 0; u < ni; ++u) {
          const auto [a1, b1] = ti[u];
          for (int w2 = 0; w2 < nj; ++w2) {
            const auto [c1, d1] = tj[w2];
            // tr(e_a e_b^T B e_c e_d^T B) = B_bc B_da;  c^T e_a e_b^T B e_c e_d^T c = c_a B_bc c_d
            v += 0.5 * members * b(b1, c1) * b(d1, a1) - b(b1, c1) * s_cc(a1, d1);
          }
        }
        hess(row, off_g + static_cast<Eigen::Index>(j)) += v;
      }
    }
    hess(off_s, off_s) += 0.5 * members * tr_w2 - cubic_sum;
  }

  // Mirror the lower-filled Gamma block and the upper-filled cross blocks.
  Eigen::MatrixXd full = hess.triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) full(off_g + j, off_g + i) = hess(off_g + i, off_g + j);
    full(off_g + i, off_g + i) = hess(off_g + i, off_g + i);
  }
  const Eigen::MatrixXd mirrored = full.transpose();
  full.triangularView<Eigen::StrictlyLower>() = mirrored;

  Eigen::MatrixXd info = -full / static_cast<double>(design.num_subjects());
  info = 0.5 * (info + info.transpose()).eval();
  if (!info.allFinite()) {
    throw Error(ErrorCode::information_degenerate, "information matrix is not finite");
  }
  return info;
}

Eigen::MatrixXd information_matrix(const FittedModel& fit, const LongitudinalDataset& data) {
  return information_matrix(fit.spec, fit.params, data);
}

double log_det_information(const Eigen::MatrixXd& info) {
  if (!info.allFinite()) {
    throw Error(ErrorCode::information_degenerate, "information matrix is not finite");
  }
  const Eigen::MatrixXd sym = 0.5 * (info + info.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::information_degenerate, "information matrix is not positive definite");
  }
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  if (!std::isfinite(log_det)) {
    throw Error(ErrorCode::information_degenerate, "log-determinant is not finite");
  }
  return log_det;
}

// --- finite-difference oracle -------------------------------------------------

namespace {

using MatrixXld = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using VectorXld = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

struct DenseSubject {
  MatrixXld phi_f;
  MatrixXld phi_r;
  VectorXld x;
};

std::vector<DenseSubject> dense_subjects(const ModelSpec& spec, const LongitudinalDataset& data) {
  const auto fixed = spec.fixed_basis();
  const auto random = spec.random_basis();
  std::vector<DenseSubject> out;
  out.reserve(data.size());
  for (const auto& s : data.subjects()) {
    DenseSubject d;
    d.phi_f = design_matrix(fixed, s.times).values.cast<long double>();
    d.phi_r = design_matrix(random, s.times).values.cast<long double>();
    d.x.resize(static_cast<Eigen::Index>(s.values.size()));
    for (std::size_t i = 0; i < s.values.size(); ++i) d.x(i) = s.values[i];
    out.push_back(std::move(d));
  }
  return out;
}

struct ThetaLd {
  VectorXld beta;
  MatrixXld gamma;
  long double s2;
};

ThetaLd unpack_ld(const VectorXld& theta, int mf, const VechIndex& vech) {
  ThetaLd t;
  t.beta = theta.head(mf);
  t.gamma.resize(vech.dim(), vech.dim());
  for (std::size_t i = 0; i < vech.size(); ++i) {
    const auto [h, k] = vech.pair(i);
    t.gamma(h, k) = theta(mf + static_cast<Eigen::Index>(i));
    t.gamma(k, h) = theta(mf + static_cast<Eigen::Index>(i));
  }
  t.s2 = theta(theta.size() - 1);
  return t;
}

bool feasible(const ThetaLd& t) {
  if (!(t.s2 > 0)) return false;
  Eigen::LLT<MatrixXld> llt(t.gamma);
  return llt.info() == Eigen::Success;
}

long double dense_loglik(const std::vector<DenseSubject>& subjects, const ThetaLd& t) {
  const long double log_2pi = std::log(2.0L * std::numbers::pi_v<long double>);
  long double total = 0;
  for (const auto& s : subjects) {
    MatrixXld w = s.phi_r * t.gamma * s.phi_r.transpose();
    w.diagonal().array() += t.s2;
    Eigen::LLT<MatrixXld> llt(w);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::covariance_degenerate, "fd oracle: W not positive definite");
    }
    const VectorXld a = s.x - s.phi_f * t.beta;
    const VectorXld z = llt.matrixL().solve(a);
    long double log_det = 0;
    for (Eigen::Index i = 0; i < w.rows(); ++i) log_det += 2 * std::log(llt.matrixLLT()(i, i));
    total += -0.5L * (static_cast<long double>(w.rows()) * log_2pi + log_det + z.squaredNorm());
  }
  return total;
}

class FdOracle {
 public:
  FdOracle(const ModelSpec& spec, const LongitudinalDataset& data, const ParameterSet& params,
           double step)
      : mf_(spec.mf), vech_(spec.mr), subjects_(dense_subjects(spec, data)) {
    params.validate();
    if (!(step > 0.0)) throw Error(ErrorCode::invalid_argument, "fd step must be positive");
    theta_ = pack_theta(params).cast<long double>();
    h_.resize(theta_.size());
    for (Eigen::Index i = 0; i < theta_.size(); ++i) {
      long double h = static_cast<long double>(step) * std::max(1.0L, std::abs(theta_(i)));
      // Both +-2h must stay feasible (diagonal second differences, gradients).
      while (!(feasible_at(i, 2 * h) && feasible_at(i, -2 * h))) {
        h /= 2;
        if (h < 1e-14L) throw Error(ErrorCode::invalid_argument, "fd step infeasible at theta");
      }
      h_(i) = h;
    }
  }

  [[nodiscard]] Eigen::Index size() const { return theta_.size(); }
  [[nodiscard]] long double h(Eigen::Index i) const { return h_(i); }

  long double eval(std::initializer_list<std::pair<Eigen::Index, long double>> shifts) const {
    VectorXld t = theta_;
    for (const auto& [i, d] : shifts) t(i) += d;
    const ThetaLd th = unpack_ld(t, mf_, vech_);
    if (!feasible(th)) throw Error(ErrorCode::invalid_argument, "fd oracle left feasible region");
    return dense_loglik(subjects_, th);
  }

 private:
  bool feasible_at(Eigen::Index i, long double d) const {
    VectorXld t = theta_;
    t(i) += d;
    return feasible(unpack_ld(t, mf_, vech_));
  }

  int mf_;
  VechIndex vech_;
  std::vector<DenseSubject> subjects_;
  VectorXld theta_;
  VectorXld h_;
};

}  // namespace

Eigen::MatrixXd fd_hessian(const ModelSpec& spec, const LongitudinalDataset& data,
                           const ParameterSet& params, double step) {
  const FdOracle oracle(spec, data, params, step);
  const auto p = oracle.size();
  const long double f0 = oracle.eval({});
  // Central second differences at h, h/2, h/4, combined by two Richardson steps.
  const auto second = [&](Eigen::Index i, Eigen::Index j, long double scale) {
    const long double hi = oracle.h(i) * scale;
    if (i == j) {
      return (oracle.eval({{i, hi}}) - 2 * f0 + oracle.eval({{i, -hi}})) / (hi * hi);
    }
    const long double hj = oracle.h(j) * scale;
    const long double fpp = oracle.eval({{i, hi}, {j, hj}});
    const long double fpm = oracle.eval({{i, hi}, {j, -hj}});
    const long double fmp = oracle.eval({{i, -hi}, {j, hj}});
    const long double fmm = oracle.eval({{i, -hi}, {j, -hj}});
    return (fpp - fpm - fmp + fmm) / (4 * hi * hj);
  };
  Eigen::MatrixXd hess(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const long double d1 = second(i, j, 1.0L);
      const long double d2 = second(i, j, 0.5L);
      const long double d4 = second(i, j, 0.25L);
      const long double r1 = (4 * d2 - d1) / 3;
      const long double r2 = (4 * d4 - d2) / 3;
      const auto v = static_cast<double>((16 * r2 - r1) / 15);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return hess;
}

Eigen::VectorXd fd_gradient(const ModelSpec& spec, const LongitudinalDataset& data,
                            const ParameterSet& params, double step) {
  const FdOracle oracle(spec, data, params, step);
  Eigen::VectorXd grad(oracle.size());
  for (Eigen::Index i = 0; i < oracle.size(); ++i) {
    const long double hi = oracle.h(i);
    grad(i) = static_cast<double>((oracle.eval({{i, hi}}) - oracle.eval({{i, -hi}})) / (2 * hi));
  }
  return grad;
}

// --- selection ----------------------------------------------------------------

std::string_view to_string(Criterion c) noexcept {
  switch (c) {
    case Criterion::aic: return "AIC";
    case Criterion::bic: return "BIC";
    case Criterion::bic_i: return "BIC_I";
  }
  return "?";
}

std::string_view to_string(CandidateStatus s) noexcept {
  switch (s) {
    case CandidateStatus::ok: return "ok";
    case CandidateStatus::em_failed: return "em-failed";
    case CandidateStatus::info_failed: return "info-failed";
  }
  return "?";
}

bool CandidateRecord::eligible(Criterion c) const noexcept {
  if (status == CandidateStatus::em_failed) return false;
  if (c == Criterion::bic_i) return status == CandidateStatus::ok;
  return true;
}

double CandidateRecord::value(Criterion c) const noexcept {
  switch (c) {
    case Criterion::aic: return aic;
    case Criterion::bic: return bic;
    case Criterion::bic_i: return bic_i;
  }
  return 0.0;
}

std::optional<std::pair<int, int>> CriteriaReport::chosen_model(Criterion c) const {
  const auto& idx = chosen[static_cast<std::size_t>(c)];
  if (!idx) return std::nullopt;
  return std::make_pair(candidates[*idx].mf, candidates[*idx].mr);
}

CandidateRecord evaluate_candidate(const LongitudinalDataset& data, const ModelSpec& spec,
                                   const EmOptions& em, std::optional<FittedModel>* fit_out) {
  CandidateRecord rec;
  rec.mf = spec.mf;
  rec.mr = spec.mr;
  rec.p = num_params(spec.mf, spec.mr);
  FittedModel fit;
  try {
    fit = em_fit(spec, data, default_init(spec, data), em);
  } catch (const Error& e) {
    rec.status = CandidateStatus::em_failed;
    rec.detail = std::string(to_string(e.code()));
    return rec;
  }
  rec.loglik = fit.loglik;
  rec.converged = fit.converged;
  rec.iterations = fit.iterations;
  rec.aic = aic_value(rec.loglik, rec.p);
  rec.bic = bic_value(rec.loglik, rec.p, data.size());
  try {
    rec.log_det_info = log_det_information(information_matrix(fit, data));
    rec.bic_i = bic_i_value(rec.loglik, rec.p, data.size(), rec.log_det_info);
  } catch (const Error& e) {
    rec.status = CandidateStatus::info_failed;
    rec.detail = std::string(to_string(e.code()));
  }
  if (fit_out) *fit_out = std::move(fit);
  return rec;
}

void choose_models(CriteriaReport& report) {
  for (const auto c : kAllCriteria) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < report.candidates.size(); ++i) {
      const auto& r = report.candidates[i];
      if (!r.eligible(c) || !std::isfinite(r.value(c))) continue;
      if (!best) {
        best = i;
        continue;
      }
      const auto& b = report.candidates[*best];
      if (std::make_tuple(r.value(c), r.mf, r.mr, i) < std::make_tuple(b.value(c), b.mf, b.mr, *best)) {
        best = i;
      }
    }
    report.chosen[static_cast<std::size_t>(c)] = best;
  }
}

CriteriaReport select_model(const LongitudinalDataset& data, std::span<const int> mf_values,
                            std::span<const int> mr_values, const SelectOptions& opts) {
  if (mf_values.empty() || mr_values.empty()) {
    throw Error(ErrorCode::invalid_argument, "candidate grid is empty");
  }
  std::vector<int> mfs(mf_values.begin(), mf_values.end());
  std::vector<int> mrs(mr_values.begin(), mr_values.end());
  std::sort(mfs.begin(), mfs.end());
  std::sort(mrs.begin(), mrs.end());
  mfs.erase(std::unique(mfs.begin(), mfs.end()), mfs.end());
  mrs.erase(std::unique(mrs.begin(), mrs.end()), mrs.end());
  if (mfs.front() < ModelSpec::degree + 1 || mrs.front() < ModelSpec::degree + 1) {
    throw Error(ErrorCode::invalid_argument, "every candidate needs at least 4 basis functions");
  }
  opts.em.validate();

  const auto [lo, hi] = opts.domain ? *opts.domain : data.time_range();

  CriteriaReport report;
  report.num_subjects = data.size();
  report.small_n = data.size() < 2;
  const std::size_t count = mfs.size() * mrs.size();
  report.candidates.resize(count);
  report.fits.resize(opts.keep_fits ? count : 0);

  parallel_for(
      count,
      [&](std::size_t i) {
        ModelSpec spec{mfs[i / mrs.size()], mrs[i % mrs.size()], lo, hi};
        try {
          spec.validate();
        } catch (const Error& e) {
          report.candidates[i].mf = spec.mf;
          report.candidates[i].mr = spec.mr;
          report.candidates[i].p = num_params(spec.mf, spec.mr);
          report.candidates[i].status = CandidateStatus::em_failed;
          report.candidates[i].detail = std::string(to_string(e.code()));
          return;
        }
        report.candidates[i] =
            evaluate_candidate(data, spec, opts.em, opts.keep_fits ? &report.fits[i] : nullptr);
      },
      opts.threads);

  choose_models(report);
  const bool any = std::any_of(report.candidates.begin(), report.candidates.end(),
                               [](const auto& r) { return r.status != CandidateStatus::em_failed; });
  if (!any) throw Error(ErrorCode::selection_failed, "every candidate model failed to fit");
  return report;
}

}  // namespace splinemix
