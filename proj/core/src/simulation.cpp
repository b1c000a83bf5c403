#include "splinemix/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "splinemix/error.hpp"
#include "splinemix/parallel.hpp"

namespace splinemix {

std::uint64_t Rng::splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b)
    : engine_(splitmix64(splitmix64(splitmix64(seed) ^ stream_a) ^ stream_b)) {}

double Rng::uniform() {
  for (;;) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    if (u > 0.0) return u;
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  has_spare_ = true;
  return u * factor;
}

std::string_view to_string(NoiseReading r) noexcept {
  return r == NoiseReading::variance ? "variance" : "sd";
}

SimulationDesign SimulationDesign::reference(int n) {
  SimulationDesign d;
  d.n = n;
  d.beta_true = Eigen::VectorXd(5);
  d.beta_true << -8.0, -2.0, 6.0, 5.0, 7.0;
  d.gamma_cov_true.resize(8, 8);
  for (int j = 0; j < 8; ++j) {
    for (int k = 0; k < 8; ++k) d.gamma_cov_true(j, k) = std::pow(0.5, std::abs(j - k));
  }
  for (int m = 4; m <= 10; ++m) {
    d.mf_grid.push_back(m);
    d.mr_grid.push_back(m);
  }
  return d;
}

void SimulationDesign::validate() const {
  if (n < 1) throw Error(ErrorCode::invalid_argument, "design needs at least one subject");
  if (points_per_subject < 2) {
    throw Error(ErrorCode::invalid_argument, "design needs at least two points per subject");
  }
  if (replications < 1) throw Error(ErrorCode::invalid_argument, "replications must be positive");
  if (beta_true.size() != mf_true) {
    throw Error(ErrorCode::invalid_argument, "beta_true length must equal mf_true");
  }
  if (gamma_cov_true.rows() != mr_true || gamma_cov_true.cols() != mr_true) {
    throw Error(ErrorCode::invalid_argument, "gamma_cov_true must be mr_true x mr_true");
  }
  if (!(noise_scale >= 0.0)) throw Error(ErrorCode::invalid_argument, "noise_scale must be >= 0");
  if (mf_grid.empty() || mr_grid.empty()) {
    throw Error(ErrorCode::invalid_argument, "candidate grid is empty");
  }
  ModelSpec{mf_true, mr_true, domain_min, domain_max}.validate();
  ParameterSet{beta_true, gamma_cov_true, 1.0}.validate();
}

std::vector<double> observation_grid(double lo, double hi, int points) {
  std::vector<double> t(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    t[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  t.front() = lo;
  t.back() = hi;
  return t;
}

GeneratedDataset generate_dataset(const SimulationDesign& design, int replication_index) {
  design.validate();
  const ModelSpec truth_spec{design.mf_true, design.mr_true, design.domain_min, design.domain_max};
  const auto times = observation_grid(design.domain_min, design.domain_max,
                                      design.points_per_subject);
  const Eigen::MatrixXd phi_f = design_matrix(truth_spec.fixed_basis(), times).values;
  const Eigen::MatrixXd phi_r = design_matrix(truth_spec.random_basis(), times).values;
  const Eigen::VectorXd mean = phi_f * design.beta_true;
  const Eigen::MatrixXd chol = design.gamma_cov_true.llt().matrixL();

  std::vector<Subject> subjects;
  subjects.reserve(static_cast<std::size_t>(design.n));
  GeneratedDataset out;
  for (int a = 0; a < design.n; ++a) {
    Rng rng(design.seed, static_cast<std::uint64_t>(replication_index),
            static_cast<std::uint64_t>(a));
    Eigen::VectorXd z(design.mr_true);
    for (int k = 0; k < design.mr_true; ++k) z(k) = rng.normal();
    const Eigen::VectorXd gamma = chol * z;
    const Eigen::VectorXd u = mean + phi_r * gamma;

    const double range = u.maxCoeff() - u.minCoeff();
    const double sd = design.noise_reading == NoiseReading::variance
                          ? std::sqrt(design.noise_scale) * range
                          : design.noise_scale * range;
    Subject s;
    s.id = "s" + std::to_string(a + 1);
    s.times = times;
    s.values.resize(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
      const double eps = rng.normal();
      s.values[i] = sd > 0.0 ? u(static_cast<Eigen::Index>(i)) + sd * eps
                             : u(static_cast<Eigen::Index>(i));
    }
    subjects.push_back(std::move(s));
    out.truth.values.push_back(u);
    out.effects.push_back(gamma);
  }
  out.data = LongitudinalDataset(std::move(subjects));
  return out;
}

double amse(std::span<const Eigen::VectorXd> fitted, const TrueCurves& truth) {
  if (fitted.size() != truth.values.size()) {
    throw Error(ErrorCode::invalid_argument, "amse: subject counts differ");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < fitted.size(); ++a) {
    if (fitted[a].size() != truth.values[a].size()) {
      throw Error(ErrorCode::invalid_argument, "amse: observation counts differ");
    }
    sum += (fitted[a] - truth.values[a]).squaredNorm();
    count += static_cast<std::size_t>(fitted[a].size());
  }
  if (count == 0) throw Error(ErrorCode::invalid_argument, "amse: no observations");
  return sum / static_cast<double>(count);
}

ReplicationRecord run_replication(const SimulationDesign& design, int replication,
                                  const EmOptions& em) {
  ReplicationRecord rec;
  rec.replication = replication;
  try {
    const auto gen = generate_dataset(design, replication);
    SelectOptions sel;
    sel.em = em;
    sel.threads = 1;
    sel.keep_fits = true;
    const auto report = select_model(gen.data, design.mf_grid, design.mr_grid, sel);
    for (const auto& c : report.candidates) {
      if (c.status != CandidateStatus::ok) ++rec.failed_candidates;
      if (c.status != CandidateStatus::em_failed && !c.converged) ++rec.unconverged_candidates;
    }
    for (const auto c : kAllCriteria) {
      const auto k = static_cast<std::size_t>(c);
      const auto& idx = report.chosen[k];
      if (!idx) {
        if (!rec.error.empty()) rec.error += "; ";
        rec.error += "no eligible candidate for " + std::string(to_string(c));
        continue;
      }
      rec.selected[k] = true;
      rec.chosen_mf[k] = report.candidates[*idx].mf;
      rec.chosen_mr[k] = report.candidates[*idx].mr;
      rec.amse[k] = amse(report.fits[*idx]->fitted_values, gen.truth);
    }
    if (std::none_of(rec.selected.begin(), rec.selected.end(), [](bool b) { return b; })) {
      throw Error(ErrorCode::selection_failed, rec.error);
    }
    rec.ok = true;
  } catch (const Error& e) {
    rec.ok = false;
    rec.selected = {};
    rec.error = std::string(to_string(e.code())) + ": " + e.what();
  }
  return rec;
}

StudyResult run_study(const SimulationDesign& design, const StudyOptions& opts) {
  design.validate();
  StudyResult result;
  result.n = design.n;
  result.replications = design.replications;
  result.records.resize(static_cast<std::size_t>(design.replications));

  parallel_for(
      result.records.size(),
      [&](std::size_t r) {
        result.records[r] = run_replication(design, static_cast<int>(r), opts.em);
      },
      opts.threads);

  for (const auto c : kAllCriteria) {
    const auto k = static_cast<std::size_t>(c);
    for (int m : design.mf_grid) result.mf_freq[k][m] = 0;
    for (int m : design.mr_grid) result.mr_freq[k][m] = 0;
  }
  std::array<double, 3> sums{};
  for (const auto& rec : result.records) {
    if (!rec.ok) {
      ++result.failures;
      continue;
    }
    for (std::size_t k = 0; k < 3; ++k) {
      if (!rec.selected[k]) continue;
      ++result.selected[k];
      sums[k] += rec.amse[k];
      ++result.mf_freq[k][rec.chosen_mf[k]];
      ++result.mr_freq[k][rec.chosen_mr[k]];
    }
  }
  if (result.failures * 5 > design.replications) {
    throw Error(ErrorCode::study_failed, std::to_string(result.failures) + " of " +
                                             std::to_string(design.replications) +
                                             " replications failed");
  }
  for (std::size_t k = 0; k < 3; ++k) {
    result.mean_amse[k] = result.selected[k] > 0 ? sums[k] / result.selected[k] : 0.0;
  }
  return result;
}

}  // namespace splinemix
