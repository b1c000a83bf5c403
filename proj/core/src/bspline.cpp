#include "splinemix/bspline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "splinemix/error.hpp"

namespace splinemix {

BasisSystem make_knots(double domain_min, double domain_max, int num_basis, int degree) {
  if (degree < 0) {
    throw Error(ErrorCode::invalid_argument, "degree must be non-negative");
  }
  if (num_basis < degree + 1) {
    throw Error(ErrorCode::invalid_basis_count,
                "num_basis " + std::to_string(num_basis) + " is below degree + 1 = " +
                    std::to_string(degree + 1));
  }
  if (!std::isfinite(domain_min) || !std::isfinite(domain_max) || !(domain_min < domain_max)) {
    throw Error(ErrorCode::invalid_domain, "domain_min must be strictly below domain_max");
  }

  const int intervals = num_basis - degree;
  const double h = (domain_max - domain_min) / intervals;
  std::vector<double> knots(static_cast<std::size_t>(num_basis + degree + 1));
  for (int i = 0; i < static_cast<int>(knots.size()); ++i) {
    knots[i] = domain_min + static_cast<double>(i - degree) * h;
  }
  knots[degree] = domain_min;
  knots[num_basis] = domain_max;
  return BasisSystem(degree, num_basis, std::move(knots), h);
}

int BasisSystem::span_index(double t) const noexcept {
  // Uniform knots: the interval follows from the offset, then a one-step
  // correction absorbs rounding at knot boundaries.
  int s = degree_ + static_cast<int>(std::floor((t - domain_min()) / spacing_));
  s = std::clamp(s, degree_, num_basis_ - 1);
  while (s > degree_ && t < knots_[s]) --s;
  while (s < num_basis_ - 1 && t >= knots_[s + 1]) ++s;
  return s;
}

namespace {

double cox_de_boor(std::span<const double> k, int j, int r, double t, double right_end) {
  if (r == 0) {
    if (t == right_end) return (k[j + 1] == right_end && k[j] < k[j + 1]) ? 1.0 : 0.0;
    return (k[j] <= t && t < k[j + 1]) ? 1.0 : 0.0;
  }
  double value = 0.0;
  const double left_den = k[j + r] - k[j];
  if (left_den != 0.0) {
    value += (t - k[j]) / left_den * cox_de_boor(k, j, r - 1, t, right_end);
  }
  const double right_den = k[j + r + 1] - k[j + 1];
  if (right_den != 0.0) {
    value += (k[j + r + 1] - t) / right_den * cox_de_boor(k, j + 1, r - 1, t, right_end);
  }
  return value;
}

}  // namespace

double eval_basis(const BasisSystem& basis, int j, int degree, double t) {
  const auto k = basis.knots();
  const int count = static_cast<int>(k.size()) - degree - 1;
  if (degree < 0 || j < 0 || j >= count) {
    throw Error(ErrorCode::invalid_index, "basis index " + std::to_string(j) +
                                              " out of range for degree " +
                                              std::to_string(degree));
  }
  if (!std::isfinite(t)) {
    throw Error(ErrorCode::invalid_argument, "evaluation point must be finite");
  }
  return cox_de_boor(k, j, degree, t, basis.domain_max());
}

void nonzero_basis(const BasisSystem& basis, double t, std::span<double> out) {
  const int p = basis.degree();
  const auto k = basis.knots();
  const int s = basis.span_index(t);

  std::array<double, 16> left{};
  std::array<double, 16> right{};
  std::vector<double> heap_left, heap_right;
  double* lp = left.data();
  double* rp = right.data();
  if (p + 1 > static_cast<int>(left.size())) {
    heap_left.resize(p + 1);
    heap_right.resize(p + 1);
    lp = heap_left.data();
    rp = heap_right.data();
  }

  out[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    lp[j] = t - k[s + 1 - j];
    rp[j] = k[s + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = out[r] / (rp[r + 1] + lp[j - r]);
      out[r] = saved + rp[r + 1] * temp;
      saved = lp[j - r] * temp;
    }
    out[j] = saved;
  }
}

DesignMatrix design_matrix(const BasisSystem& basis, std::span<const double> times) {
  const int p = basis.degree();
  DesignMatrix dm;
  dm.times.assign(times.begin(), times.end());
  dm.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(times.size()), basis.num_basis());

  std::vector<double> local(static_cast<std::size_t>(p + 1));
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (!std::isfinite(t) || !basis.contains(t)) {
      throw Error(ErrorCode::out_of_domain,
                  "time " + std::to_string(t) + " outside basis domain [" +
                      std::to_string(basis.domain_min()) + ", " +
                      std::to_string(basis.domain_max()) + "]");
    }
    nonzero_basis(basis, t, local);
    const int first = basis.span_index(t) - p;
    for (int r = 0; r <= p; ++r) {
      dm.values(static_cast<Eigen::Index>(i), first + r) = local[r];
    }
  }
  return dm;
}

}  // namespace splinemix
