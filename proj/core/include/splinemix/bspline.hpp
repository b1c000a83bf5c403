#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace splinemix {

/// A B-spline family on equally spaced knots.
///
/// Knots are stored 0-based: k_0 < k_1 < ... < k_{m+d}, where m is the
/// number of basis functions and d the degree. The fitting domain is
/// [k_d, k_m]; the d knots on either side extend it with the interior
/// spacing. Basis function j (0 <= j < m) is supported on [k_j, k_{j+d+1}].
///
/// Instances are immutable and safe to share across threads.
class BasisSystem {
 public:
  [[nodiscard]] int degree() const noexcept { return degree_; }
  [[nodiscard]] int num_basis() const noexcept { return num_basis_; }
  [[nodiscard]] std::span<const double> knots() const noexcept { return knots_; }
  [[nodiscard]] double domain_min() const noexcept { return knots_[degree_]; }
  [[nodiscard]] double domain_max() const noexcept { return knots_[num_basis_]; }
  [[nodiscard]] double spacing() const noexcept { return spacing_; }

  [[nodiscard]] bool contains(double t) const noexcept {
    return t >= domain_min() && t <= domain_max();
  }

  /// Index s of the knot interval [k_s, k_{s+1}) holding t, clamped to the
  /// fitting domain so that t == domain_max lands in the last interval.
  [[nodiscard]] int span_index(double t) const noexcept;

 private:
  friend BasisSystem make_knots(double, double, int, int);

  BasisSystem(int degree, int num_basis, std::vector<double> knots, double spacing)
      : degree_(degree), num_basis_(num_basis), knots_(std::move(knots)), spacing_(spacing) {}

  int degree_;
  int num_basis_;
  std::vector<double> knots_;
  double spacing_;
};

/// Builds m + degree + 1 equally spaced knots with spacing
/// (domain_max - domain_min) / (m - degree), anchored so that
/// k_degree == domain_min and k_m == domain_max exactly.
///
/// Throws Error(invalid_basis_count) when num_basis < degree + 1 and
/// Error(invalid_domain) unless domain_min < domain_max (both finite).
[[nodiscard]] BasisSystem make_knots(double domain_min, double domain_max, int num_basis,
                                     int degree = 3);

/// B_j(t; degree) by the Cox-de Boor recursion on the system's knots.
///
/// `degree` may be lower than the system degree; valid j are
/// 0 <= j < knots().size() - degree - 1. Terms with a zero denominator
/// contribute 0. The degree-0 indicator is half-open, except that the
/// interval ending at domain_max is closed on the right so that evaluation
/// at domain_max takes the left limit.
[[nodiscard]] double eval_basis(const BasisSystem& basis, int j, int degree, double t);

struct DesignMatrix {
  Eigen::MatrixXd values;  ///< N x m, values(i, k) = phi_k(times[i])
  std::vector<double> times;
};

/// Evaluates every basis function at every time. Rejects (does not
/// extrapolate) times outside [domain_min, domain_max] with
/// Error(out_of_domain).
[[nodiscard]] DesignMatrix design_matrix(const BasisSystem& basis, std::span<const double> times);

/// The degree+1 basis values that can be nonzero at t, for functions
/// span_index(t) - degree ... span_index(t). Requires basis.contains(t).
void nonzero_basis(const BasisSystem& basis, double t, std::span<double> out);

}  // namespace splinemix
