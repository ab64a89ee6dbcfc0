#pragma once

// Clamped B-spline bases on the normalized interval [0, 1].
//
// Basis functions follow the Cox-de Boor convention where `order` is the
// polynomial degree: order 0 gives piecewise constants. Physical coordinates
// are mapped onto [0, 1] with `rescale`, and a p-th derivative picks up the
// factor jacobian^p.

#include <array>
#include <span>
#include <vector>

namespace neso {

inline constexpr int kMaxOrder = 8;

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double width() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

/// Non-decreasing clamped knot vector: order+1 zeros, interior knots, order+1 ones.
class KnotVector {
 public:
  /// Validates clamping, monotonicity and count >= order + 1.
  KnotVector(std::vector<double> knots, int order);

  int order() const noexcept { return order_; }
  /// Number of basis functions (control points).
  int count() const noexcept { return static_cast<int>(knots_.size()) - order_ - 1; }
  std::span<const double> knots() const noexcept { return knots_; }

  /// Index s of the nonempty span [knots[s], knots[s+1]) holding u. The right
  /// endpoint u == 1 belongs to the last nonempty span.
  int find_span(double u) const;

  /// Greville abscissae: the average of `order` consecutive interior knots per
  /// basis function. Used as the nominal location of each control point.
  std::vector<double> greville() const;

  /// Width of the smallest nonempty knot span.
  double min_span() const;

  friend bool operator==(const KnotVector&, const KnotVector&) = default;

 private:
  std::vector<double> knots_;
  int order_;
};

/// Clamped knot vector with equispaced interior knots. The domain is only
/// validated; knots always live on [0, 1].
KnotVector make_knots(int count, int order, Interval domain = {});

/// The order+1 basis functions that are nonzero on the span containing u,
/// together with their derivatives in the normalized coordinate.
struct LocalBasis {
  int first = 0;      // global index of ders[.][0]
  int order = 0;
  int max_deriv = 0;
  std::array<std::array<double, kMaxOrder + 1>, kMaxOrder + 1> ders{};  // ders[p][j]
};

/// Triangular (non-recursive) Cox-de Boor evaluation with derivatives up to
/// max_deriv. Derivative orders above the spline order are zero.
LocalBasis eval_local(const KnotVector& kv, double u, int max_deriv);

/// All basis values B_{1,d}(u) .. B_{count,d}(u).
std::vector<double> eval_all(const KnotVector& kv, double u);

/// p-th derivatives of all basis functions at u, 1 <= p <= order.
std::vector<double> eval_derivative(const KnotVector& kv, int p, double u);

struct Rescaled {
  double u = 0.0;
  double jacobian = 1.0;
};

/// Maps x in [lo, hi] to u in [0, 1]; jacobian = du/dx.
Rescaled rescale(double x, Interval domain);

}  // namespace neso
