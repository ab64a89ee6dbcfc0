#pragma once

// Tensor-product spline surfaces F(x_1..x_n, t) = C . B(x, t).
//
// The last axis of every BasisSpec is time. Control tensors are stored
// row-major with time as the fastest index.

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "neso/spline_basis.hpp"

namespace neso {

struct AxisBasis {
  KnotVector knots;
  Interval domain;
};

class BasisSpec {
 public:
  explicit BasisSpec(std::vector<AxisBasis> axes);

  std::size_t dims() const noexcept { return axes_.size(); }
  std::size_t state_dims() const noexcept { return axes_.size() - 1; }
  const AxisBasis& axis(std::size_t i) const { return axes_.at(i); }
  std::span<const AxisBasis> axes() const noexcept { return axes_; }

  std::vector<int> shape() const;
  std::size_t size() const;
  std::vector<Interval> domains() const;

  /// Same knots on a different physical box.
  BasisSpec with_domains(std::span<const Interval> domains) const;

 private:
  std::vector<AxisBasis> axes_;
};

BasisSpec make_basis(std::span<const int> counts, std::span<const int> orders,
                     std::span<const Interval> domains);

enum class ProblemKind { Safety, Recovery };

/// A state-space face either lies on the safe-set boundary (takes the
/// boundary value) or is an artificial truncation of an unbounded region
/// (takes the initial value, i.e. the probability far from the boundary).
enum class FaceCondition { Boundary, FarField };

struct Icbc {
  ProblemKind kind = ProblemKind::Safety;
  std::vector<std::array<FaceCondition, 2>> faces;  // per state axis: {lo, hi}

  static Icbc all_boundary(ProblemKind kind, std::size_t state_dims);

  double initial_value() const noexcept { return kind == ProblemKind::Safety ? 1.0 : 0.0; }
  double boundary_value() const noexcept { return kind == ProblemKind::Safety ? 0.0 : 1.0; }
  double face_value(std::size_t axis, int side) const;
};

/// Entries of a control tensor that are fixed by the initial and boundary
/// conditions, in application order (IC slice first, faces override).
class IcbcClamp {
 public:
  IcbcClamp(std::span<const int> shape, const Icbc& icbc);

  void apply(std::span<double> values) const;
  /// Zeroes gradient entries of clamped control points.
  void block_gradient(std::span<double> grad) const;
  std::size_t size() const noexcept { return index_.size(); }

 private:
  std::vector<std::size_t> index_;
  std::vector<double> value_;
};

class ControlTensor {
 public:
  ControlTensor(BasisSpec basis, std::vector<double> values);
  static ControlTensor constant(BasisSpec basis, double value);

  const BasisSpec& basis() const noexcept { return basis_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  std::vector<int> shape() const { return basis_.shape(); }

  double& at(std::span<const int> index);
  double at(std::span<const int> index) const;

 private:
  BasisSpec basis_;
  std::vector<double> values_;
};

/// Physical-coordinate surface value and partial derivatives at one point.
struct SurfacePoint {
  double value = 0.0;
  double dt = 0.0;
  std::vector<double> grad;       // dF/dx_k
  std::vector<double> hess_diag;  // d2F/dx_k^2
};

/// Every output of eval_surface as a sparse linear form over the control
/// tensor: value = sum_i value[i] * C[index[i]], and likewise for the others.
struct SurfaceStencil {
  std::vector<std::size_t> index;
  std::vector<double> value;
  std::vector<double> dt;
  std::vector<std::vector<double>> grad;
  std::vector<std::vector<double>> hess;
};

/// point = (x_1, .., x_n, t) in physical coordinates.
SurfaceStencil surface_stencil(const BasisSpec& basis, std::span<const double> point,
                               bool derivatives = true);

SurfacePoint eval_surface(const ControlTensor& c, std::span<const double> x, double t);
double eval_value(const ControlTensor& c, std::span<const double> point);

ControlTensor apply_icbc(const ControlTensor& c, ProblemKind kind);
ControlTensor apply_icbc(const ControlTensor& c, const Icbc& icbc);

using ScalarField = std::function<double(std::span<const double> point)>;

/// Gauss-Legendre rule with `points` nodes on every nonempty knot span, in
/// normalized coordinates.
struct SpanQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};
SpanQuadrature span_quadrature(const KnotVector& kv, int points);

/// Gauss-Legendre nodes and weights on [-1, 1].
SpanQuadrature gauss_legendre(int points);

/// Best approximation of `target` in the spline span under the quadrature
/// inner product of the normalized domain: solves the Gram system B c = b
/// axis by axis (the tensor-product Gram matrix is a Kronecker product).
/// Uses max(points_per_span, order + 1) nodes per span; points_per_span >= 4.
ControlTensor l2_project(const ScalarField& target, const BasisSpec& basis,
                         int points_per_span = 4);

/// sqrt of the quadrature integral of (target - surface)^2 over the
/// normalized unit box.
double l2_residual(const ScalarField& target, const ControlTensor& c, int points_per_span = 4);

/// Header + little-endian float64 payload; see io.hpp for the layout.
void write_control_tensor(std::ostream& os, const ControlTensor& c);
ControlTensor read_control_tensor(std::istream& is);

}  // namespace neso
