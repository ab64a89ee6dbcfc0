#include "neso/surrogate.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "neso/error.hpp"
#include "neso/io.hpp"
#include "neso/tensor.hpp"

namespace neso {

BasisSpec::BasisSpec(std::vector<AxisBasis> axes) : axes_(std::move(axes)) {
  if (axes_.empty()) throw Error(ErrorKind::InvalidSpec, "basis needs at least a time axis");
  for (const auto& a : axes_) {
    if (!(a.domain.hi > a.domain.lo)) {
      throw Error(ErrorKind::InvalidSpec, "basis domain must satisfy hi > lo");
    }
  }
}

std::vector<int> BasisSpec::shape() const {
  std::vector<int> s;
  s.reserve(axes_.size());
  for (const auto& a : axes_) s.push_back(a.knots.count());
  return s;
}

std::size_t BasisSpec::size() const {
  const auto s = shape();
  return product(s);
}

std::vector<Interval> BasisSpec::domains() const {
  std::vector<Interval> d;
  for (const auto& a : axes_) d.push_back(a.domain);
  return d;
}

BasisSpec BasisSpec::with_domains(std::span<const Interval> domains) const {
  if (domains.size() != axes_.size()) {
    throw Error(ErrorKind::InvalidSpec, "domain count does not match basis dimension");
  }
  std::vector<AxisBasis> axes = axes_;
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i].domain = domains[i];
  return BasisSpec(std::move(axes));
}

BasisSpec make_basis(std::span<const int> counts, std::span<const int> orders,
                     std::span<const Interval> domains) {
  if (counts.size() != orders.size() || counts.size() != domains.size()) {
    throw Error(ErrorKind::InvalidSpec, "basis counts, orders and domains differ in length");
  }
  std::vector<AxisBasis> axes;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    axes.push_back({make_knots(counts[i], orders[i], domains[i]), domains[i]});
  }
  return BasisSpec(std::move(axes));
}

Icbc Icbc::all_boundary(ProblemKind kind, std::size_t state_dims) {
  Icbc icbc;
  icbc.kind = kind;
  icbc.faces.assign(state_dims, {FaceCondition::Boundary, FaceCondition::Boundary});
  return icbc;
}

double Icbc::face_value(std::size_t axis, int side) const {
  return faces.at(axis).at(side) == FaceCondition::Boundary ? boundary_value() : initial_value();
}

IcbcClamp::IcbcClamp(std::span<const int> shape, const Icbc& icbc) {
  const std::size_t dims = shape.size();
  if (icbc.faces.size() + 1 != dims) {
    throw Error(ErrorKind::Configuration, "ICBC face count does not match tensor rank");
  }
  const auto strides = row_major_strides(shape);
  const std::size_t total = product(shape);
  // Last writer wins: IC slice, then faces axis by axis.
  std::vector<double> value(total, 0.0);
  std::vector<unsigned char> set(total, 0);
  for (std::size_t n = 0; n < total; n += shape[dims - 1]) {
    value[n] = icbc.initial_value();
    set[n] = 1;
  }
  for (std::size_t a = 0; a + 1 < dims; ++a) {
    for (std::size_t n = 0; n < total; ++n) {
      const int i = static_cast<int>((n / strides[a]) % shape[a]);
      if (i == 0 || i == shape[a] - 1) {
        value[n] = icbc.face_value(a, i == 0 ? 0 : 1);
        set[n] = 1;
      }
    }
  }
  for (std::size_t n = 0; n < total; ++n) {
    if (set[n]) {
      index_.push_back(n);
      value_.push_back(value[n]);
    }
  }
}

void IcbcClamp::apply(std::span<double> values) const {
  for (std::size_t k = 0; k < index_.size(); ++k) values[index_[k]] = value_[k];
}

void IcbcClamp::block_gradient(std::span<double> grad) const {
  for (std::size_t i : index_) grad[i] = 0.0;
}

ControlTensor::ControlTensor(BasisSpec basis, std::vector<double> values)
    : basis_(std::move(basis)), values_(std::move(values)) {
  if (values_.size() != basis_.size()) {
    std::ostringstream msg;
    msg << "control tensor has " << values_.size() << " entries, basis expects "
        << basis_.size();
    throw Error(ErrorKind::Configuration, msg.str());
  }
}

ControlTensor ControlTensor::constant(BasisSpec basis, double value) {
  const std::size_t n = basis.size();
  return ControlTensor(std::move(basis), std::vector<double>(n, value));
}

double& ControlTensor::at(std::span<const int> index) {
  const auto shape = basis_.shape();
  const auto strides = row_major_strides(shape);
  std::size_t flat = 0;
  for (std::size_t a = 0; a < index.size(); ++a) flat += strides[a] * index[a];
  return values_.at(flat);
}

double ControlTensor::at(std::span<const int> index) const {
  return const_cast<ControlTensor*>(this)->at(index);
}

SurfaceStencil surface_stencil(const BasisSpec& basis, std::span<const double> point,
                               bool derivatives) {
  const std::size_t dims = basis.dims();
  if (point.size() != dims) {
    throw Error(ErrorKind::Configuration, "point dimension does not match basis");
  }
  const auto shape = basis.shape();
  const auto strides = row_major_strides(shape);

  std::vector<LocalBasis> local(dims);
  std::vector<double> jac(dims);
  std::vector<int> local_shape(dims);
  for (std::size_t a = 0; a < dims; ++a) {
    const auto& ax = basis.axis(a);
    const Rescaled r = rescale(point[a], ax.domain);
    const int max_deriv = !derivatives ? 0 : (a + 1 == dims ? 1 : 2);
    local[a] = eval_local(ax.knots, r.u, max_deriv);
    jac[a] = r.jacobian;
    local_shape[a] = local[a].order + 1;
  }

  const std::size_t n = product(local_shape);
  const std::size_t nstate = dims - 1;
  SurfaceStencil st;
  st.index.resize(n);
  st.value.resize(n);
  if (derivatives) {
    st.dt.resize(n);
    st.grad.assign(nstate, std::vector<double>(n));
    st.hess.assign(nstate, std::vector<double>(n));
  }

  std::vector<int> j(dims, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t flat = 0;
    double v = 1.0;
    for (std::size_t a = 0; a < dims; ++a) {
      flat += strides[a] * (local[a].first + j[a]);
      v *= local[a].ders[0][j[a]];
    }
    st.index[k] = flat;
    st.value[k] = v;
    if (derivatives) {
      // Swap one factor for its derivative along that axis.
      for (std::size_t d = 0; d < dims; ++d) {
        double p1 = 1.0;
        double p2 = 1.0;
        for (std::size_t a = 0; a < dims; ++a) {
          if (a == d) {
            p1 *= local[a].ders[1][j[a]] * jac[a];
            if (d < nstate) p2 *= local[a].ders[2][j[a]] * jac[a] * jac[a];
          } else {
            p1 *= local[a].ders[0][j[a]];
            p2 *= local[a].ders[0][j[a]];
          }
        }
        if (d == nstate) {
          st.dt[k] = p1;
        } else {
          st.grad[d][k] = p1;
          st.hess[d][k] = p2;
        }
      }
    }
    for (std::size_t a = dims; a-- > 0;) {
      if (++j[a] < local_shape[a]) break;
      j[a] = 0;
    }
  }
  return st;
}

namespace {

double dot(std::span<const std::size_t> index, std::span<const double> w,
           std::span<const double> c) {
  double s = 0.0;
  for (std::size_t k = 0; k < index.size(); ++k) s += w[k] * c[index[k]];
  return s;
}

}  // namespace

SurfacePoint eval_surface(const ControlTensor& c, std::span<const double> x, double t) {
  std::vector<double> point(x.begin(), x.end());
  point.push_back(t);
  const SurfaceStencil st = surface_stencil(c.basis(), point, true);
  const auto v = c.values();
  SurfacePoint out;
  out.value = dot(st.index, st.value, v);
  out.dt = dot(st.index, st.dt, v);
  for (std::size_t d = 0; d < st.grad.size(); ++d) {
    out.grad.push_back(dot(st.index, st.grad[d], v));
    out.hess_diag.push_back(dot(st.index, st.hess[d], v));
  }
  return out;
}

double eval_value(const ControlTensor& c, std::span<const double> point) {
  const SurfaceStencil st = surface_stencil(c.basis(), point, false);
  return dot(st.index, st.value, c.values());
}

ControlTensor apply_icbc(const ControlTensor& c, ProblemKind kind) {
  return apply_icbc(c, Icbc::all_boundary(kind, c.basis().state_dims()));
}

ControlTensor apply_icbc(const ControlTensor& c, const Icbc& icbc) {
  ControlTensor out = c;
  IcbcClamp(out.shape(), icbc).apply(out.values());
  return out;
}

SpanQuadrature gauss_legendre(int points) {
  if (points < 1) throw Error(ErrorKind::InvalidSpec, "quadrature needs at least one node");
  // Golub-Welsch: nodes are eigenvalues of the Jacobi matrix of the Legendre
  // recurrence, weights come from the first eigenvector components.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(points, points);
  for (int k = 1; k < points; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  SpanQuadrature q;
  for (int k = 0; k < points; ++k) {
    q.nodes.push_back(eig.eigenvalues()(k));
    const double v0 = eig.eigenvectors()(0, k);
    q.weights.push_back(2.0 * v0 * v0);
  }
  return q;
}

SpanQuadrature span_quadrature(const KnotVector& kv, int points) {
  const SpanQuadrature ref = gauss_legendre(points);
  const auto U = kv.knots();
  SpanQuadrature q;
  for (std::size_t i = 0; i + 1 < U.size(); ++i) {
    const double a = U[i];
    const double b = U[i + 1];
    if (!(b > a)) continue;
    for (int k = 0; k < points; ++k) {
      q.nodes.push_back(0.5 * (a + b) + 0.5 * (b - a) * ref.nodes[k]);
      q.weights.push_back(0.5 * (b - a) * ref.weights[k]);
    }
  }
  return q;
}

namespace {

struct AxisQuadrature {
  SpanQuadrature rule;
  Eigen::MatrixXd basis;  // nodes x count
};

std::vector<AxisQuadrature> quadrature_grid(const BasisSpec& basis, int points_per_span) {
  if (points_per_span < 4) {
    throw Error(ErrorKind::InvalidSpec, "projection quadrature needs >= 4 points per knot span");
  }
  std::vector<AxisQuadrature> out;
  for (const auto& ax : basis.axes()) {
    AxisQuadrature aq;
    aq.rule = span_quadrature(ax.knots, std::max(points_per_span, ax.knots.order() + 1));
    const int q = static_cast<int>(aq.rule.nodes.size());
    aq.basis = Eigen::MatrixXd::Zero(q, ax.knots.count());
    for (int k = 0; k < q; ++k) {
      const auto row = eval_all(ax.knots, aq.rule.nodes[k]);
      for (int i = 0; i < ax.knots.count(); ++i) aq.basis(k, i) = row[i];
    }
    out.push_back(std::move(aq));
  }
  return out;
}

std::vector<double> sample_on_nodes(const ScalarField& target, const BasisSpec& basis,
                                    const std::vector<AxisQuadrature>& grid) {
  std::vector<int> shape;
  for (const auto& g : grid) shape.push_back(static_cast<int>(g.rule.nodes.size()));
  std::vector<double> values(product(shape));
  std::vector<double> point(shape.size());
  std::size_t n = 0;
  for_each_index(shape, [&](std::span<const int> idx) {
    for (std::size_t a = 0; a < idx.size(); ++a) {
      const Interval d = basis.axis(a).domain;
      point[a] = d.lo + d.width() * grid[a].rule.nodes[idx[a]];
    }
    values[n++] = target(point);
  });
  return values;
}

// Row-major copy of an Eigen matrix for apply_along_axis.
std::vector<double> row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  }
  return out;
}

std::vector<double> contract(std::vector<double> values, std::vector<int> shape,
                             const std::vector<Eigen::MatrixXd>& mats) {
  for (std::size_t a = 0; a < mats.size(); ++a) {
    const auto m = row_major(mats[a]);
    std::vector<int> out_shape = shape;
    out_shape[a] = static_cast<int>(mats[a].rows());
    std::vector<double> out(product(out_shape));
    apply_along_axis<double, double, double>(values, shape, a, m, out_shape[a], out);
    values = std::move(out);
    shape = std::move(out_shape);
  }
  return values;
}

}  // namespace

ControlTensor l2_project(const ScalarField& target, const BasisSpec& basis,
                         int points_per_span) {
  const auto grid = quadrature_grid(basis, points_per_span);
  std::vector<int> node_shape;
  for (const auto& g : grid) node_shape.push_back(static_cast<int>(g.rule.nodes.size()));
  const auto g_values = sample_on_nodes(target, basis, grid);

  // b = (W_1 B_1)^T x .. x (W_D B_D)^T applied to the sampled target.
  std::vector<Eigen::MatrixXd> project;
  std::vector<Eigen::MatrixXd> inverse_gram;
  for (const auto& g : grid) {
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(g.rule.weights.data(),
                                                          static_cast<Eigen::Index>(g.rule.weights.size()));
    Eigen::MatrixXd wb = w.asDiagonal() * g.basis;
    project.push_back(wb.transpose());
    Eigen::MatrixXd gram = g.basis.transpose() * wb;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::NumericalConditioning, "Gram matrix is not positive definite");
    }
    const Eigen::VectorXd diag = Eigen::MatrixXd(llt.matrixL()).diagonal();
    if (diag.minCoeff() <= 1e-14 * diag.maxCoeff()) {
      throw Error(ErrorKind::NumericalConditioning, "Gram matrix is numerically singular");
    }
    inverse_gram.push_back(llt.solve(Eigen::MatrixXd::Identity(gram.rows(), gram.cols())));
  }
  auto b = contract(g_values, node_shape, project);
  auto c = contract(std::move(b), basis.shape(), inverse_gram);
  return ControlTensor(basis, std::move(c));
}

double l2_residual(const ScalarField& target, const ControlTensor& c, int points_per_span) {
  const BasisSpec& basis = c.basis();
  const auto grid = quadrature_grid(basis, points_per_span);
  std::vector<int> node_shape;
  std::vector<Eigen::MatrixXd> eval;
  for (const auto& g : grid) {
    node_shape.push_back(static_cast<int>(g.rule.nodes.size()));
    eval.push_back(g.basis);
  }
  const auto g_values = sample_on_nodes(target, basis, grid);
  const auto surface = contract(std::vector<double>(c.values().begin(), c.values().end()),
                                basis.shape(), eval);
  double sum = 0.0;
  std::size_t n = 0;
  for_each_index(node_shape, [&](std::span<const int> idx) {
    double w = 1.0;
    for (std::size_t a = 0; a < idx.size(); ++a) w *= grid[a].rule.weights[idx[a]];
    const double r = g_values[n] - surface[n];
    sum += w * r * r;
    ++n;
  });
  return std::sqrt(sum);
}

void write_control_tensor(std::ostream& os, const ControlTensor& c) {
  ArrayFile file;
  file.kind = "control";
  for (const auto& ax : c.basis().axes()) {
    file.axes.push_back({ax.knots.count(), ax.knots.order(), ax.domain});
  }
  file.values.assign(c.values().begin(), c.values().end());
  write_array_file(os, file);
}

ControlTensor read_control_tensor(std::istream& is) {
  const ArrayFile file = read_array_file(is);
  if (file.kind != "control") {
    throw Error(ErrorKind::Io, "expected a control tensor, found '" + file.kind + "'");
  }
  std::vector<AxisBasis> axes;
  for (const auto& a : file.axes) {
    axes.push_back({make_knots(a.count, a.order, a.domain), a.domain});
  }
  return ControlTensor(BasisSpec(std::move(axes)), file.values);
}

}  // namespace neso
