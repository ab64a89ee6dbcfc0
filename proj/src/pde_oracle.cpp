#include "neso/pde_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "neso/error.hpp"
#include "neso/tensor.hpp"

namespace neso {

namespace {

// Coefficients of (L F)_i = lo F_{i-1} + di F_i + up F_{i+1} for
// L = f d/dx + D d2/dx2 along one axis.
struct Stencil {
  double lo = 0.0, di = 0.0, up = 0.0;
};

Stencil axis_stencil(double f, double diff, double h) {
  Stencil s{diff / (h * h), -2.0 * diff / (h * h), diff / (h * h)};
  if (std::abs(f) * h > 2.0 * diff) {
    // dF/dt = f dF/dx transports information against f: upwind accordingly.
    if (f > 0.0) {
      s.up += f / h;
      s.di -= f / h;
    } else {
      s.di += f / h;
      s.lo -= f / h;
    }
  } else {
    s.lo -= f / (2.0 * h);
    s.up += f / (2.0 * h);
  }
  return s;
}

bool time_dependent(const Drift& d) { return std::holds_alternative<SineDrift>(d); }

[[noreturn]] void solve_failure(const PdeGrid& grid, double dt, long step, const char* what) {
  std::ostringstream msg;
  msg << "tridiagonal solve failed (" << what << ") at step " << step << ", grid";
  for (int p : grid.points) msg << ' ' << p;
  msg << ", dt " << dt;
  throw Error(ErrorKind::Numerical, msg.str());
}

// Thomas algorithm for a[i] x[i-1] + b[i] x[i] + c[i] x[i+1] = d[i]; a[0] and
// c[n-1] are ignored. Overwrites c and d; solution in d.
bool thomas(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::span<double> d) {
  const std::size_t n = d.size();
  double denom = b[0];
  if (!(std::abs(denom) > 1e-300)) return false;
  c[0] /= denom;
  d[0] /= denom;
  for (std::size_t i = 1; i < n; ++i) {
    denom = b[i] - a[i] * c[i - 1];
    if (!(std::abs(denom) > 1e-300) || !std::isfinite(denom)) return false;
    c[i] /= denom;
    d[i] = (d[i] - a[i] * d[i - 1]) / denom;
  }
  for (std::size_t i = n - 1; i-- > 0;) d[i] -= c[i] * d[i + 1];
  return true;
}

struct Setup {
  std::vector<double> h;
  std::vector<double> diff;  // sigma_k^2 / 2
  std::vector<double> times;
  int substeps = 1;
  double dt = 0.0;
  Icbc icbc;
};

Setup prepare(const SystemSpec& system, const PdeGrid& grid, double horizon) {
  system.validate();
  const std::size_t n = system.dims();
  if (n != 1 && n != 2) {
    throw Error(ErrorKind::Configuration, "the finite-difference oracle supports 1-D and 2-D states");
  }
  if (grid.points.size() != n) throw Error(ErrorKind::Configuration, "grid rank does not match system");
  for (int p : grid.points) {
    if (p < 3) throw Error(ErrorKind::Configuration, "need at least 3 nodes per axis");
  }
  if (!(horizon > 0.0)) throw Error(ErrorKind::Configuration, "horizon must be > 0");
  if (grid.time_slices < 1) throw Error(ErrorKind::Configuration, "time_slices must be >= 1");

  Setup s;
  for (std::size_t a = 0; a < n; ++a) {
    s.h.push_back(system.domain[a].width() / (grid.points[a] - 1));
    s.diff.push_back(0.5 * system.sigma[a] * system.sigma[a]);
  }
  const double bound = grid.dt > 0.0 ? grid.dt : default_time_step(system, grid, horizon);
  const double interval = horizon / grid.time_slices;
  s.substeps = std::max(1, static_cast<int>(std::ceil(interval / bound - 1e-9)));
  s.dt = interval / s.substeps;
  for (int k = 0; k <= grid.time_slices; ++k) s.times.push_back(horizon * k / grid.time_slices);
  s.icbc = system.icbc();
  return s;
}

GridSolution make_solution(const SystemSpec& system, const PdeGrid& grid, const Setup& s) {
  GridSolution g;
  g.domain = system.domain;
  g.points = grid.points;
  g.times = s.times;
  g.kind = system.kind;
  g.dt = s.dt;
  g.values.assign(product(g.shape()), 0.0);
  return g;
}

void store_slice(GridSolution& g, std::span<const double> slice, std::size_t k) {
  const std::size_t nt = g.times.size();
  for (std::size_t i = 0; i < slice.size(); ++i) {
    g.values[i * nt + k] = std::clamp(slice[i], 0.0, 1.0);
  }
}

GridSolution solve_1d(const SystemSpec& system, const PdeGrid& grid, double horizon) {
  const Setup s = prepare(system, grid, horizon);
  GridSolution g = make_solution(system, grid, s);
  const int n = grid.points[0];
  const double h = s.h[0];
  const double lo_x = system.domain[0].lo;
  const double dt = s.dt;

  std::vector<double> F(n, s.icbc.initial_value());
  const double left = s.icbc.face_value(0, 0);
  const double right = s.icbc.face_value(0, 1);
  F[0] = left;
  F[n - 1] = right;
  store_slice(g, F, 0);

  std::vector<Stencil> now(n), next(n);
  double f = 0.0;
  auto build = [&](double t, std::vector<Stencil>& st) {
    for (int i = 1; i < n - 1; ++i) {
      const double x = lo_x + i * h;
      system.drift_at(std::span<const double>(&x, 1), t, std::span<double>(&f, 1));
      st[i] = axis_stencil(f, s.diff[0], h);
    }
  };
  const bool varying = time_dependent(system.drift);
  build(0.0, now);
  if (!varying) next = now;

  const int m = n - 2;
  std::vector<double> a(m), b(m), c(m), d(m);
  long step = 0;
  for (std::size_t k = 1; k < s.times.size(); ++k) {
    for (int sub = 0; sub < s.substeps; ++sub, ++step) {
      const double t = s.times[k - 1] + sub * dt;
      if (varying) build(t + dt, next);
      for (int i = 1; i < n - 1; ++i) {
        const Stencil& e = now[i];
        const Stencil& im = next[i];
        const int r = i - 1;
        d[r] = F[i] + 0.5 * dt * (e.lo * F[i - 1] + e.di * F[i] + e.up * F[i + 1]);
        a[r] = -0.5 * dt * im.lo;
        b[r] = 1.0 - 0.5 * dt * im.di;
        c[r] = -0.5 * dt * im.up;
      }
      d[0] -= a[0] * left;
      d[m - 1] -= c[m - 1] * right;
      if (!thomas(a, b, c, d)) solve_failure(grid, dt, step, "zero pivot");
      for (int i = 1; i < n - 1; ++i) F[i] = d[i - 1];
      if (varying) std::swap(now, next);
    }
    for (double v : F) {
      if (!std::isfinite(v)) solve_failure(grid, dt, step, "non-finite value");
    }
    store_slice(g, F, k);
  }
  return g;
}

GridSolution solve_2d(const SystemSpec& system, const PdeGrid& grid, double horizon) {
  const Setup s = prepare(system, grid, horizon);
  GridSolution g = make_solution(system, grid, s);
  const int nx = grid.points[0];
  const int ny = grid.points[1];
  const double hx = s.h[0], hy = s.h[1];
  const double dt = s.dt;
  auto at = [ny](int i, int j) { return static_cast<std::size_t>(i) * ny + j; };

  std::vector<double> F(static_cast<std::size_t>(nx) * ny, s.icbc.initial_value());
  // Boundary values; faces override the initial value at shared nodes.
  auto boundary = [&](int i, int j, double& v) {
    bool on = false;
    if (i == 0) { v = s.icbc.face_value(0, 0); on = true; }
    if (i == nx - 1) { v = s.icbc.face_value(0, 1); on = true; }
    if (j == 0) { v = s.icbc.face_value(1, 0); on = true; }
    if (j == ny - 1) { v = s.icbc.face_value(1, 1); on = true; }
    return on;
  };
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) boundary(i, j, F[at(i, j)]);
  }
  store_slice(g, F, 0);

  std::vector<Stencil> sx(F.size()), sy(F.size());
  auto build = [&](double t) {
    double x[2], f[2];
    for (int i = 1; i < nx - 1; ++i) {
      for (int j = 1; j < ny - 1; ++j) {
        x[0] = system.domain[0].lo + i * hx;
        x[1] = system.domain[1].lo + j * hy;
        system.drift_at(x, t, f);
        sx[at(i, j)] = axis_stencil(f[0], s.diff[0], hx);
        sy[at(i, j)] = axis_stencil(f[1], s.diff[1], hy);
      }
    }
  };
  const bool varying = time_dependent(system.drift);
  build(0.0);

  std::vector<double> G = F;  // intermediate half-step field
  const int line = std::max(nx, ny);
  std::vector<double> a(line), b(line), c(line), d(line);
  long step = 0;
  for (std::size_t k = 1; k < s.times.size(); ++k) {
    for (int sub = 0; sub < s.substeps; ++sub, ++step) {
      if (varying) build(s.times[k - 1] + (sub + 0.5) * dt);
      // Implicit in x, explicit in y.
      for (int j = 1; j < ny - 1; ++j) {
        const int m = nx - 2;
        for (int i = 1; i < nx - 1; ++i) {
          const Stencil& ey = sy[at(i, j)];
          const Stencil& ex = sx[at(i, j)];
          const int r = i - 1;
          d[r] = F[at(i, j)] + 0.5 * dt * (ey.lo * F[at(i, j - 1)] + ey.di * F[at(i, j)] +
                                           ey.up * F[at(i, j + 1)]);
          a[r] = -0.5 * dt * ex.lo;
          b[r] = 1.0 - 0.5 * dt * ex.di;
          c[r] = -0.5 * dt * ex.up;
        }
        d[0] -= a[0] * G[at(0, j)];
        d[m - 1] -= c[m - 1] * G[at(nx - 1, j)];
        if (!thomas(std::span(a).first(m), std::span(b).first(m), std::span(c).first(m),
                    std::span(d).first(m))) {
          solve_failure(grid, dt, step, "zero pivot in x sweep");
        }
        for (int i = 1; i < nx - 1; ++i) G[at(i, j)] = d[i - 1];
      }
      // Implicit in y, explicit in x.
      for (int i = 1; i < nx - 1; ++i) {
        const int m = ny - 2;
        for (int j = 1; j < ny - 1; ++j) {
          const Stencil& ex = sx[at(i, j)];
          const Stencil& ey = sy[at(i, j)];
          const int r = j - 1;
          d[r] = G[at(i, j)] + 0.5 * dt * (ex.lo * G[at(i - 1, j)] + ex.di * G[at(i, j)] +
                                           ex.up * G[at(i + 1, j)]);
          a[r] = -0.5 * dt * ey.lo;
          b[r] = 1.0 - 0.5 * dt * ey.di;
          c[r] = -0.5 * dt * ey.up;
        }
        d[0] -= a[0] * F[at(i, 0)];
        d[m - 1] -= c[m - 1] * F[at(i, ny - 1)];
        if (!thomas(std::span(a).first(m), std::span(b).first(m), std::span(c).first(m),
                    std::span(d).first(m))) {
          solve_failure(grid, dt, step, "zero pivot in y sweep");
        }
        for (int j = 1; j < ny - 1; ++j) F[at(i, j)] = d[j - 1];
      }
    }
    for (double v : F) {
      if (!std::isfinite(v)) solve_failure(grid, dt, step, "non-finite value");
    }
    store_slice(g, F, k);
  }
  return g;
}

}  // namespace

std::vector<int> GridSolution::shape() const {
  std::vector<int> s = points;
  s.push_back(static_cast<int>(times.size()));
  return s;
}

double GridSolution::node(std::size_t axis, int i) const {
  return domain[axis].lo + domain[axis].width() * i / (points[axis] - 1);
}

double GridSolution::at(std::span<const int> index) const {
  const auto sh = shape();
  const auto strides = row_major_strides(sh);
  std::size_t flat = 0;
  for (std::size_t a = 0; a < index.size(); ++a) flat += strides[a] * index[a];
  return values.at(flat);
}

double GridSolution::interpolate(std::span<const double> x, double t) const {
  const std::size_t n = points.size();
  if (x.size() != n) throw Error(ErrorKind::Configuration, "point dimension does not match grid");
  std::vector<int> base(n + 1);
  std::vector<double> w(n + 1);
  for (std::size_t a = 0; a < n; ++a) {
    const double slack = 1e-12 * domain[a].width();
    if (!(x[a] >= domain[a].lo - slack && x[a] <= domain[a].hi + slack)) {
      throw Error(ErrorKind::Domain, "point outside the grid");
    }
    const double s = std::clamp((x[a] - domain[a].lo) / domain[a].width(), 0.0, 1.0) * (points[a] - 1);
    base[a] = std::min(static_cast<int>(s), points[a] - 2);
    w[a] = s - base[a];
  }
  if (!(t >= times.front() - 1e-12 && t <= times.back() + 1e-12)) {
    throw Error(ErrorKind::Domain, "time outside the stored slices");
  }
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  int k = static_cast<int>(it - times.begin()) - 1;
  k = std::clamp(k, 0, static_cast<int>(times.size()) - 2);
  base[n] = k;
  w[n] = std::clamp((t - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0);

  const auto strides = row_major_strides(shape());
  double out = 0.0;
  for (unsigned corner = 0; corner < (1u << (n + 1)); ++corner) {
    double weight = 1.0;
    std::size_t flat = 0;
    for (std::size_t a = 0; a <= n; ++a) {
      const bool hi = corner & (1u << a);
      weight *= hi ? w[a] : 1.0 - w[a];
      flat += strides[a] * (base[a] + (hi ? 1 : 0));
    }
    if (weight != 0.0) out += weight * values[flat];
  }
  return out;
}

double default_time_step(const SystemSpec& system, const PdeGrid& grid, double horizon) {
  const std::size_t n = system.dims();
  // max |f| over grid nodes and 33 sample times.
  double fmax = 0.0;
  std::vector<double> x(n), f(n);
  std::vector<int> shape(grid.points.begin(), grid.points.end());
  const int samples = time_dependent(system.drift) ? 33 : 1;
  for (int k = 0; k < samples; ++k) {
    const double t = samples == 1 ? 0.0 : horizon * k / (samples - 1);
    for_each_index(shape, [&](std::span<const int> idx) {
      for (std::size_t a = 0; a < n; ++a) {
        x[a] = system.domain[a].lo + system.domain[a].width() * idx[a] / (grid.points[a] - 1);
      }
      system.drift_at(x, t, f);
      for (double v : f) fmax = std::max(fmax, std::abs(v));
    });
  }
  double dt = horizon;
  for (std::size_t a = 0; a < n; ++a) {
    const double h = system.domain[a].width() / (grid.points[a] - 1);
    const double denom = system.sigma[a] * system.sigma[a] + fmax * h;
    if (denom > 0.0) dt = std::min(dt, h * h / denom);
  }
  return dt;
}

GridSolution solve_pde(const SystemSpec& system, const PdeGrid& grid, double horizon) {
  return system.dims() == 1 ? solve_1d(system, grid, horizon) : solve_2d(system, grid, horizon);
}

ArrayFile to_array_file(const GridSolution& g) {
  ArrayFile f;
  f.kind = "grid";
  for (std::size_t a = 0; a < g.points.size(); ++a) f.axes.push_back({g.points[a], 1, g.domain[a]});
  f.axes.push_back({static_cast<int>(g.times.size()), 1, {g.times.front(), g.times.back()}});
  f.values = g.values;
  return f;
}

GridSolution from_array_file(const ArrayFile& file, ProblemKind kind) {
  if (file.kind != "grid" || file.axes.size() < 2) {
    throw Error(ErrorKind::Io, "expected a grid array file");
  }
  GridSolution g;
  g.kind = kind;
  for (std::size_t a = 0; a + 1 < file.axes.size(); ++a) {
    g.points.push_back(file.axes[a].count);
    g.domain.push_back(file.axes[a].domain);
  }
  const auto& ta = file.axes.back();
  for (int k = 0; k < ta.count; ++k) {
    g.times.push_back(ta.count == 1 ? ta.domain.lo
                                    : ta.domain.lo + ta.domain.width() * k / (ta.count - 1));
  }
  g.values = file.values;
  return g;
}

std::vector<LaplacianMode> laplacian_modes(const Eigen::MatrixXd& laplacian) {
  if (laplacian.rows() != laplacian.cols() || laplacian.rows() == 0) {
    throw Error(ErrorKind::InvalidSpec, "Laplacian must be a nonempty square matrix");
  }
  const double scale = std::max(1.0, laplacian.cwiseAbs().maxCoeff());
  if ((laplacian - laplacian.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorKind::InvalidSpec, "Laplacian must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(laplacian);
  if (eig.info() != Eigen::Success) {
    throw Error(ErrorKind::Numerical, "eigendecomposition did not converge");
  }
  std::vector<LaplacianMode> modes;
  for (Eigen::Index k = 0; k < laplacian.rows(); ++k) {
    LaplacianMode m;
    m.lambda = eig.eigenvalues()(k);
    m.vector = eig.eigenvectors().col(k);
    for (Eigen::Index i = 0; i < m.vector.size(); ++i) {
      if (std::abs(m.vector(i)) > 1e-12) {
        if (m.vector(i) < 0.0) m.vector = -m.vector;
        break;
      }
    }
    modes.push_back(std::move(m));
  }
  return modes;
}

void MultiAgentSpec::validate() const {
  const int n = agents();
  if (n == 0 || laplacian.cols() != n) throw Error(ErrorKind::InvalidSpec, "Laplacian must be square");
  if ((laplacian - laplacian.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error(ErrorKind::InvalidSpec, "Laplacian must be symmetric");
  }
  for (int i = 0; i < n; ++i) {
    if (std::abs(laplacian.row(i).sum()) > 1e-12) {
      throw Error(ErrorKind::InvalidSpec, "Laplacian rows must sum to zero");
    }
  }
  if (!(beta1 > 0.0) || !(beta2 > 0.0)) throw Error(ErrorKind::InvalidSpec, "beta1, beta2 must be > 0");
  if (static_cast<int>(alpha.size()) != n) throw Error(ErrorKind::InvalidSpec, "need one alpha per mode");
  for (double a : alpha) {
    if (!(a > 0.0)) throw Error(ErrorKind::InvalidSpec, "alpha must be > 0");
  }
}

Eigen::MatrixXd case_study_laplacian() {
  Eigen::MatrixXd l(7, 7);
  l << 5, -1, -1, -1, -1, -1, 0,
      -1, 3, 0, -1, 0, 0, -1,
      -1, 0, 2, 0, -1, 0, 0,
      -1, -1, 0, 4, -1, -1, 0,
      -1, 0, -1, -1, 4, -1, 0,
      -1, 0, 0, -1, -1, 3, 0,
      0, -1, 0, 0, 0, 0, 1;
  return l;
}

MultiAgentSpec case_study_network(double beta2, std::vector<double> alpha) {
  MultiAgentSpec s;
  s.laplacian = case_study_laplacian();
  s.beta1 = 1.0;
  s.beta2 = beta2;
  s.sigma = 0.2;
  s.alpha = std::move(alpha);
  return s;
}

Eigen::MatrixXd assemble_H(const MultiAgentSpec& spec) {
  spec.validate();
  const int n = spec.agents();
  Eigen::Matrix2d a;
  a << 0, 1, -spec.beta1, -spec.beta2;
  Eigen::Matrix2d bc;
  bc << 0, 0, 1, 0;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      Eigen::Matrix2d block = -spec.laplacian(k, i) * bc;
      if (k == i) block += a;
      h.block<2, 2>(2 * k, 2 * i) = block;
    }
  }
  return h;
}

SystemSpec full_network_system(const MultiAgentSpec& spec) {
  const Eigen::MatrixXd h = assemble_H(spec);
  const auto modes = laplacian_modes(spec.laplacian);
  const int n = spec.agents();
  SystemSpec s;
  s.drift = LinearDrift{h};
  s.sigma.assign(2 * n, spec.sigma);
  s.projection = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      s.projection(2 * k, 2 * i) = modes[k].vector(i);
      s.projection(2 * k + 1, 2 * i + 1) = modes[k].vector(i);
    }
    s.safe_box.push_back({-spec.alpha[k], spec.alpha[k]});
    s.safe_box.push_back({-spec.alpha[k], spec.alpha[k]});
  }
  // x = (T kron I2) z, so |x_(i,c)| <= sum_k |T_ik| alpha_k bounds the safe set.
  for (int i = 0; i < n; ++i) {
    double r = 0.0;
    for (int k = 0; k < n; ++k) r += std::abs(modes[k].vector(i)) * spec.alpha[k];
    s.domain.push_back({-r, r});
    s.domain.push_back({-r, r});
  }
  s.kind = ProblemKind::Safety;
  return s;
}

std::array<double, 2> project_mode(const LaplacianMode& mode, std::span<const double> x) {
  if (x.size() != 2 * static_cast<std::size_t>(mode.vector.size())) {
    throw Error(ErrorKind::Configuration, "state dimension does not match the network");
  }
  std::array<double, 2> z{0.0, 0.0};
  for (Eigen::Index i = 0; i < mode.vector.size(); ++i) {
    z[0] += mode.vector(i) * x[2 * i];
    z[1] += mode.vector(i) * x[2 * i + 1];
  }
  return z;
}

GridSolution solve_subsystem_pde(double gamma, double beta2, double sigma, double alpha,
                                 const PdeGrid& grid, double horizon) {
  return solve_pde(mode_safety_system(gamma, beta2, sigma, alpha), grid, horizon);
}

double product_safety(std::span<const GridSolution> mode_solutions,
                      std::span<const LaplacianMode> modes, std::span<const double> x, double t) {
  if (mode_solutions.size() != modes.size()) {
    throw Error(ErrorKind::Configuration, "one solution per mode is required");
  }
  double p = 1.0;
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const auto z = project_mode(modes[k], x);
    const auto& g = mode_solutions[k];
    for (std::size_t a = 0; a < 2; ++a) {
      if (!g.domain[a].contains(z[a])) return 0.0;
    }
    p *= g.interpolate(z, t);
    if (p == 0.0) return 0.0;
  }
  return p;
}

}  // namespace neso
