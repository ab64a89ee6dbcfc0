#pragma once

// Finite-difference reference solutions of dF/dt = f . grad F + 1/2 sum_k
// sigma_k^2 d2F/dx_k^2 with Dirichlet ICBC, plus the multi-agent modal
// decomposition built on top of them.

#include <Eigen/Dense>

#include <array>
#include <span>
#include <vector>

#include "neso/io.hpp"
#include "neso/spline_basis.hpp"
#include "neso/stochastic_oracle.hpp"
#include "neso/surrogate.hpp"

namespace neso {

struct PdeGrid {
  std::vector<int> points;  // nodes per state axis, boundary nodes included
  int time_slices = 100;    // stored slices are horizon * k / time_slices
  double dt = 0.0;          // upper bound on the step; 0 selects the default rule
};

/// Values on the node grid of `domain` at `times`; layout is row-major over
/// (state axes..., time) with time fastest, like a ControlTensor.
struct GridSolution {
  std::vector<Interval> domain;
  std::vector<int> points;
  std::vector<double> times;
  ProblemKind kind = ProblemKind::Safety;
  std::vector<double> values;
  double dt = 0.0;  // time step actually used

  std::vector<int> shape() const;
  double node(std::size_t axis, int i) const;
  double at(std::span<const int> index) const;
  /// Multilinear in space and linear in time; throws domain outside the grid.
  double interpolate(std::span<const double> x, double t) const;
};

/// Largest step allowed by dt <= h^2 / (sigma^2 + max|f| h) over all axes.
double default_time_step(const SystemSpec& system, const PdeGrid& grid, double horizon);

/// Crank-Nicolson in 1-D (tridiagonal solve per step), Peaceman-Rachford ADI
/// in 2-D. Convection is centred unless the cell Peclet number |f| h / D
/// exceeds 2, where it is upwinded to first order. Values are clipped to
/// [0, 1]; IC and face values follow system.icbc() with faces winning at
/// shared nodes.
GridSolution solve_pde(const SystemSpec& system, const PdeGrid& grid, double horizon);

ArrayFile to_array_file(const GridSolution& g);
GridSolution from_array_file(const ArrayFile& file, ProblemKind kind);

struct LaplacianMode {
  double lambda = 0.0;
  Eigen::VectorXd vector;
};

/// Ascending eigenpairs of a symmetric Laplacian; each eigenvector has its
/// first nonzero entry positive.
std::vector<LaplacianMode> laplacian_modes(const Eigen::MatrixXd& laplacian);

struct MultiAgentSpec {
  Eigen::MatrixXd laplacian;
  double beta1 = 1.0;
  double beta2 = 1.0;
  double sigma = 0.2;
  std::vector<double> alpha;  // one threshold per mode

  int agents() const { return static_cast<int>(laplacian.rows()); }
  void validate() const;
};

/// The 7-agent interaction network of the case study.
Eigen::MatrixXd case_study_laplacian();
MultiAgentSpec case_study_network(double beta2, std::vector<double> alpha);

/// H = I_N kron A - L kron (B C) with A = [[0, 1], [-beta1, -beta2]], BC = [[0, 0], [1, 0]].
Eigen::MatrixXd assemble_H(const MultiAgentSpec& spec);

/// Full 2N-dimensional linear SDE with the safe box on mode coordinates
/// (T^T kron I_2) x, |p_k|, |v_k| <= alpha_k.
SystemSpec full_network_system(const MultiAgentSpec& spec);

/// Projection onto mode k: (t_k^T kron I_2) x.
std::array<double, 2> project_mode(const LaplacianMode& mode, std::span<const double> x);

/// Mode PDE dF/dt = v F_p - (gamma p + beta2 v) F_v + sigma^2 / 2 lap F on
/// [-alpha, alpha]^2, IC 1 inside, 0 on the boundary.
GridSolution solve_subsystem_pde(double gamma, double beta2, double sigma, double alpha,
                                 const PdeGrid& grid, double horizon);

/// prod_k F_k((t_k^T kron I_2) x, t); 0 once any projection leaves its grid.
double product_safety(std::span<const GridSolution> modes_solutions,
                      std::span<const LaplacianMode> modes, std::span<const double> x, double t);

}  // namespace neso
