#pragma once

#include <span>
#include <vector>

#include "fccnn/sppool.hpp"

namespace fccnn::crf {

struct SolverConfig {
  double tolerance = 1e-8;  // on ||Ax - b|| / ||b||
  int max_sweeps = 500;
};

/// Sparse symmetric A = Phi + lambda I with Phi = D - W, D_pp = sum_q W_pq.
/// Off-diagonals are -W_pq on the region adjacency only.
class CrfSystem {
 public:
  int size() const noexcept { return static_cast<int>(diagonal_.size()); }
  double lambda() const noexcept { return lambda_; }
  const SolverConfig& solver() const noexcept { return solver_; }
  const pool::RegionAffinity& affinity() const noexcept { return affinity_; }

  /// A_pp = D_pp + lambda.
  const std::vector<double>& diagonal() const noexcept { return diagonal_; }

  struct Neighbour {
    int column;
    double weight;  // W_pq, so A_pq = -weight
  };
  std::span<const Neighbour> row(int p) const noexcept {
    return std::span<const Neighbour>(neighbours_).subspan(row_start_[p], row_start_[p + 1] - row_start_[p]);
  }

  /// y = A x.
  void multiply(std::span<const double> x, std::span<double> y) const;
  /// y = Phi x (no lambda term).
  void multiply_laplacian(std::span<const double> x, std::span<double> y) const;
  bool strictly_diagonally_dominant() const noexcept;

 private:
  friend CrfSystem assemble_system(const pool::RegionAffinity& w, double lambda, const SolverConfig& solver);

  double lambda_ = 1.0;
  SolverConfig solver_;
  pool::RegionAffinity affinity_;
  std::vector<double> diagonal_;
  std::vector<int> row_start_;
  std::vector<Neighbour> neighbours_;
};

/// Throws InvalidArgument if lambda <= 0, any weight is negative or
/// non-finite, or an edge index is out of range.
CrfSystem assemble_system(const pool::RegionAffinity& w, double lambda, const SolverConfig& solver = {});

struct SolveResult {
  std::vector<double> x;
  double residual = 0.0;  // relative
  int sweeps = 0;
  bool converged = false;
  std::vector<double> residual_history;  // after each sweep; [0] is the start
};

/// Forward Gauss-Seidel in ascending node order from x0 until the relative
/// residual reaches the system tolerance or the sweep limit. Non-convergence
/// is reported through `converged`, never thrown.
SolveResult gauss_seidel_solve(const CrfSystem& system, std::span<const double> b, std::span<const double> x0);

struct CrfOutput {
  pool::RegionFeatures zc;
  std::vector<double> residuals;
  std::vector<int> sweeps;
};

/// Z_c[:, c] = A^{-1} Z_s[:, c] per channel, warm-started at Z_s.
/// Throws SolverError naming the channel if a solve does not converge.
CrfOutput ccrf_forward(const pool::RegionFeatures& zs, const CrfSystem& system);

/// sum_c 1/2 z_c' A z_c - z_c' z_s + 1/2 z_s' z_s. Minimised by ccrf_forward.
double energy(const pool::RegionFeatures& zc, const pool::RegionFeatures& zs, const CrfSystem& system);

/// dL/dZ_s = A^{-1} dL/dZ_c (A is symmetric).
CrfOutput ccrf_backward_zs(const pool::RegionFeatures& grad_zc, const CrfSystem& system);

/// dL/dPhi = -(dL/dZ_s) (x) Z_c restricted to the diagonal and the edge
/// support. upper[e] is entry (p, q) and lower[e] entry (q, p) of edge e.
struct PhiGradient {
  std::vector<double> diagonal;
  std::vector<double> upper;
  std::vector<double> lower;
};

PhiGradient ccrf_backward_phi(const pool::RegionFeatures& grad_zs, const pool::RegionFeatures& zc,
                              const CrfSystem& system);

/// One shared parameter per undirected edge: raising W_pq raises Phi_pp and
/// Phi_qq and lowers Phi_pq and Phi_qp.
std::vector<double> ccrf_backward_w(const PhiGradient& grad_phi, const CrfSystem& system);

}  // namespace fccnn::crf
