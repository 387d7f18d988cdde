#include "fccnn/ccrf.hpp"

#include <cmath>
#include <string>

#include "fccnn/error.hpp"
#include "fccnn/fault.hpp"

namespace fccnn::crf {

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double relative_residual(const CrfSystem& system, std::span<const double> x, std::span<const double> b,
                         double b_norm, std::vector<double>& scratch) {
  system.multiply(x, scratch);
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double r = scratch[i] - b[i];
    s += r * r;
  }
  return std::sqrt(s) / b_norm;
}

void check_features(const pool::RegionFeatures& f, const CrfSystem& system, const char* what) {
  if (f.regions != system.size()) {
    throw InvalidArgument(std::string(what) + ": " + std::to_string(f.regions) + " regions for a system of size " +
                          std::to_string(system.size()));
  }
}

CrfOutput solve_channels(const pool::RegionFeatures& rhs, const CrfSystem& system, const char* what) {
  const int n = rhs.regions;
  CrfOutput out;
  out.zc = pool::RegionFeatures(n, rhs.channels);
  std::vector<double> b(n);
  for (int c = 0; c < rhs.channels; ++c) {
    for (int p = 0; p < n; ++p) b[p] = rhs.at(p, c);
    SolveResult r = gauss_seidel_solve(system, b, b);
    if (!r.converged) {
      throw SolverError(std::string(what) + ": Gauss-Seidel did not converge on channel " + std::to_string(c) +
                        " (relative residual " + std::to_string(r.residual) + " after " + std::to_string(r.sweeps) +
                        " sweeps)");
    }
    for (int p = 0; p < n; ++p) out.zc.at(p, c) = r.x[p];
    out.residuals.push_back(r.residual);
    out.sweeps.push_back(r.sweeps);
  }
  return out;
}

}  // namespace

CrfSystem assemble_system(const pool::RegionAffinity& w, double lambda, const SolverConfig& solver) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw InvalidArgument("assemble_system: lambda must be positive, got " + std::to_string(lambda));
  }
  if (solver.max_sweeps < 1 || !(solver.tolerance > 0.0)) {
    throw InvalidArgument("assemble_system: solver needs a positive tolerance and sweep limit");
  }
  if (w.edges.size() != w.weights.size()) throw InvalidArgument("assemble_system: edge/weight count mismatch");
  const int n = w.regions;
  if (n < 1) throw InvalidArgument("assemble_system: empty affinity");

  CrfSystem sys;
  sys.lambda_ = lambda;
  sys.solver_ = solver;
  sys.affinity_ = w;
  sys.diagonal_.assign(n, lambda);
  std::vector<int> degree(n, 0);
  for (std::size_t e = 0; e < w.edges.size(); ++e) {
    const auto [p, q] = w.edges[e];
    const double v = w.weights[e];
    if (p < 0 || q < 0 || p >= n || q >= n || p == q) {
      throw InvalidArgument("assemble_system: invalid edge (" + std::to_string(p) + ", " + std::to_string(q) + ")");
    }
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("assemble_system: W_" + std::to_string(p) + "," + std::to_string(q) + " = " +
                            std::to_string(v) + " is not a finite non-negative weight");
    }
    sys.diagonal_[p] += v;
    sys.diagonal_[q] += v;
    ++degree[p];
    ++degree[q];
  }
  sys.row_start_.assign(n + 1, 0);
  for (int p = 0; p < n; ++p) sys.row_start_[p + 1] = sys.row_start_[p] + degree[p];
  sys.neighbours_.resize(sys.row_start_[n]);
  std::vector<int> fill(sys.row_start_.begin(), sys.row_start_.end() - 1);
  for (std::size_t e = 0; e < w.edges.size(); ++e) {
    const auto [p, q] = w.edges[e];
    sys.neighbours_[fill[p]++] = {q, w.weights[e]};
    sys.neighbours_[fill[q]++] = {p, w.weights[e]};
  }
  return sys;
}

void CrfSystem::multiply(std::span<const double> x, std::span<double> y) const {
  for (int p = 0; p < size(); ++p) {
    double acc = diagonal_[p] * x[p];
    for (const auto& nb : row(p)) acc -= nb.weight * x[nb.column];
    y[p] = acc;
  }
}

void CrfSystem::multiply_laplacian(std::span<const double> x, std::span<double> y) const {
  for (int p = 0; p < size(); ++p) {
    double acc = 0.0;
    for (const auto& nb : row(p)) acc += nb.weight * (x[p] - x[nb.column]);
    y[p] = acc;
  }
}

bool CrfSystem::strictly_diagonally_dominant() const noexcept {
  for (int p = 0; p < size(); ++p) {
    double off = 0.0;
    for (const auto& nb : row(p)) off += std::abs(nb.weight);
    if (!(diagonal_[p] > off)) return false;
  }
  return true;
}

SolveResult gauss_seidel_solve(const CrfSystem& system, std::span<const double> b, std::span<const double> x0) {
  const int n = system.size();
  if (b.size() != static_cast<std::size_t>(n) || x0.size() != static_cast<std::size_t>(n)) {
    throw InvalidArgument("gauss_seidel_solve: vector length does not match system size " + std::to_string(n));
  }
  SolveResult r;
  const double b_norm = norm2(b);
  if (b_norm == 0.0) {
    r.x.assign(n, 0.0);
    r.converged = true;
    r.residual_history.push_back(0.0);
    return r;
  }
  r.x.assign(x0.begin(), x0.end());
  std::vector<double> scratch(n);
  const auto& diag = system.diagonal();
  const SolverConfig& cfg = system.solver();

  r.residual = relative_residual(system, r.x, b, b_norm, scratch);
  r.residual_history.push_back(r.residual);
  while (r.residual > cfg.tolerance && r.sweeps < cfg.max_sweeps) {
    for (int p = 0; p < n; ++p) {
      double acc = b[p];
      for (const auto& nb : system.row(p)) acc += nb.weight * r.x[nb.column];
      r.x[p] = acc / diag[p];
    }
    ++r.sweeps;
    r.residual = relative_residual(system, r.x, b, b_norm, scratch);
    r.residual_history.push_back(r.residual);
  }
  r.converged = r.residual <= cfg.tolerance;
  return r;
}

CrfOutput ccrf_forward(const pool::RegionFeatures& zs, const CrfSystem& system) {
  check_features(zs, system, "ccrf_forward");
  return solve_channels(zs, system, "ccrf_forward");
}

double energy(const pool::RegionFeatures& zc, const pool::RegionFeatures& zs, const CrfSystem& system) {
  check_features(zc, system, "energy");
  check_features(zs, system, "energy");
  if (zc.channels != zs.channels) throw InvalidArgument("energy: channel count mismatch");
  const int n = system.size();
  std::vector<double> x(n);
  std::vector<double> ax(n);
  double e = 0.0;
  for (int c = 0; c < zc.channels; ++c) {
    for (int p = 0; p < n; ++p) x[p] = zc.at(p, c);
    system.multiply(x, ax);
    for (int p = 0; p < n; ++p) {
      const double s = zs.at(p, c);
      e += 0.5 * x[p] * ax[p] - x[p] * s + 0.5 * s * s;
    }
  }
  return e;
}

CrfOutput ccrf_backward_zs(const pool::RegionFeatures& grad_zc, const CrfSystem& system) {
  check_features(grad_zc, system, "ccrf_backward_zs");
  return solve_channels(grad_zc, system, "ccrf_backward_zs");
}

PhiGradient ccrf_backward_phi(const pool::RegionFeatures& grad_zs, const pool::RegionFeatures& zc,
                              const CrfSystem& system) {
  check_features(grad_zs, system, "ccrf_backward_phi");
  check_features(zc, system, "ccrf_backward_phi");
  if (grad_zs.channels != zc.channels) throw InvalidArgument("ccrf_backward_phi: channel count mismatch");
  const double sign = fault::active() == fault::Mutation::FlipPhiSign ? 1.0 : -1.0;
  const auto outer = [&](int p, int q) {
    double s = 0.0;
    for (int c = 0; c < zc.channels; ++c) s += grad_zs.at(p, c) * zc.at(q, c);
    return sign * s;
  };
  const auto& edges = system.affinity().edges;
  PhiGradient g;
  g.diagonal.resize(system.size());
  for (int p = 0; p < system.size(); ++p) g.diagonal[p] = outer(p, p);
  g.upper.resize(edges.size());
  g.lower.resize(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    g.upper[e] = outer(edges[e].first, edges[e].second);
    g.lower[e] = outer(edges[e].second, edges[e].first);
  }
  return g;
}

std::vector<double> ccrf_backward_w(const PhiGradient& grad_phi, const CrfSystem& system) {
  const auto& edges = system.affinity().edges;
  if (grad_phi.upper.size() != edges.size() || grad_phi.lower.size() != edges.size() ||
      grad_phi.diagonal.size() != static_cast<std::size_t>(system.size())) {
    throw InvalidArgument("ccrf_backward_w: gradient support does not match the system");
  }
  const double sign = fault::active() == fault::Mutation::FlipWSign ? -1.0 : 1.0;
  std::vector<double> g(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [p, q] = edges[e];
    g[e] = sign * (grad_phi.diagonal[p] + grad_phi.diagonal[q] - grad_phi.upper[e] - grad_phi.lower[e]);
  }
  return g;
}

}  // namespace fccnn::crf
