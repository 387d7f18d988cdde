#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fccnn::gradcheck {

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central difference (f(x + h) - f(x - h)) / 2h of a scalar function of
/// one coordinate, restoring the coordinate afterwards.
double central_difference(double& coordinate, const std::function<double()>& loss, double step = 1e-5);

struct CheckResult {
  std::string name;
  double max_error = 0.0;  // relative or absolute, see `metric`
  double threshold = 0.0;
  std::string metric = "rel";
  bool passed = false;
  std::string detail;
};

struct SuiteOptions {
  std::uint64_t seed = 7;
  double primitive_tolerance = 1e-4;
  double pipeline_tolerance = 1e-3;
  double step = 1e-5;
  int pipeline_probes = 30;
  int network_probes = 20;
};

/// Every finite-difference and oracle check over the primitive layers, the
/// pooling layers, the CRF layer and the whole pipeline at float64 on small
/// seeded instances (H, W <= 16, N <= 12, K = 3).
std::vector<CheckResult> run_suite(const SuiteOptions& options = {});

bool all_passed(std::span<const CheckResult> results) noexcept;

/// One line per check: "PASS|FAIL name max_<metric>_err=... threshold=... detail".
std::string format_results(std::span<const CheckResult> results);

/// Solves a dense row-major n x n system by Gaussian elimination with
/// partial pivoting. Independent of the sparse Gauss-Seidel path.
std::vector<double> dense_solve(std::vector<double> matrix, std::vector<double> rhs, int n);

}  // namespace fccnn::gradcheck
