#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fccnn/fault.hpp"
#include "fccnn/gradcheck.hpp"

using namespace fccnn;
using namespace fccnn::gradcheck;

namespace {

std::vector<std::string> failing(const std::vector<CheckResult>& results) {
  std::vector<std::string> names;
  for (const auto& r : results)
    if (!r.passed) names.push_back(r.name);
  return names;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

TEST(RelativeError, FloorAndSymmetry) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1.0, 2.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-9), 1e-3);
  EXPECT_EQ(relative_error(0.0, 0.0, 0.0), 0.0);
}

TEST(CentralDifference, QuadraticIsExactAndCoordinateRestored) {
  double x = 1.5;
  const double d = central_difference(x, [&] { return 3 * x * x; });
  EXPECT_NEAR(d, 9.0, 1e-8);
  EXPECT_EQ(x, 1.5);
}

TEST(DenseSolve, SolvesAndRejectsSingular) {
  const std::vector<double> a{0, 2, 1, 1};  // needs pivoting
  const std::vector<double> x = dense_solve(a, {4, 3}, 2);
  EXPECT_NEAR(x[0], 1.0, 1e-15);
  EXPECT_NEAR(x[1], 2.0, 1e-15);
  EXPECT_THROW(dense_solve({1, 1, 1, 1}, {1, 1}, 2), std::invalid_argument);
}

TEST(Suite, CleanBuildPasses) {
  const auto results = run_suite();
  EXPECT_TRUE(all_passed(results)) << format_results(results);
  std::vector<std::string> names;
  for (const auto& r : results) names.push_back(r.name);
  for (const char* required : {"conv2d", "maxpool2x2", "unpool2x2", "relu", "softplus", "bilinear_upsample",
                               "softmax_xent", "pool_unary", "pool_pairwise", "ccrf_backward_zs", "ccrf_backward_phi",
                               "ccrf_backward_w", "hand_worked_n2", "pipeline"}) {
    EXPECT_TRUE(contains(names, required)) << required;
  }
}

TEST(Suite, FlipPhiSignIsCaught) {
  const fault::ScopedMutation m(fault::Mutation::FlipPhiSign);
  const auto bad = failing(run_suite());
  EXPECT_TRUE(contains(bad, "ccrf_backward_phi"));
  EXPECT_TRUE(contains(bad, "pipeline"));
}

TEST(Suite, FlipWSignIsCaught) {
  const fault::ScopedMutation m(fault::Mutation::FlipWSign);
  const auto bad = failing(run_suite());
  EXPECT_TRUE(contains(bad, "ccrf_backward_w"));
  EXPECT_FALSE(contains(bad, "ccrf_backward_phi"));
}

TEST(Suite, DroppedBoundaryFactorIsCaught) {
  const fault::ScopedMutation m(fault::Mutation::DropBoundaryFactor);
  const auto bad = failing(run_suite());
  EXPECT_TRUE(contains(bad, "pool_pairwise"));
  EXPECT_FALSE(contains(bad, "pool_unary"));
}

TEST(Suite, MutationGuardRestores) {
  {
    const fault::ScopedMutation m(fault::Mutation::FlipWSign);
    EXPECT_EQ(fault::active(), fault::Mutation::FlipWSign);
  }
  EXPECT_EQ(fault::active(), fault::Mutation::None);
  EXPECT_EQ(fault::parse("drop_boundary_factor"), fault::Mutation::DropBoundaryFactor);
  EXPECT_FALSE(fault::parse("bogus").has_value());
}

TEST(Format, OneLinePerCheck) {
  CheckResult ok{"a", 1e-9, 1e-4, "rel", true, ""};
  CheckResult bad{"b", 0.5, 1e-4, "rel", false, ""};
  const std::vector<CheckResult> rs{ok, bad};
  const std::string s = format_results(rs);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 2);
  EXPECT_EQ(s.rfind("PASS a", 0), 0u);
  EXPECT_NE(s.find("FAIL b"), std::string::npos);
  EXPECT_FALSE(all_passed(rs));
}
