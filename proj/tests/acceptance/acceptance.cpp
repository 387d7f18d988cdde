// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Pass criterion names as arguments to run a subset.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fccnn/ccrf.hpp"
#include "fccnn/evalio.hpp"
#include "fccnn/fault.hpp"
#include "fccnn/gradcheck.hpp"
#include "fccnn/pipeline.hpp"
#include "fccnn/sp_graph.hpp"
#include "fccnn/sppool.hpp"
#include "fccnn_cli/cli.hpp"

using namespace fccnn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------- gradients

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const auto results = gradcheck::run_suite();
  const double secs = seconds_since(t0);
  std::cout << gradcheck::format_results(results);
  double worst_prim = 0, worst_pipe = 0;
  for (const auto& r : results) {
    if (r.metric != "rel") continue;
    (r.threshold < 1e-3 ? worst_prim : worst_pipe) = std::max(r.threshold < 1e-3 ? worst_prim : worst_pipe, r.max_error);
  }
  Verdict v;
  v.passed = gradcheck::all_passed(results) && secs <= 60.0;
  v.detail = std::to_string(results.size()) + " checks, worst primitive rel err " + fmt("%.2e", worst_prim) +
             " (<= 1e-4), worst network/pipeline rel err " + fmt("%.2e", worst_pipe) + " (<= 1e-3), " +
             fmt("%.2f", secs) + " s (<= 60 s)";
  return v;
}

// ----------------------------------------------------------------- solver

// Region adjacency of a discrete Voronoi partition of random seeds: a
// random planar graph with n nodes.
pool::RegionAffinity voronoi_affinity(std::mt19937_64& rng, int n) {
  const int side = std::max(16, static_cast<int>(std::ceil(std::sqrt(16.0 * n))));
  std::vector<std::pair<int, int>> seeds;
  std::vector<char> used(static_cast<std::size_t>(side) * side, 0);
  while (static_cast<int>(seeds.size()) < n) {
    const int y = static_cast<int>(rng() % side), x = static_cast<int>(rng() % side);
    if (used[y * side + x]) continue;
    used[y * side + x] = 1;
    seeds.emplace_back(y, x);
  }
  std::vector<int> owner(static_cast<std::size_t>(side) * side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      int best = 0;
      long best_d = -1;
      for (int s = 0; s < n; ++s) {
        const long dy = y - seeds[s].first, dx = x - seeds[s].second;
        const long d = dy * dy + dx * dx;
        if (best_d < 0 || d < best_d) {
          best_d = d;
          best = s;
        }
      }
      owner[y * side + x] = best;
    }
  std::vector<std::pair<int, int>> edges;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const int a = owner[y * side + x];
      if (x + 1 < side && owner[y * side + x + 1] != a)
        edges.emplace_back(std::min(a, owner[y * side + x + 1]), std::max(a, owner[y * side + x + 1]));
      if (y + 1 < side && owner[(y + 1) * side + x] != a)
        edges.emplace_back(std::min(a, owner[(y + 1) * side + x]), std::max(a, owner[(y + 1) * side + x]));
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  pool::RegionAffinity w;
  w.regions = n;
  w.edges = std::move(edges);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t e = 0; e < w.edges.size(); ++e) w.weights.push_back(u(rng));
  return w;
}

Eigen::MatrixXd dense_matrix(const crf::CrfSystem& s) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(s.size(), s.size());
  for (int p = 0; p < s.size(); ++p) {
    a(p, p) = s.diagonal()[p];
    for (const auto& nb : s.row(p)) a(p, nb.column) = -nb.weight;
  }
  return a;
}

Verdict solver_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  const int sizes[] = {5, 50, 200};
  const double lambdas[] = {0.1, 1.0, 10.0};
  double worst = 0;
  int increases = 0, unconverged = 0, systems = 0, max_sweeps = 0;
  for (int k = 0; k < 50; ++k) {
    const int n = sizes[k % 3];
    const double lambda = lambdas[(k / 3) % 3];
    const crf::CrfSystem sys = crf::assemble_system(voronoi_affinity(rng, n), lambda);
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) b[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
    const Eigen::VectorXd x = dense_matrix(sys).partialPivLu().solve(b);
    const crf::SolveResult r = crf::gauss_seidel_solve(sys, std::vector<double>(b.data(), b.data() + n),
                                                       std::vector<double>(n, 0.0));
    ++systems;
    if (!r.converged) ++unconverged;
    max_sweeps = std::max(max_sweeps, r.sweeps);
    for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(r.x[i] - x[i]));
    for (std::size_t s = 1; s < r.residual_history.size(); ++s) {
      if (r.residual_history[s] > r.residual_history[s - 1]) ++increases;
    }
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.passed = worst <= 1e-6 && increases == 0 && unconverged == 0 && secs <= 30.0;
  v.detail = std::to_string(systems) + " systems, max |x_gs - x_dense| " + fmt("%.2e", worst) +
             " (<= 1e-6), residual increases " + std::to_string(increases) + ", max sweeps " +
             std::to_string(max_sweeps) + ", " + fmt("%.2f", secs) + " s (<= 30 s)";
  return v;
}

// ------------------------------------------------------------- hand example

Verdict hand_example() {
  pool::RegionAffinity w;
  w.regions = 2;
  w.edges = {{0, 1}};
  w.weights = {1.0};
  // Exactness to 1e-12 needs a solver tolerance below that level.
  const crf::CrfSystem sys = crf::assemble_system(w, 1.0, crf::SolverConfig{1e-15, 1000});
  pool::RegionFeatures zs(2, 1), gzc(2, 1);
  zs.values = {3.0, 0.0};
  gzc.values = {1.0, 0.0};
  const auto zc = crf::ccrf_forward(zs, sys).zc;
  const auto gzs = crf::ccrf_backward_zs(gzc, sys).zc;
  const auto gphi = crf::ccrf_backward_phi(gzs, zc, sys);
  const auto gw = crf::ccrf_backward_w(gphi, sys);
  const std::vector<std::pair<double, double>> pairs{
      {zc.values[0], 2.0},           {zc.values[1], 1.0},         {gzs.values[0], 2.0 / 3.0},
      {gzs.values[1], 1.0 / 3.0},    {gphi.diagonal[0], -4.0 / 3}, {gphi.upper[0], -2.0 / 3},
      {gphi.lower[0], -2.0 / 3},     {gphi.diagonal[1], -1.0 / 3}, {gw[0], -1.0 / 3}};
  double worst = 0;
  for (const auto& [a, b] : pairs) worst = std::max(worst, std::abs(a - b));
  std::ostringstream os;
  os.precision(15);
  os << "Zc=[" << zc.values[0] << "," << zc.values[1] << "] dZs=[" << gzs.values[0] << "," << gzs.values[1]
     << "] dW01=" << gw[0] << ", max abs err " << fmt("%.2e", worst) << " (<= 1e-12)";
  return {worst <= 1e-12, os.str()};
}

// ------------------------------------------------------- identity/nullspace

Verdict identity_nullspace() {
  std::mt19937_64 rng(77);
  double worst_identity = 0, worst_constant = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 5 + static_cast<int>(rng() % 150);
    pool::RegionAffinity w = voronoi_affinity(rng, n);
    pool::RegionFeatures zs(n, 3);
    for (double& v : zs.values) v = std::uniform_real_distribution<double>(-5, 5)(rng);

    pool::RegionAffinity zero = w;
    std::fill(zero.weights.begin(), zero.weights.end(), 0.0);
    const auto id = crf::ccrf_forward(zs, crf::assemble_system(zero, 1.0)).zc;
    for (std::size_t i = 0; i < zs.values.size(); ++i)
      worst_identity = std::max(worst_identity, std::abs(id.values[i] - zs.values[i]));

    const double scale = trial % 3 == 0 ? 100.0 : 1.0;
    for (double& v : w.weights) v *= scale;
    pool::RegionFeatures constant(n, 3);
    for (int p = 0; p < n; ++p)
      for (int c = 0; c < 3; ++c) constant.at(p, c) = zs.at(0, c);
    const auto cz = crf::ccrf_forward(constant, crf::assemble_system(w, 1.0)).zc;
    for (std::size_t i = 0; i < cz.values.size(); ++i)
      worst_constant = std::max(worst_constant, std::abs(cz.values[i] - constant.values[i]));
  }
  return {worst_identity <= 1e-12 && worst_constant <= 1e-10,
          "30 graphs, W=0 max |Zc-Zs| " + fmt("%.2e", worst_identity) + " (<= 1e-12), region-constant max |Zc-Zs| " +
              fmt("%.2e", worst_constant) + " (<= 1e-10)"};
}

// --------------------------------------------------------------- pooling

Verdict pooling_oracles() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst_mean = 0, worst_unary = 0, worst_pair = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 16 + 8 * static_cast<int>(rng() % 3), w = 16 + 8 * static_cast<int>(rng() % 3);
    Tensor img(3, h, w);
    for (double& v : img.data()) v = (u(rng) + 1) / 2;
    const auto map = sp::oversegment(img, 4 + static_cast<int>(rng() % 30));
    const auto graph = sp::build_graph(map);
    const int n = map.region_count;

    Tensor z(3, h, w);
    for (double& v : z.data()) v = u(rng);
    const auto zs = pool::pool_unary(z, map);
    std::vector<double> sum(static_cast<std::size_t>(n) * 3, 0.0);
    std::vector<int> count(n, 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int p = map.at(y, x);
        ++count[p];
        for (int c = 0; c < 3; ++c) sum[p * 3 + c] += z(c, y, x);
      }
    for (int p = 0; p < n; ++p)
      for (int c = 0; c < 3; ++c) worst_mean = std::max(worst_mean, std::abs(zs.at(p, c) - sum[p * 3 + c] / count[p]));

    pool::RegionFeatures g(n, 3);
    for (double& v : g.values) v = u(rng);
    double lhs = 0;
    for (std::size_t i = 0; i < g.values.size(); ++i) lhs += zs.values[i] * g.values[i];
    worst_unary = std::max(worst_unary, std::abs(lhs - inner_product(z, pool::pool_unary_backward(g, map))));

    net::PixelAffinity wp{Tensor(1, h, w - 1), Tensor(1, h - 1, w)};
    for (double& v : wp.horizontal.data()) v = u(rng);
    for (double& v : wp.vertical.data()) v = u(rng);
    std::vector<double> gw(graph.edges.size());
    for (double& v : gw) v = u(rng);
    const auto wpool = pool::pool_pairwise(wp, graph);
    double lhs2 = 0;
    for (std::size_t e = 0; e < gw.size(); ++e) lhs2 += wpool.weights[e] * gw[e];
    const auto back = pool::pool_pairwise_backward(gw, graph);
    const double rhs2 = inner_product(wp.horizontal, back.horizontal) + inner_product(wp.vertical, back.vertical);
    worst_pair = std::max(worst_pair, std::abs(lhs2 - rhs2));
  }
  return {worst_mean <= 1e-12 && worst_unary <= 1e-12 && worst_pair <= 1e-12,
          "100 instances, brute-force mean err " + fmt("%.2e", worst_mean) + ", unary adjoint gap " +
              fmt("%.2e", worst_unary) + ", pairwise adjoint gap " + fmt("%.2e", worst_pair) + " (all <= 1e-12)"};
}

// ----------------------------------------------------- learning experiments

struct ToySplit {
  std::vector<pipeline::Example> train;
  std::vector<pipeline::Example> test;
  std::vector<pipeline::Example> noisy_test;
};

constexpr int kSuperpixels = 64;

pipeline::TrainConfig toy_config(bool pairwise) {
  pipeline::TrainConfig cfg;
  cfg.seed = 42;
  cfg.superpixels = kSuperpixels;
  cfg.epochs = 50;
  cfg.model.use_pairwise = pairwise;
  return cfg;
}

const ToySplit& toy_split() {
  static const ToySplit split = [] {
    ToySplit s;
    std::mt19937_64 rng(42);
    const pipeline::TrainConfig cfg = toy_config(true);
    for (int i = 0; i < 250; ++i) {
      eval::ToyFace f = eval::generate_toy_face(rng, 64);
      auto& dst = i < 200 ? s.train : s.test;
      dst.push_back(pipeline::prepare_example(f.image, f.labels, cfg.superpixels, cfg.compactness));
      if (i >= 200) {
        Tensor noisy = eval::augment_boundary_noise(f.image, f.labels, 1000 + i);
        s.noisy_test.push_back(
            pipeline::prepare_example(std::move(noisy), std::move(f.labels), cfg.superpixels, cfg.compactness));
      }
    }
    return s;
  }();
  return split;
}

struct TrainedModel {
  pipeline::TrainResult result;
  std::string log;
  double seconds = 0;
};

TrainedModel train_model(bool pairwise) {
  const auto t0 = Clock::now();
  TrainedModel m;
  m.result = pipeline::train(toy_split().train, toy_config(pairwise), [&](const pipeline::EpochMetrics& e, const auto&) {
    m.log += pipeline::format_metrics(e) + "\n";
  });
  m.seconds = seconds_since(t0);
  return m;
}

const TrainedModel& full_model() {
  static const TrainedModel m = train_model(true);
  return m;
}

const TrainedModel& unary_model() {
  static const TrainedModel m = train_model(false);
  return m;
}

std::string scores(const eval::EvalReport& r) {
  std::string s = "acc " + fmt("%.4f", r.overall_accuracy);
  for (int k = 0; k < r.classes(); ++k) {
    s += ", F-" + (k < static_cast<int>(r.class_names.size()) ? r.class_names[k] : std::to_string(k)) + " " +
         fmt("%.4f", r.per_class[k].f);
  }
  return s;
}

Verdict unary_baseline() {
  const TrainedModel& m = unary_model();
  const auto report = pipeline::evaluate_model(toy_split().test, m.result.params, toy_config(false).model,
                                               eval::toy_class_names());
  return {report.overall_accuracy >= 0.90,
          "unary-only model, test " + scores(report) + " (acc >= 0.90), " + fmt("%.0f", m.seconds) + " s"};
}

Verdict end_to_end() {
  const auto t0 = Clock::now();
  (void)toy_split();
  const double prep = seconds_since(t0);
  const TrainedModel& m = full_model();
  const auto t1 = Clock::now();
  const auto report =
      pipeline::evaluate_model(toy_split().test, m.result.params, toy_config(true).model, eval::toy_class_names());
  const double total = prep + m.seconds + seconds_since(t1);
  bool per_class = true;
  for (const auto& s : report.per_class) per_class &= s.f >= 0.85;
  return {report.overall_accuracy >= 0.95 && per_class && total <= 900.0,
          "200 train / 50 test, N=" + std::to_string(kSuperpixels) + ", 50 epochs, test " + scores(report) +
              " (acc >= 0.95, each F >= 0.85), " + fmt("%.0f", total) + " s (<= 900 s)"};
}

Verdict ablation() {
  const auto& noisy = toy_split().noisy_test;
  const auto full = pipeline::evaluate_model(noisy, full_model().result.params, toy_config(true).model,
                                             eval::toy_class_names());
  const auto unary = pipeline::evaluate_model(noisy, unary_model().result.params, toy_config(false).model,
                                              eval::toy_class_names());
  // Same weights as the full model with the pairwise path cut, for reference.
  const auto cut = pipeline::evaluate_model(noisy, full_model().result.params, toy_config(false).model,
                                            eval::toy_class_names());
  double w_sum = 0;
  std::size_t w_count = 0;
  for (const auto& ex : noisy) {
    const auto f = pipeline::forward(ex.image, nullptr, full_model().result.params, ex.map, ex.graph,
                                     toy_config(true).model);
    for (double v : f.cache.w.weights) w_sum += v;
    w_count += f.cache.w.weights.size();
  }
  return {full.mean_f() >= unary.mean_f(),
          "boundary-noise test set, mean F full " + fmt("%.4f", full.mean_f()) + " >= unary-only " +
              fmt("%.4f", unary.mean_f()) + " (full model with W=0: " + fmt("%.4f", cut.mean_f()) +
              ", mean learned W " + fmt("%.3g", w_sum / static_cast<double>(std::max<std::size_t>(w_count, 1))) + ")"};
}

Verdict determinism() {
  const TrainedModel again = train_model(true);
  const bool same = again.log == full_model().log;
  return {same && again.result.params == full_model().result.params,
          std::string("two 50-epoch runs, seed 42: metrics logs ") + (same ? "identical" : "DIFFER") + " (" +
              std::to_string(std::count(again.log.begin(), again.log.end(), '\n')) + " lines)"};
}

// -------------------------------------------------------------- mutations

Verdict mutation_sensitivity() {
  std::string detail;
  bool ok = true;
  for (const char* m : {"flip_phi_sign", "flip_w_sign", "drop_boundary_factor"}) {
    std::ostringstream out, err;
    const char* argv[] = {"fccnn", "gradcheck", "--mutation", m};
    const int code = cli::run(4, argv, out, err);
    ok &= code == cli::kCheckFailed;
    std::string failing = err.str();
    if (const auto pos = failing.find(':'); pos != std::string::npos) failing = failing.substr(pos + 1);
    while (!failing.empty() && (failing.back() == '\n')) failing.pop_back();
    detail += std::string(detail.empty() ? "" : "; ") + m + " -> exit " + std::to_string(code) + " [" + failing + " ]";
  }
  std::ostringstream out, err;
  const char* argv[] = {"fccnn", "gradcheck"};
  const int clean = cli::run(2, argv, out, err);
  ok &= clean == cli::kSuccess;
  return {ok, detail + "; unmutated -> exit " + std::to_string(clean)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient_suite", gradient_suite},
      {"solver_oracle", solver_oracle},
      {"hand_worked_n2", hand_example},
      {"crf_identity_nullspace", identity_nullspace},
      {"pooling_oracles", pooling_oracles},
      {"unary_baseline_learnable", unary_baseline},
      {"end_to_end_learning", end_to_end},
      {"crf_ablation_direction", ablation},
      {"determinism", determinism},
      {"mutation_sensitivity", mutation_sensitivity},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0, ran = 0;
  std::vector<std::string> lines;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    ++ran;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const std::string line = std::string(v.passed ? "PASS " : "FAIL ") + name + ": " + v.detail;
    std::cout << line << std::endl;
    lines.push_back(line);
    if (!v.passed) ++failures;
  }
  std::cout << "\n== acceptance summary ==\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << (ran - failures) << "/" << ran << " criteria passed\n";
  return failures == 0 && ran > 0 ? 0 : 1;
}
