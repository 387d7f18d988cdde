#include "fccnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "fccnn/ccrf.hpp"
#include "fccnn/error.hpp"
#include "fccnn/evalio.hpp"
#include "fccnn/featnet.hpp"
#include "fccnn/pipeline.hpp"
#include "fccnn/sp_graph.hpp"
#include "fccnn/sppool.hpp"

namespace fccnn::gradcheck {

namespace {

using Rng = std::mt19937_64;

// Solves in the checks run far below the training tolerance so that solver
// truncation does not leak into the finite differences.
constexpr crf::SolverConfig kTightSolver{1e-14, 20000};

double uniform(Rng& rng, double lo = -1.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Tensor random_tensor(Rng& rng, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  Tensor t(c, h, w);
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, lo, hi);
  return v;
}

pool::RegionFeatures random_features(Rng& rng, int n, int c) {
  pool::RegionFeatures f(n, c);
  for (double& v : f.values) v = uniform(rng);
  return f;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Accumulates the worst error of a check.
class Tracker {
 public:
  Tracker(std::string name, double threshold, double floor = 1e-6, std::string metric = "rel")
      : floor_(floor) {
    result_.name = std::move(name);
    result_.threshold = threshold;
    result_.metric = std::move(metric);
  }

  void compare(double analytic, double numeric) {
    const double e = result_.metric == "abs" ? std::abs(analytic - numeric) : relative_error(analytic, numeric, floor_);
    if (!(e <= worst_)) worst_ = e;  // NaN sticks
    ++count_;
  }

  void fail(const std::string& why) {
    failed_ = true;
    result_.detail = why;
  }

  CheckResult finish() {
    result_.max_error = worst_;
    result_.passed = !failed_ && count_ > 0 && worst_ <= result_.threshold;
    if (result_.detail.empty()) result_.detail = std::to_string(count_) + " comparisons";
    return result_;
  }

 private:
  CheckResult result_;
  double floor_;
  double worst_ = 0.0;
  int count_ = 0;
  bool failed_ = false;
};

template <typename Fn>
CheckResult guarded(const std::string& name, double threshold, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    CheckResult r;
    r.name = name;
    r.threshold = threshold;
    r.max_error = std::numeric_limits<double>::infinity();
    r.detail = std::string("exception: ") + e.what();
    return r;
  }
}

// Checks dL/dx for L = <G, f(x)> at every coordinate of x.
void check_all(Tracker& t, std::span<double> x, std::span<const double> analytic, const std::function<double()>& loss,
               double step) {
  for (std::size_t i = 0; i < x.size(); ++i) t.compare(analytic[i], central_difference(x[i], loss, step));
}

CheckResult check_conv(Rng& rng, const SuiteOptions& o) {
  Tracker t("conv2d", o.primitive_tolerance);
  const net::ConvGeometry geoms[] = {
      {3, 2, 3, 3, 1, 1, 1, net::Padding::Zero},
      {3, 2, 3, 3, 1, 1, 1, net::Padding::Replicate},
      {2, 2, 3, 3, 2, 1, 1, net::Padding::Zero},
      {1, 2, 1, 2, 1, 0, 0, net::Padding::Zero},
      {1, 2, 2, 1, 1, 0, 0, net::Padding::Zero},
  };
  for (const auto& g : geoms) {
    Tensor x = random_tensor(rng, g.in_channels, 5, 5);
    std::vector<double> w = random_vector(rng, g.filter_size());
    std::vector<double> b = random_vector(rng, g.out_channels);
    const Tensor y = net::conv2d(x, w, b, g);
    const Tensor gout = random_tensor(rng, y.channels(), y.height(), y.width());
    const net::ConvGrads grads = net::conv2d_backward(x, w, g, gout);
    const auto loss = [&] { return inner_product(gout, net::conv2d(x, w, b, g)); };
    check_all(t, x.data(), grads.input.data(), loss, o.step);
    check_all(t, w, grads.filters, loss, o.step);
    check_all(t, b, grads.bias, loss, o.step);
  }
  return t.finish();
}

CheckResult check_pooling_layers(Rng& rng, const SuiteOptions& o, bool unpool) {
  Tracker t(unpool ? "unpool2x2" : "maxpool2x2", o.primitive_tolerance);
  Tensor x = random_tensor(rng, 2, 6, 4);
  if (!unpool) {
    const net::PoolResult r = net::maxpool2x2(x);
    const Tensor g = random_tensor(rng, 2, 3, 2);
    const Tensor analytic = net::maxpool2x2_backward(g, r.indices);
    check_all(t, x.data(), analytic.data(), [&] { return inner_product(g, net::maxpool2x2(x).output); }, o.step);
  } else {
    const net::PoolIndices idx = net::maxpool2x2(x).indices;
    Tensor small = random_tensor(rng, 2, 3, 2);
    const Tensor g = random_tensor(rng, 2, 6, 4);
    const Tensor analytic = net::unpool2x2_backward(g, idx);
    check_all(t, small.data(), analytic.data(), [&] { return inner_product(g, net::unpool2x2(small, idx, 6, 4)); },
              o.step);
  }
  return t.finish();
}

CheckResult check_elementwise(Rng& rng, const SuiteOptions& o, const std::string& name) {
  Tracker t(name, o.primitive_tolerance);
  Tensor x = random_tensor(rng, 2, 4, 4, -3.0, 3.0);
  if (name == "relu") {
    for (double& v : x.data()) {
      if (std::abs(v) < 0.1) v = 0.5;  // keep finite differences off the kink
    }
  }
  const Tensor g = random_tensor(rng, 2, 4, 4);
  if (name == "relu") {
    check_all(t, x.data(), net::relu_backward(x, g).data(), [&] { return inner_product(g, net::relu(x)); }, o.step);
  } else {
    check_all(t, x.data(), net::softplus_backward(x, g).data(), [&] { return inner_product(g, net::softplus(x)); },
              o.step);
  }
  return t.finish();
}

CheckResult check_bilinear(Rng& rng, const SuiteOptions& o) {
  Tracker t("bilinear_upsample", o.primitive_tolerance);
  for (int factor : {2, 4}) {
    Tensor x = random_tensor(rng, 2, 3, 4);
    const Tensor g = random_tensor(rng, 2, 3 * factor, 4 * factor);
    const Tensor analytic = net::bilinear_upsample_backward(g, factor);
    check_all(t, x.data(), analytic.data(), [&] { return inner_product(g, net::bilinear_upsample(x, factor)); },
              o.step);
  }
  return t.finish();
}

struct SmallScene {
  Tensor image;
  eval::LabelMap labels;
  sp::SuperpixelMap map;
  sp::SuperpixelGraph graph;
};

SmallScene make_scene(Rng& rng) {
  SmallScene s;
  eval::ToyFace face = eval::generate_toy_face(rng, 16);
  s.image = std::move(face.image);
  s.labels = std::move(face.labels);
  // Connectivity enforcement can add regions; keep N within 12.
  for (int target = 8; target > 1; --target) {
    s.map = sp::oversegment(s.image, target);
    if (s.map.region_count <= 12) break;
  }
  s.graph = sp::build_graph(s.map);
  return s;
}

CheckResult check_pool_unary(Rng& rng, const SuiteOptions& o, const SmallScene& s) {
  Tracker t("pool_unary", o.primitive_tolerance);
  Tensor z = random_tensor(rng, 3, 16, 16);
  const pool::RegionFeatures g = random_features(rng, s.map.region_count, 3);
  const Tensor analytic = pool::pool_unary_backward(g, s.map);
  check_all(t, z.data(), analytic.data(), [&] { return dot(g.values, pool::pool_unary(z, s.map).values); }, o.step);
  return t.finish();
}

CheckResult check_pool_pairwise(Rng& rng, const SuiteOptions& o, const SmallScene& s) {
  Tracker t("pool_pairwise", o.primitive_tolerance);
  net::PixelAffinity wp{random_tensor(rng, 1, 16, 15, 0.0, 2.0), random_tensor(rng, 1, 15, 16, 0.0, 2.0)};
  const std::vector<double> g = random_vector(rng, s.graph.edges.size());
  const net::PixelAffinity analytic = pool::pool_pairwise_backward(g, s.graph);
  const auto loss = [&] { return dot(g, pool::pool_pairwise(wp, s.graph).weights); };
  check_all(t, wp.horizontal.data(), analytic.horizontal.data(), loss, o.step);
  check_all(t, wp.vertical.data(), analytic.vertical.data(), loss, o.step);
  return t.finish();
}

pool::RegionAffinity random_affinity(Rng& rng, const sp::SuperpixelGraph& graph) {
  pool::RegionAffinity w = pool::zero_affinity(graph);
  for (double& v : w.weights) v = uniform(rng, 0.0, 1.0);
  return w;
}

CheckResult check_ccrf_zs(Rng& rng, const SuiteOptions& o, const SmallScene& s) {
  Tracker t("ccrf_backward_zs", o.primitive_tolerance);
  const crf::CrfSystem sys = crf::assemble_system(random_affinity(rng, s.graph), 1.0, kTightSolver);
  pool::RegionFeatures zs = random_features(rng, sys.size(), 3);
  const pool::RegionFeatures g = random_features(rng, sys.size(), 3);
  const pool::RegionFeatures analytic = crf::ccrf_backward_zs(g, sys).zc;
  check_all(t, zs.values, analytic.values, [&] { return dot(g.values, crf::ccrf_forward(zs, sys).zc.values); },
            o.step);
  return t.finish();
}

// L(A) = <G, A^{-1} Z_s> evaluated densely, so every entry of A (including
// ones that break symmetry) can be perturbed on its own.
CheckResult check_ccrf_phi(Rng& rng, const SuiteOptions& o, const SmallScene& s) {
  Tracker t("ccrf_backward_phi", o.primitive_tolerance);
  const crf::CrfSystem sys = crf::assemble_system(random_affinity(rng, s.graph), 1.0, kTightSolver);
  const int n = sys.size();
  const int channels = 3;
  const pool::RegionFeatures zs = random_features(rng, n, channels);
  const pool::RegionFeatures g = random_features(rng, n, channels);

  std::vector<double> dense(static_cast<std::size_t>(n) * n, 0.0);
  for (int p = 0; p < n; ++p) {
    dense[static_cast<std::size_t>(p) * n + p] = sys.diagonal()[p];
    for (const auto& nb : sys.row(p)) dense[static_cast<std::size_t>(p) * n + nb.column] = -nb.weight;
  }
  const auto loss = [&] {
    double l = 0.0;
    for (int c = 0; c < channels; ++c) {
      std::vector<double> b(n);
      for (int p = 0; p < n; ++p) b[p] = zs.at(p, c);
      const std::vector<double> x = dense_solve(dense, b, n);
      for (int p = 0; p < n; ++p) l += g.at(p, c) * x[p];
    }
    return l;
  };

  const pool::RegionFeatures zc = crf::ccrf_forward(zs, sys).zc;
  const pool::RegionFeatures grad_zs = crf::ccrf_backward_zs(g, sys).zc;
  const crf::PhiGradient analytic = crf::ccrf_backward_phi(grad_zs, zc, sys);
  for (int p = 0; p < n; ++p) {
    t.compare(analytic.diagonal[p], central_difference(dense[static_cast<std::size_t>(p) * n + p], loss, o.step));
  }
  const auto& edges = sys.affinity().edges;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [p, q] = edges[e];
    t.compare(analytic.upper[e], central_difference(dense[static_cast<std::size_t>(p) * n + q], loss, o.step));
    t.compare(analytic.lower[e], central_difference(dense[static_cast<std::size_t>(q) * n + p], loss, o.step));
  }
  return t.finish();
}

CheckResult check_ccrf_w(Rng& rng, const SuiteOptions& o, const SmallScene& s) {
  Tracker t("ccrf_backward_w", o.primitive_tolerance);
  pool::RegionAffinity w = random_affinity(rng, s.graph);
  const pool::RegionFeatures zs = random_features(rng, s.graph.region_count, 3);
  const pool::RegionFeatures g = random_features(rng, s.graph.region_count, 3);
  const auto loss = [&] {
    const crf::CrfSystem sys = crf::assemble_system(w, 1.0, kTightSolver);
    return dot(g.values, crf::ccrf_forward(zs, sys).zc.values);
  };
  const crf::CrfSystem sys = crf::assemble_system(w, 1.0, kTightSolver);
  const pool::RegionFeatures zc = crf::ccrf_forward(zs, sys).zc;
  const pool::RegionFeatures grad_zs = crf::ccrf_backward_zs(g, sys).zc;
  const std::vector<double> analytic = crf::ccrf_backward_w(crf::ccrf_backward_phi(grad_zs, zc, sys), sys);
  check_all(t, w.weights, analytic, loss, o.step);
  return t.finish();
}

CheckResult check_softmax(Rng& rng, const SuiteOptions& o) {
  Tracker t("softmax_xent", o.primitive_tolerance);
  Tensor logits = random_tensor(rng, 3, 4, 4, -3.0, 3.0);
  eval::LabelMap labels(4, 4);
  for (auto& v : labels.labels) v = static_cast<std::uint8_t>(rng() % 3);
  const pipeline::LossAndGrad lg = pipeline::softmax_xent(logits, labels);
  check_all(t, logits.data(), lg.grad.data(), [&] { return pipeline::softmax_xent(logits, labels).loss; }, o.step);
  return t.finish();
}

// Picks probe coordinates: one from every eligible block, then uniformly.
std::vector<std::pair<std::size_t, std::size_t>> pick_probes(Rng& rng, const net::NetParams& params, int count,
                                                             const std::function<bool(const net::ParamBlock&)>& keep) {
  std::vector<std::size_t> eligible;
  for (std::size_t b = 0; b < params.blocks().size(); ++b) {
    if (keep(params.blocks()[b])) eligible.push_back(b);
  }
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t b : eligible) {
    if (static_cast<int>(probes.size()) >= count) break;
    probes.emplace_back(b, rng() % params.blocks()[b].values.size());
  }
  while (static_cast<int>(probes.size()) < count && !eligible.empty()) {
    const std::size_t b = eligible[rng() % eligible.size()];
    probes.emplace_back(b, rng() % params.blocks()[b].values.size());
  }
  return probes;
}

net::ArchConfig small_arch() { return net::ArchConfig{}; }

void perturb_biases(Rng& rng, net::NetParams& params) {
  // Nonzero biases keep ReLUs off their kinks and exercise bias gradients.
  for (auto& b : params.blocks()) {
    if (b.shape.size() == 1) {
      for (double& v : b.values) v = uniform(rng, -0.1, 0.1);
    }
  }
}

CheckResult check_network(Rng& rng, const SuiteOptions& o, const SmallScene& s, bool unary) {
  Tracker t(unary ? "unary_network" : "pairwise_network", o.pipeline_tolerance);
  net::NetParams params = net::NetParams::initialize(small_arch(), rng());
  perturb_biases(rng, params);
  net::NetParams grads = params.zeros_like();
  const net::NetForward f = net::forward(s.image, params, unary, !unary);
  const Tensor gz = unary ? random_tensor(rng, f.z.channels(), 16, 16) : Tensor();
  const net::PixelAffinity gwp = unary ? net::PixelAffinity{}
                                       : net::PixelAffinity{random_tensor(rng, 1, 16, 15), random_tensor(rng, 1, 15, 16)};
  if (unary) {
    net::unary_backward(f.cache, params, gz, grads);
  } else {
    net::pairwise_backward(f.cache, params, gwp, grads);
  }
  const auto loss = [&] {
    const net::NetForward ff = net::forward(s.image, params, unary, !unary);
    return unary ? inner_product(gz, ff.z)
                 : inner_product(gwp.horizontal, ff.wp.horizontal) + inner_product(gwp.vertical, ff.wp.vertical);
  };
  const auto probes = pick_probes(rng, params, o.network_probes, [&](const net::ParamBlock& b) {
    return b.branch == net::Branch::Shared || b.branch == (unary ? net::Branch::Unary : net::Branch::Pairwise);
  });
  for (const auto& [b, i] : probes) {
    t.compare(grads.blocks()[b].values[i], central_difference(params.blocks()[b].values[i], loss, o.step));
  }
  return t.finish();
}

CheckResult check_pipeline(Rng& rng, const SuiteOptions& o, const SmallScene& s) {
  Tracker t("pipeline", o.pipeline_tolerance);
  net::NetParams params = net::NetParams::initialize(small_arch(), rng());
  perturb_biases(rng, params);
  pipeline::ModelConfig model;
  model.solver = kTightSolver;
  const pipeline::ForwardResult fr = pipeline::forward(s.image, &s.labels, params, s.map, s.graph, model);
  const net::NetParams grads = pipeline::backward(fr.cache, params);
  const auto loss = [&] { return *pipeline::forward(s.image, &s.labels, params, s.map, s.graph, model).loss; };
  const auto probes = pick_probes(rng, params, o.pipeline_probes, [](const net::ParamBlock&) { return true; });
  for (const auto& [b, i] : probes) {
    t.compare(grads.blocks()[b].values[i], central_difference(params.blocks()[b].values[i], loss, o.step));
  }
  return t.finish();
}

CheckResult check_hand_example() {
  Tracker t("hand_worked_n2", 1e-12, 0.0, "abs");
  pool::RegionAffinity w;
  w.regions = 2;
  w.edges = {{0, 1}};
  w.weights = {1.0};
  const crf::CrfSystem sys = crf::assemble_system(w, 1.0, kTightSolver);
  pool::RegionFeatures zs(2, 1);
  zs.values = {3.0, 0.0};
  const pool::RegionFeatures zc = crf::ccrf_forward(zs, sys).zc;
  t.compare(zc.values[0], 2.0);
  t.compare(zc.values[1], 1.0);
  pool::RegionFeatures gzc(2, 1);
  gzc.values = {1.0, 0.0};
  const pool::RegionFeatures gzs = crf::ccrf_backward_zs(gzc, sys).zc;
  t.compare(gzs.values[0], 2.0 / 3.0);
  t.compare(gzs.values[1], 1.0 / 3.0);
  const crf::PhiGradient gphi = crf::ccrf_backward_phi(gzs, zc, sys);
  t.compare(gphi.diagonal[0], -4.0 / 3.0);
  t.compare(gphi.upper[0], -2.0 / 3.0);
  t.compare(gphi.lower[0], -2.0 / 3.0);
  t.compare(gphi.diagonal[1], -1.0 / 3.0);
  const std::vector<double> gw = crf::ccrf_backward_w(gphi, sys);
  t.compare(gw[0], -1.0 / 3.0);
  return t.finish();
}

CheckResult check_solver_oracle(Rng& rng) {
  Tracker t("gauss_seidel_vs_dense", 1e-6, 0.0, "abs");
  // Random planar-like graph: a jittered grid with some diagonals.
  const int side = 7;
  const int n = side * side;
  pool::RegionAffinity w;
  w.regions = n;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const int p = y * side + x;
      if (x + 1 < side) w.edges.emplace_back(p, p + 1);
      if (y + 1 < side) w.edges.emplace_back(p, p + side);
      if (x + 1 < side && y + 1 < side && rng() % 2) w.edges.emplace_back(p, p + side + 1);
    }
  }
  for (std::size_t e = 0; e < w.edges.size(); ++e) w.weights.push_back(uniform(rng, 0.0, 1.0));
  const crf::CrfSystem sys = crf::assemble_system(w, 1.0);
  const std::vector<double> b = random_vector(rng, n);
  const crf::SolveResult r = crf::gauss_seidel_solve(sys, b, std::vector<double>(n, 0.0));
  if (!r.converged) t.fail("Gauss-Seidel did not converge");
  std::vector<double> dense(static_cast<std::size_t>(n) * n, 0.0);
  for (int p = 0; p < n; ++p) {
    dense[static_cast<std::size_t>(p) * n + p] = sys.diagonal()[p];
    for (const auto& nb : sys.row(p)) dense[static_cast<std::size_t>(p) * n + nb.column] = -nb.weight;
  }
  const std::vector<double> x = dense_solve(dense, b, n);
  for (int p = 0; p < n; ++p) t.compare(r.x[p], x[p]);
  return t.finish();
}

CheckResult check_adjoints(Rng& rng, const SmallScene& s) {
  Tracker t("pooling_adjoints", 1e-12, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor z = random_tensor(rng, 3, 16, 16);
    const pool::RegionFeatures g = random_features(rng, s.map.region_count, 3);
    t.compare(dot(pool::pool_unary(z, s.map).values, g.values), inner_product(z, pool::pool_unary_backward(g, s.map)));

    const net::PixelAffinity wp{random_tensor(rng, 1, 16, 15), random_tensor(rng, 1, 15, 16)};
    const std::vector<double> gw = random_vector(rng, s.graph.edges.size());
    const net::PixelAffinity back = pool::pool_pairwise_backward(gw, s.graph);
    t.compare(dot(pool::pool_pairwise(wp, s.graph).weights, gw),
              inner_product(wp.horizontal, back.horizontal) + inner_product(wp.vertical, back.vertical));

    const Tensor pix = random_tensor(rng, 3, 16, 16);
    t.compare(inner_product(pool::broadcast_to_pixels(g, s.map), pix),
              dot(g.values, pool::broadcast_backward(pix, s.map).values));
  }
  return t.finish();
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  if (denom == 0.0) return 0.0;
  return std::abs(analytic - numeric) / denom;
}

double central_difference(double& coordinate, const std::function<double()>& loss, double step) {
  const double saved = coordinate;
  coordinate = saved + step;
  const double plus = loss();
  coordinate = saved - step;
  const double minus = loss();
  coordinate = saved;
  return (plus - minus) / (2.0 * step);
}

std::vector<double> dense_solve(std::vector<double> a, std::vector<double> b, int n) {
  if (a.size() != static_cast<std::size_t>(n) * n || b.size() != static_cast<std::size_t>(n)) {
    throw InvalidArgument("dense_solve: size mismatch");
  }
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a[static_cast<std::size_t>(r) * n + col]) > std::abs(a[static_cast<std::size_t>(pivot) * n + col])) {
        pivot = r;
      }
    }
    if (a[static_cast<std::size_t>(pivot) * n + col] == 0.0) throw InvalidArgument("dense_solve: singular matrix");
    if (pivot != col) {
      for (int k = 0; k < n; ++k) std::swap(a[static_cast<std::size_t>(pivot) * n + k], a[static_cast<std::size_t>(col) * n + k]);
      std::swap(b[pivot], b[col]);
    }
    const double d = a[static_cast<std::size_t>(col) * n + col];
    for (int r = col + 1; r < n; ++r) {
      const double f = a[static_cast<std::size_t>(r) * n + col] / d;
      if (f == 0.0) continue;
      for (int k = col; k < n; ++k) a[static_cast<std::size_t>(r) * n + k] -= f * a[static_cast<std::size_t>(col) * n + k];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int k = r + 1; k < n; ++k) s -= a[static_cast<std::size_t>(r) * n + k] * x[k];
    x[r] = s / a[static_cast<std::size_t>(r) * n + r];
  }
  return x;
}

std::vector<CheckResult> run_suite(const SuiteOptions& o) {
  Rng rng(o.seed);
  std::vector<CheckResult> out;
  const double prim = o.primitive_tolerance;
  out.push_back(guarded("conv2d", prim, [&] { return check_conv(rng, o); }));
  out.push_back(guarded("maxpool2x2", prim, [&] { return check_pooling_layers(rng, o, false); }));
  out.push_back(guarded("unpool2x2", prim, [&] { return check_pooling_layers(rng, o, true); }));
  out.push_back(guarded("relu", prim, [&] { return check_elementwise(rng, o, "relu"); }));
  out.push_back(guarded("softplus", prim, [&] { return check_elementwise(rng, o, "softplus"); }));
  out.push_back(guarded("bilinear_upsample", prim, [&] { return check_bilinear(rng, o); }));
  out.push_back(guarded("softmax_xent", prim, [&] { return check_softmax(rng, o); }));

  SmallScene scene;
  try {
    scene = make_scene(rng);
  } catch (const std::exception& e) {
    CheckResult r;
    r.name = "scene";
    r.detail = std::string("could not build the 16x16 test scene: ") + e.what();
    out.push_back(r);
    return out;
  }
  out.push_back(guarded("pool_unary", prim, [&] { return check_pool_unary(rng, o, scene); }));
  out.push_back(guarded("pool_pairwise", prim, [&] { return check_pool_pairwise(rng, o, scene); }));
  out.push_back(guarded("pooling_adjoints", 1e-12, [&] { return check_adjoints(rng, scene); }));
  out.push_back(guarded("ccrf_backward_zs", prim, [&] { return check_ccrf_zs(rng, o, scene); }));
  out.push_back(guarded("ccrf_backward_phi", prim, [&] { return check_ccrf_phi(rng, o, scene); }));
  out.push_back(guarded("ccrf_backward_w", prim, [&] { return check_ccrf_w(rng, o, scene); }));
  out.push_back(guarded("hand_worked_n2", 1e-12, [&] { return check_hand_example(); }));
  out.push_back(guarded("gauss_seidel_vs_dense", 1e-6, [&] { return check_solver_oracle(rng); }));
  out.push_back(guarded("unary_network", o.pipeline_tolerance, [&] { return check_network(rng, o, scene, true); }));
  out.push_back(guarded("pairwise_network", o.pipeline_tolerance, [&] { return check_network(rng, o, scene, false); }));
  out.push_back(guarded("pipeline", o.pipeline_tolerance, [&] { return check_pipeline(rng, o, scene); }));
  return out;
}

bool all_passed(std::span<const CheckResult> results) noexcept {
  return !results.empty() && std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

std::string format_results(std::span<const CheckResult> results) {
  std::ostringstream os;
  for (const auto& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(24) << r.name << " max_" << r.metric
       << "_err=" << std::scientific << std::setprecision(3) << r.max_error << " threshold=" << r.threshold
       << std::defaultfloat << "  " << r.detail << '\n';
  }
  return os.str();
}

}  // namespace fccnn::gradcheck
