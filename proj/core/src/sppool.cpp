#include "fccnn/sppool.hpp"

#include <fstream>
#include <iomanip>
#include <string>

#include "fccnn/error.hpp"
#include "fccnn/fault.hpp"

namespace fccnn::pool {

namespace {

void check_extent(int h, int w, const sp::SuperpixelMap& map, const char* what) {
  if (h != map.height || w != map.width) {
    throw InvalidArgument(std::string(what) + ": field is " + std::to_string(h) + "x" + std::to_string(w) +
                          " but superpixel map is " + std::to_string(map.height) + "x" + std::to_string(map.width));
  }
}

void check_affinity_extent(const net::PixelAffinity& wp, const sp::SuperpixelGraph& graph) {
  if (wp.horizontal.channels() != 1 || wp.vertical.channels() != 1 || wp.horizontal.height() != graph.height ||
      wp.horizontal.width() != graph.width - 1 || wp.vertical.height() != graph.height - 1 ||
      wp.vertical.width() != graph.width) {
    throw InvalidArgument("pool_pairwise: affinity maps " + wp.horizontal.shape_string() + " / " +
                          wp.vertical.shape_string() + " do not match a " + std::to_string(graph.height) + "x" +
                          std::to_string(graph.width) + " graph");
  }
}

double pair_value(const net::PixelAffinity& wp, const sp::PixelPair& pair) {
  return pair.axis == sp::PairAxis::Horizontal ? wp.horizontal(0, pair.y, pair.x) : wp.vertical(0, pair.y, pair.x);
}

double& pair_value(net::PixelAffinity& wp, const sp::PixelPair& pair) {
  return pair.axis == sp::PairAxis::Horizontal ? wp.horizontal(0, pair.y, pair.x) : wp.vertical(0, pair.y, pair.x);
}

}  // namespace

RegionAffinity zero_affinity(const sp::SuperpixelGraph& graph) {
  RegionAffinity w;
  w.regions = graph.region_count;
  w.edges.reserve(graph.edges.size());
  for (const auto& e : graph.edges) w.edges.emplace_back(e.p, e.q);
  w.weights.assign(graph.edges.size(), 0.0);
  return w;
}

RegionFeatures pool_unary(const net::FeatureField& z, const sp::SuperpixelMap& map) {
  check_extent(z.height(), z.width(), map, "pool_unary");
  RegionFeatures zs(map.region_count, z.channels());
  std::vector<int> sizes(map.region_count, 0);
  for (int id : map.labels) ++sizes[id];
  for (int c = 0; c < z.channels(); ++c) {
    const auto plane = z.channel(c);
    for (std::size_t i = 0; i < plane.size(); ++i) zs.at(map.labels[i], c) += plane[i];
  }
  for (int p = 0; p < map.region_count; ++p) {
    for (int c = 0; c < z.channels(); ++c) zs.at(p, c) /= sizes[p];
  }
  return zs;
}

net::FeatureField pool_unary_backward(const RegionFeatures& grad_zs, const sp::SuperpixelMap& map,
                                      UnaryBackwardMode mode) {
  if (grad_zs.regions != map.region_count) {
    throw InvalidArgument("pool_unary_backward: gradient has " + std::to_string(grad_zs.regions) + " regions, map has " +
                          std::to_string(map.region_count));
  }
  std::vector<double> scale(map.region_count, 1.0);
  if (mode == UnaryBackwardMode::Adjoint) {
    std::vector<int> sizes(map.region_count, 0);
    for (int id : map.labels) ++sizes[id];
    for (int p = 0; p < map.region_count; ++p) scale[p] = 1.0 / sizes[p];
  }
  net::FeatureField grad(grad_zs.channels, map.height, map.width);
  for (int c = 0; c < grad_zs.channels; ++c) {
    auto plane = grad.channel(c);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      const int p = map.labels[i];
      plane[i] = grad_zs.at(p, c) * scale[p];
    }
  }
  return grad;
}

RegionAffinity pool_pairwise(const net::PixelAffinity& wp, const sp::SuperpixelGraph& graph) {
  check_affinity_extent(wp, graph);
  RegionAffinity w = zero_affinity(graph);
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const auto& boundary = graph.edges[e].boundary;
    double sum = 0.0;
    for (const auto& pair : boundary) sum += pair_value(wp, pair);
    w.weights[e] = sum / static_cast<double>(boundary.size());
  }
  return w;
}

net::PixelAffinity pool_pairwise_backward(const std::vector<double>& grad_w, const sp::SuperpixelGraph& graph) {
  if (grad_w.size() != graph.edges.size()) {
    throw InvalidArgument("pool_pairwise_backward: " + std::to_string(grad_w.size()) + " edge gradients for " +
                          std::to_string(graph.edges.size()) + " edges");
  }
  const bool drop_factor = fault::active() == fault::Mutation::DropBoundaryFactor;
  net::PixelAffinity grad = net::make_affinity(graph.height, graph.width);
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const auto& boundary = graph.edges[e].boundary;
    const double share = drop_factor ? grad_w[e] : grad_w[e] / static_cast<double>(boundary.size());
    for (const auto& pair : boundary) pair_value(grad, pair) += share;
  }
  return grad;
}

net::FeatureField broadcast_to_pixels(const RegionFeatures& zc, const sp::SuperpixelMap& map) {
  if (zc.regions != map.region_count) {
    throw InvalidArgument("broadcast_to_pixels: " + std::to_string(zc.regions) + " regions for a map with " +
                          std::to_string(map.region_count));
  }
  net::FeatureField out(zc.channels, map.height, map.width);
  for (int c = 0; c < zc.channels; ++c) {
    auto plane = out.channel(c);
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = zc.at(map.labels[i], c);
  }
  return out;
}

RegionFeatures broadcast_backward(const net::FeatureField& grad_pixels, const sp::SuperpixelMap& map) {
  check_extent(grad_pixels.height(), grad_pixels.width(), map, "broadcast_backward");
  RegionFeatures g(map.region_count, grad_pixels.channels());
  for (int c = 0; c < grad_pixels.channels(); ++c) {
    const auto plane = grad_pixels.channel(c);
    for (std::size_t i = 0; i < plane.size(); ++i) g.at(map.labels[i], c) += plane[i];
  }
  return g;
}

void write_edge_list(const RegionAffinity& w, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (std::size_t e = 0; e < w.edges.size(); ++e) {
    out << w.edges[e].first << ' ' << w.edges[e].second << ' ' << w.weights[e] << '\n';
  }
}

}  // namespace fccnn::pool
