#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "fccnn/featnet.hpp"
#include "fccnn/sp_graph.hpp"

namespace fccnn::pool {

/// Region-level features: N x C, row-major.
struct RegionFeatures {
  int regions = 0;
  int channels = 0;
  std::vector<double> values;

  RegionFeatures() = default;
  RegionFeatures(int n, int c, double fill = 0.0)
      : regions(n), channels(c), values(static_cast<std::size_t>(n) * c, fill) {}

  double& at(int p, int c) noexcept { return values[static_cast<std::size_t>(p) * channels + c]; }
  double at(int p, int c) const noexcept { return values[static_cast<std::size_t>(p) * channels + c]; }

  friend bool operator==(const RegionFeatures&, const RegionFeatures&) = default;
};

/// Symmetric superpixel affinity with support exactly the graph's edges:
/// weights[e] is W_pq = W_qp for edges[e] = (p, q), p < q.
struct RegionAffinity {
  int regions = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<double> weights;
};

/// Zero-weight affinity on the graph's support.
RegionAffinity zero_affinity(const sp::SuperpixelGraph& graph);

/// Z_s(p, c): mean of Z(c, i) over the pixels i of region p.
RegionFeatures pool_unary(const net::FeatureField& z, const sp::SuperpixelMap& map);

enum class UnaryBackwardMode {
  Adjoint,   // dL/dZ(i) = dL/dZ_s(p) / |S_p|, the exact adjoint of the mean
  Unscaled,  // dL/dZ(i) = dL/dZ_s(p), the rule without the averaging factor
};

net::FeatureField pool_unary_backward(const RegionFeatures& grad_zs, const sp::SuperpixelMap& map,
                                      UnaryBackwardMode mode = UnaryBackwardMode::Adjoint);

/// W_pq: mean pixel affinity over the boundary pairs of edge (p, q).
RegionAffinity pool_pairwise(const net::PixelAffinity& wp, const sp::SuperpixelGraph& graph);

/// Scatters dL/dW_pq / |B_pq| onto every boundary pair of (p, q); pairs
/// interior to a region get zero. `grad_w` is aligned with graph.edges.
net::PixelAffinity pool_pairwise_backward(const std::vector<double>& grad_w, const sp::SuperpixelGraph& graph);

/// Copies Z_c(p, :) to every pixel of region p (C x H x W).
net::FeatureField broadcast_to_pixels(const RegionFeatures& zc, const sp::SuperpixelMap& map);

/// Adjoint of broadcast_to_pixels: per-region sums of the pixel gradient.
RegionFeatures broadcast_backward(const net::FeatureField& grad_pixels, const sp::SuperpixelMap& map);

/// One "p q w" line per edge.
void write_edge_list(const RegionAffinity& w, const std::filesystem::path& path);

}  // namespace fccnn::pool
