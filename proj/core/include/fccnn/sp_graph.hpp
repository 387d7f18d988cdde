#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fccnn/tensor.hpp"

namespace fccnn::sp {

/// Input image: C x H x W intensities in [0, 1]. H, W >= 8.
using ImagePlane = Tensor;

/// Throws InvalidArgument unless `image` is at least 8x8, has one or more
/// channels and holds only finite values.
void validate_image(const ImagePlane& image);

/// Pixel-to-region partition. Region ids are dense in [0, region_count).
struct SuperpixelMap {
  int height = 0;
  int width = 0;
  int region_count = 0;
  std::vector<std::int32_t> labels;  // row-major, height * width

  std::int32_t at(int y, int x) const noexcept { return labels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const SuperpixelMap&, const SuperpixelMap&) = default;
};

/// Checks the partition invariants: dense ids, nonempty regions, each region
/// 4-connected. Throws InvalidArgument naming the first violation.
void validate_map(const SuperpixelMap& map);

enum class PairAxis : std::uint8_t { Horizontal, Vertical };

/// A 4-adjacent pixel pair: (y, x) and its right (Horizontal) or lower
/// (Vertical) neighbour. Indexes the pixel affinity maps directly.
struct PixelPair {
  int y = 0;
  int x = 0;
  PairAxis axis = PairAxis::Horizontal;

  int other_y() const noexcept { return axis == PairAxis::Vertical ? y + 1 : y; }
  int other_x() const noexcept { return axis == PairAxis::Horizontal ? x + 1 : x; }

  friend bool operator==(const PixelPair&, const PixelPair&) = default;
};

/// Undirected region adjacency with p < q and the pixel pairs that straddle it.
struct RegionEdge {
  int p = 0;
  int q = 0;
  std::vector<PixelPair> boundary;
};

struct SuperpixelGraph {
  int height = 0;
  int width = 0;
  int region_count = 0;
  std::vector<int> region_sizes;
  std::vector<RegionEdge> edges;  // sorted by (p, q)

  /// Index into `edges` for the pair (p, q) in either order, or -1.
  int find_edge(int p, int q) const noexcept;
};

struct SlicOptions {
  double compactness = 10.0;
  int iterations = 10;
};

/// SLIC oversegmentation followed by connectivity enforcement. Orphan
/// fragments are absorbed into the largest adjacent region; ids are then
/// renumbered densely in raster order of first appearance.
///
/// Requires 2 <= target_regions <= pixel_count / 4. Deterministic.
SuperpixelMap oversegment(const ImagePlane& image, int target_regions, const SlicOptions& options = {});

SuperpixelGraph build_graph(const SuperpixelMap& map);

/// Binary format: "FCSP", u32 version, u32 H, u32 W, u32 N, then H*W
/// little-endian int32 ids in row-major order.
void write_map(const SuperpixelMap& map, const std::filesystem::path& path);
SuperpixelMap read_map(const std::filesystem::path& path);

/// Indexed-colour rendering: each region gets a deterministic palette colour.
Tensor render_regions(const SuperpixelMap& map);

/// Copy of `image` (grey images promoted to RGB) with region boundaries in red.
Tensor render_boundaries(const ImagePlane& image, const SuperpixelMap& map);

}  // namespace fccnn::sp
