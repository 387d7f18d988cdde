#include "fccnn/sp_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>

#include "fccnn/binary_io.hpp"
#include "fccnn/error.hpp"

namespace fccnn::sp {

namespace {

constexpr char kMapMagic[4] = {'F', 'C', 'S', 'P'};
constexpr std::uint32_t kMapVersion = 1;

// Intensities are in [0, 1]; SLIC's compactness scale assumes colour
// distances on a 0..100 range (as with CIELAB lightness).
constexpr double kColorScale = 100.0;

struct Center {
  double y = 0.0;
  double x = 0.0;
  std::vector<double> color;
};

double gradient_energy(const ImagePlane& image, int y, int x) {
  const int h = image.height();
  const int w = image.width();
  const int x0 = std::max(x - 1, 0);
  const int x1 = std::min(x + 1, w - 1);
  const int y0 = std::max(y - 1, 0);
  const int y1 = std::min(y + 1, h - 1);
  double g = 0.0;
  for (int c = 0; c < image.channels(); ++c) {
    const double dx = image(c, y, x1) - image(c, y, x0);
    const double dy = image(c, y1, x) - image(c, y0, x);
    g += dx * dx + dy * dy;
  }
  return g;
}

// Labels 4-connected components of `labels`. Returns the component id per
// pixel; components are numbered in raster order of their first pixel.
std::vector<int> connected_components(const std::vector<std::int32_t>& labels, int height, int width,
                                      int& component_count) {
  const std::size_t n = labels.size();
  std::vector<int> comp(n, -1);
  std::vector<std::size_t> stack;
  component_count = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    const int id = component_count++;
    comp[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      const int y = static_cast<int>(idx / width);
      const int x = static_cast<int>(idx % width);
      const auto visit = [&](int ny, int nx) {
        if (ny < 0 || ny >= height || nx < 0 || nx >= width) return;
        const std::size_t j = static_cast<std::size_t>(ny) * width + nx;
        if (comp[j] < 0 && labels[j] == labels[idx]) {
          comp[j] = id;
          stack.push_back(j);
        }
      };
      visit(y - 1, x);
      visit(y + 1, x);
      visit(y, x - 1);
      visit(y, x + 1);
    }
  }
  return comp;
}

std::vector<std::int32_t> relabel_dense(const std::vector<std::int32_t>& labels, int& count) {
  std::map<std::int32_t, std::int32_t> remap;
  std::vector<std::int32_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(labels[i], static_cast<std::int32_t>(remap.size()));
    out[i] = it->second;
  }
  count = static_cast<int>(remap.size());
  return out;
}

// Keeps the largest fragment of every cluster; every other fragment is merged
// into the largest region it touches, repeating until none are left.
std::vector<std::int32_t> enforce_connectivity(const std::vector<std::int32_t>& labels, int height,
                                               int width) {
  int ncomp = 0;
  const std::vector<int> comp = connected_components(labels, height, width, ncomp);

  std::vector<int> comp_size(ncomp, 0);
  std::vector<std::int32_t> comp_label(ncomp, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++comp_size[comp[i]];
    comp_label[comp[i]] = labels[i];
  }

  // Largest fragment per cluster label; ties go to the earliest component.
  std::map<std::int32_t, int> best;
  for (int c = 0; c < ncomp; ++c) {
    auto it = best.find(comp_label[c]);
    if (it == best.end() || comp_size[c] > comp_size[it->second]) best[comp_label[c]] = c;
  }

  // owner[c] = surviving component that fragment c now belongs to, or -1.
  std::vector<int> owner(ncomp, -1);
  std::vector<int> region_size(ncomp, 0);
  for (const auto& [label, c] : best) {
    owner[c] = c;
    region_size[c] = comp_size[c];
  }

  std::vector<std::vector<int>> neighbours(ncomp);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      if (x + 1 < width && comp[i] != comp[i + 1]) {
        neighbours[comp[i]].push_back(comp[i + 1]);
        neighbours[comp[i + 1]].push_back(comp[i]);
      }
      if (y + 1 < height && comp[i] != comp[i + width]) {
        neighbours[comp[i]].push_back(comp[i + width]);
        neighbours[comp[i + width]].push_back(comp[i]);
      }
    }
  }

  bool pending = true;
  while (pending) {
    pending = false;
    for (int c = 0; c < ncomp; ++c) {
      if (owner[c] >= 0) continue;
      int target = -1;
      for (int nb : neighbours[c]) {
        const int o = owner[nb];
        if (o < 0) continue;
        if (target < 0 || region_size[o] > region_size[target] ||
            (region_size[o] == region_size[target] && o < target)) {
          target = o;
        }
      }
      if (target < 0) {
        pending = true;
        continue;
      }
      owner[c] = target;
      region_size[target] += comp_size[c];
    }
  }

  std::vector<std::int32_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = owner[comp[i]];
  return out;
}

}  // namespace

void validate_image(const ImagePlane& image) {
  if (image.height() < 8 || image.width() < 8) {
    throw InvalidArgument("image must be at least 8x8, got " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()));
  }
  if (image.channels() < 1) throw InvalidArgument("image has no channels");
  if (!image.all_finite()) throw InvalidArgument("image contains non-finite values");
}

void validate_map(const SuperpixelMap& map) {
  if (map.height <= 0 || map.width <= 0) throw InvalidArgument("superpixel map has empty extent");
  if (map.labels.size() != static_cast<std::size_t>(map.height) * map.width) {
    throw InvalidArgument("superpixel map label count does not match its extent");
  }
  if (map.region_count <= 0) throw InvalidArgument("superpixel map has no regions");
  std::vector<int> seen(map.region_count, 0);
  for (std::int32_t id : map.labels) {
    if (id < 0 || id >= map.region_count) {
      throw InvalidArgument("region id " + std::to_string(id) + " outside [0, " +
                            std::to_string(map.region_count) + ")");
    }
    ++seen[id];
  }
  for (int p = 0; p < map.region_count; ++p) {
    if (seen[p] == 0) throw InvalidArgument("region " + std::to_string(p) + " is empty");
  }
  int ncomp = 0;
  connected_components(map.labels, map.height, map.width, ncomp);
  if (ncomp != map.region_count) {
    throw InvalidArgument("superpixel map has " + std::to_string(ncomp) + " connected components for " +
                          std::to_string(map.region_count) + " regions");
  }
}

int SuperpixelGraph::find_edge(int p, int q) const noexcept {
  if (p > q) std::swap(p, q);
  auto it = std::lower_bound(edges.begin(), edges.end(), std::pair{p, q},
                             [](const RegionEdge& e, const std::pair<int, int>& key) {
                               return std::pair{e.p, e.q} < key;
                             });
  if (it == edges.end() || it->p != p || it->q != q) return -1;
  return static_cast<int>(it - edges.begin());
}

SuperpixelMap oversegment(const ImagePlane& image, int target_regions, const SlicOptions& options) {
  validate_image(image);
  const int h = image.height();
  const int w = image.width();
  const int channels = image.channels();
  const std::size_t npix = static_cast<std::size_t>(h) * w;
  if (target_regions < 2) {
    throw InvalidArgument("target_regions must be at least 2, got " + std::to_string(target_regions));
  }
  if (static_cast<std::size_t>(target_regions) > npix / 4) {
    throw InvalidArgument("image of " + std::to_string(npix) + " pixels too small for " +
                          std::to_string(target_regions) + " regions");
  }
  if (!(options.compactness > 0.0) || options.iterations < 1) {
    throw InvalidArgument("SLIC needs positive compactness and at least one iteration");
  }

  // Seed grid with rows * cols ~= target, rows <= cols for square images.
  const int rows = std::max(1, static_cast<int>(std::floor(std::sqrt(double(target_regions) * h / w))));
  const int cols = std::max(1, static_cast<int>(std::lround(double(target_regions) / rows)));
  const double step_y = double(h) / rows;
  const double step_x = double(w) / cols;
  const double spacing = std::sqrt(double(npix) / (rows * cols));
  const double window = std::max(step_y, step_x);

  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      int cy = std::min(h - 1, static_cast<int>((r + 0.5) * step_y));
      int cx = std::min(w - 1, static_cast<int>((c + 0.5) * step_x));
      // Nudge the seed off edges: lowest gradient in its 3x3 neighbourhood.
      double best = gradient_energy(image, cy, cx);
      int by = cy;
      int bx = cx;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = cy + dy;
          const int xx = cx + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double g = gradient_energy(image, yy, xx);
          if (g < best) {
            best = g;
            by = yy;
            bx = xx;
          }
        }
      }
      Center ctr;
      ctr.y = by;
      ctr.x = bx;
      ctr.color.resize(channels);
      for (int ch = 0; ch < channels; ++ch) ctr.color[ch] = image(ch, by, bx) * kColorScale;
      centers.push_back(std::move(ctr));
    }
  }

  const double spatial_weight = (options.compactness * options.compactness) / (spacing * spacing);
  std::vector<std::int32_t> labels(npix, -1);
  std::vector<double> dist(npix);

  for (int iter = 0; iter < options.iterations; ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::fill(labels.begin(), labels.end(), -1);
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& ctr = centers[k];
      const int y0 = std::max(0, static_cast<int>(std::floor(ctr.y - window)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(ctr.y + window)));
      const int x0 = std::max(0, static_cast<int>(std::floor(ctr.x - window)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(ctr.x + window)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          double dc = 0.0;
          for (int ch = 0; ch < channels; ++ch) {
            const double d = image(ch, y, x) * kColorScale - ctr.color[ch];
            dc += d * d;
          }
          const double sy = y - ctr.y;
          const double sx = x - ctr.x;
          const double d = dc + spatial_weight * (sy * sy + sx * sx);
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          if (d < dist[i]) {
            dist[i] = d;
            labels[i] = static_cast<std::int32_t>(k);
          }
        }
      }
    }

    // Pixels outside every window fall back to the spatially nearest centre.
    for (std::size_t i = 0; i < npix; ++i) {
      if (labels[i] >= 0) continue;
      const double y = double(i / w);
      const double x = double(i % w);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = (y - centers[k].y) * (y - centers[k].y) + (x - centers[k].x) * (x - centers[k].x);
        if (d < best) {
          best = d;
          labels[i] = static_cast<std::int32_t>(k);
        }
      }
    }

    std::vector<Center> sums(centers.size());
    std::vector<int> counts(centers.size(), 0);
    for (auto& s : sums) s.color.assign(channels, 0.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int k = labels[static_cast<std::size_t>(y) * w + x];
        sums[k].y += y;
        sums[k].x += x;
        for (int ch = 0; ch < channels; ++ch) sums[k].color[ch] += image(ch, y, x) * kColorScale;
        ++counts[k];
      }
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      const double inv = 1.0 / counts[k];
      centers[k].y = sums[k].y * inv;
      centers[k].x = sums[k].x * inv;
      for (int ch = 0; ch < channels; ++ch) centers[k].color[ch] = sums[k].color[ch] * inv;
    }
  }

  SuperpixelMap map;
  map.height = h;
  map.width = w;
  map.labels = relabel_dense(enforce_connectivity(labels, h, w), map.region_count);
  return map;
}

SuperpixelGraph build_graph(const SuperpixelMap& map) {
  validate_map(map);
  SuperpixelGraph graph;
  graph.height = map.height;
  graph.width = map.width;
  graph.region_count = map.region_count;
  graph.region_sizes.assign(map.region_count, 0);

  std::map<std::pair<int, int>, std::vector<PixelPair>> boundaries;
  const auto add = [&](int a, int b, PixelPair pair) {
    boundaries[{std::min(a, b), std::max(a, b)}].push_back(pair);
  };
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const int a = map.at(y, x);
      ++graph.region_sizes[a];
      if (x + 1 < map.width && map.at(y, x + 1) != a) add(a, map.at(y, x + 1), {y, x, PairAxis::Horizontal});
      if (y + 1 < map.height && map.at(y + 1, x) != a) add(a, map.at(y + 1, x), {y, x, PairAxis::Vertical});
    }
  }
  graph.edges.reserve(boundaries.size());
  for (auto& [key, pairs] : boundaries) {
    graph.edges.push_back(RegionEdge{key.first, key.second, std::move(pairs)});
  }
  return graph;
}

void write_map(const SuperpixelMap& map, const std::filesystem::path& path) {
  validate_map(map);
  io::ByteWriter out;
  out.put_bytes(std::string_view(kMapMagic, 4));
  out.put_u32(kMapVersion);
  out.put_u32(static_cast<std::uint32_t>(map.height));
  out.put_u32(static_cast<std::uint32_t>(map.width));
  out.put_u32(static_cast<std::uint32_t>(map.region_count));
  for (std::int32_t id : map.labels) out.put_i32(id);
  out.save(path);
}

SuperpixelMap read_map(const std::filesystem::path& path) {
  auto in = io::ByteReader::from_file(path);
  if (in.get_bytes(4) != std::string_view(kMapMagic, 4)) throw FormatError("bad superpixel map magic", 0);
  const std::size_t version_at = in.offset();
  if (in.get_u32() != kMapVersion) throw FormatError("unsupported superpixel map version", version_at);
  SuperpixelMap map;
  map.height = static_cast<int>(in.get_u32());
  map.width = static_cast<int>(in.get_u32());
  map.region_count = static_cast<int>(in.get_u32());
  const std::size_t n = static_cast<std::size_t>(map.height) * map.width;
  if (in.remaining() != n * 4) {
    throw FormatError("expected " + std::to_string(n * 4) + " bytes of region ids, found " +
                      std::to_string(in.remaining()),
                      in.offset());
  }
  map.labels.resize(n);
  for (auto& id : map.labels) id = in.get_i32();
  validate_map(map);
  return map;
}

Tensor render_regions(const SuperpixelMap& map) {
  Tensor out(3, map.height, map.width);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const auto id = static_cast<std::uint32_t>(map.at(y, x));
      const std::uint32_t hash = (id + 1) * 2654435761u;
      out(0, y, x) = double((hash >> 8) & 0xff) / 255.0;
      out(1, y, x) = double((hash >> 16) & 0xff) / 255.0;
      out(2, y, x) = double((hash >> 24) & 0xff) / 255.0;
    }
  }
  return out;
}

Tensor render_boundaries(const ImagePlane& image, const SuperpixelMap& map) {
  if (image.height() != map.height || image.width() != map.width) {
    throw InvalidArgument("render_boundaries: image " + image.shape_string() + " does not match map");
  }
  Tensor out(3, map.height, map.width);
  for (int c = 0; c < 3; ++c) {
    const int src = std::min(c, image.channels() - 1);
    for (int y = 0; y < map.height; ++y)
      for (int x = 0; x < map.width; ++x) out(c, y, x) = image(src, y, x);
  }
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const int id = map.at(y, x);
      const bool edge = (x + 1 < map.width && map.at(y, x + 1) != id) ||
                        (y + 1 < map.height && map.at(y + 1, x) != id);
      if (edge) {
        out(0, y, x) = 1.0;
        out(1, y, x) = 0.0;
        out(2, y, x) = 0.0;
      }
    }
  }
  return out;
}

}  // namespace fccnn::sp
