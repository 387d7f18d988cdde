#include "fccnn/featnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "fccnn/binary_io.hpp"
#include "fccnn/error.hpp"

namespace fccnn::net {

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'C', 'N', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;

int clamp_index(int v, int extent) { return std::clamp(v, 0, extent - 1); }

Tensor pad(const Tensor& input, int pad_h, int pad_w, Padding mode) {
  if (pad_h == 0 && pad_w == 0) return input;
  const int h = input.height();
  const int w = input.width();
  Tensor out(input.channels(), h + 2 * pad_h, w + 2 * pad_w);
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      const int sy = y - pad_h;
      if (mode == Padding::Zero && (sy < 0 || sy >= h)) continue;
      const int cy = clamp_index(sy, h);
      for (int x = 0; x < out.width(); ++x) {
        const int sx = x - pad_w;
        if (mode == Padding::Zero && (sx < 0 || sx >= w)) continue;
        out(c, y, x) = input(c, cy, clamp_index(sx, w));
      }
    }
  }
  return out;
}

// Adjoint of pad(): folds the padded gradient back onto the source extent.
Tensor unpad(const Tensor& grad_padded, int height, int width, int pad_h, int pad_w, Padding mode) {
  if (pad_h == 0 && pad_w == 0) return grad_padded;
  Tensor out(grad_padded.channels(), height, width);
  for (int c = 0; c < grad_padded.channels(); ++c) {
    for (int y = 0; y < grad_padded.height(); ++y) {
      const int sy = y - pad_h;
      if (mode == Padding::Zero && (sy < 0 || sy >= height)) continue;
      const int cy = clamp_index(sy, height);
      for (int x = 0; x < grad_padded.width(); ++x) {
        const int sx = x - pad_w;
        if (mode == Padding::Zero && (sx < 0 || sx >= width)) continue;
        out(c, cy, clamp_index(sx, width)) += grad_padded(c, y, x);
      }
    }
  }
  return out;
}

void check_conv_args(const Tensor& input, std::span<const double> filters, const ConvGeometry& g) {
  if (g.out_channels < 1 || g.in_channels < 1 || g.kernel_h < 1 || g.kernel_w < 1 || g.stride < 1 ||
      g.pad_h < 0 || g.pad_w < 0) {
    throw InvalidArgument("conv2d: invalid geometry");
  }
  if (input.channels() != g.in_channels) {
    throw InvalidArgument("conv2d: input has " + std::to_string(input.channels()) + " channels, filters expect " +
                          std::to_string(g.in_channels));
  }
  if (filters.size() != g.filter_size()) {
    throw InvalidArgument("conv2d: filter bank holds " + std::to_string(filters.size()) + " values, geometry needs " +
                          std::to_string(g.filter_size()));
  }
  if (input.height() + 2 * g.pad_h < g.kernel_h || input.width() + 2 * g.pad_w < g.kernel_w) {
    throw InvalidArgument("conv2d: kernel larger than padded input " + input.shape_string());
  }
}

struct AxisTaps {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
};

AxisTaps bilinear_taps(int in_extent, int factor) {
  AxisTaps taps;
  const int out_extent = in_extent * factor;
  taps.lo.resize(out_extent);
  taps.hi.resize(out_extent);
  taps.frac.resize(out_extent);
  for (int o = 0; o < out_extent; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in_extent - 1) lo = in_extent - 1;
    taps.lo[o] = lo;
    taps.hi[o] = std::min(lo + 1, in_extent - 1);
    taps.frac[o] = src - lo;
  }
  return taps;
}

void check_factor(int factor) {
  if (factor != 2 && factor != 4 && factor != 8) {
    throw InvalidArgument("bilinear_upsample: factor must be 2, 4 or 8, got " + std::to_string(factor));
  }
}

ConvGeometry conv3x3(int in, int out) {
  return ConvGeometry{out, in, 3, 3, 1, 1, 1, Padding::Replicate};
}

ConvGeometry edge_geometry(int in, bool horizontal) {
  return ConvGeometry{1, in, horizontal ? 1 : 2, horizontal ? 2 : 1, 1, 0, 0, Padding::Zero};
}

std::string enc_name(int k) { return "enc" + std::to_string(k); }
std::string dec_name(int k) { return "dec" + std::to_string(k); }
std::string pw_name(int k) { return "pw" + std::to_string(k); }

Tensor apply_conv(const Tensor& x, const NetParams& params, const std::string& layer, const ConvGeometry& g) {
  return conv2d(x, params.block(layer + ".w").values, params.block(layer + ".b").values, g);
}

// Backpropagates through one conv layer, accumulating its weight gradients,
// and returns the gradient with respect to the layer input.
Tensor conv_back(const Tensor& input, const NetParams& params, const std::string& layer, const ConvGeometry& g,
                 const Tensor& grad_out, NetParams& grads) {
  ConvGrads cg = conv2d_backward(input, params.block(layer + ".w").values, g, grad_out);
  auto& gw = grads.block(layer + ".w").values;
  auto& gb = grads.block(layer + ".b").values;
  for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += cg.filters[i];
  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += cg.bias[i];
  return std::move(cg.input);
}

void add_into(Tensor& acc, const Tensor& v) {
  auto a = acc.data();
  auto b = v.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

std::string dims_string(const std::vector<int>& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  return os.str();
}

}  // namespace

// ----------------------------------------------------------------- primitives

Tensor conv2d(const Tensor& input, std::span<const double> filters, std::span<const double> bias,
              const ConvGeometry& g) {
  check_conv_args(input, filters, g);
  if (bias.size() != static_cast<std::size_t>(g.out_channels)) {
    throw InvalidArgument("conv2d: bias has " + std::to_string(bias.size()) + " values for " +
                          std::to_string(g.out_channels) + " output channels");
  }
  const Tensor padded = pad(input, g.pad_h, g.pad_w, g.padding);
  const int out_h = (padded.height() - g.kernel_h) / g.stride + 1;
  const int out_w = (padded.width() - g.kernel_w) / g.stride + 1;
  Tensor out(g.out_channels, out_h, out_w);
  const int pw = padded.width();
  for (int o = 0; o < g.out_channels; ++o) {
    auto out_plane = out.channel(o);
    std::fill(out_plane.begin(), out_plane.end(), bias[o]);
    for (int i = 0; i < g.in_channels; ++i) {
      const auto in_plane = padded.channel(i);
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const double wv = filters[((static_cast<std::size_t>(o) * g.in_channels + i) * g.kernel_h + ky) * g.kernel_w + kx];
          for (int y = 0; y < out_h; ++y) {
            double* dst = out_plane.data() + static_cast<std::size_t>(y) * out_w;
            const double* src = in_plane.data() + static_cast<std::size_t>(y * g.stride + ky) * pw + kx;
            if (g.stride == 1) {
              for (int x = 0; x < out_w; ++x) dst[x] += wv * src[x];
            } else {
              for (int x = 0; x < out_w; ++x) dst[x] += wv * src[x * g.stride];
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, std::span<const double> filters, const ConvGeometry& g,
                          const Tensor& grad_output) {
  check_conv_args(input, filters, g);
  const Tensor padded = pad(input, g.pad_h, g.pad_w, g.padding);
  const int out_h = (padded.height() - g.kernel_h) / g.stride + 1;
  const int out_w = (padded.width() - g.kernel_w) / g.stride + 1;
  if (grad_output.channels() != g.out_channels || grad_output.height() != out_h || grad_output.width() != out_w) {
    throw InvalidArgument("conv2d_backward: gradient shape " + grad_output.shape_string() + " does not match output " +
                          std::to_string(g.out_channels) + "x" + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  ConvGrads grads;
  grads.filters.assign(g.filter_size(), 0.0);
  grads.bias.assign(g.out_channels, 0.0);
  Tensor grad_padded(padded.channels(), padded.height(), padded.width());
  const int pw = padded.width();
  for (int o = 0; o < g.out_channels; ++o) {
    const auto gout = grad_output.channel(o);
    double bsum = 0.0;
    for (double v : gout) bsum += v;
    grads.bias[o] = bsum;
    for (int i = 0; i < g.in_channels; ++i) {
      const auto in_plane = padded.channel(i);
      auto gin_plane = grad_padded.channel(i);
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const std::size_t widx = ((static_cast<std::size_t>(o) * g.in_channels + i) * g.kernel_h + ky) * g.kernel_w + kx;
          const double wv = filters[widx];
          double wsum = 0.0;
          for (int y = 0; y < out_h; ++y) {
            const double* go = gout.data() + static_cast<std::size_t>(y) * out_w;
            const std::size_t row = static_cast<std::size_t>(y * g.stride + ky) * pw + kx;
            const double* src = in_plane.data() + row;
            double* gi = gin_plane.data() + row;
            if (g.stride == 1) {
              for (int x = 0; x < out_w; ++x) {
                wsum += go[x] * src[x];
                gi[x] += wv * go[x];
              }
            } else {
              for (int x = 0; x < out_w; ++x) {
                wsum += go[x] * src[x * g.stride];
                gi[x * g.stride] += wv * go[x];
              }
            }
          }
          grads.filters[widx] = wsum;
        }
      }
    }
  }
  grads.input = unpad(grad_padded, input.height(), input.width(), g.pad_h, g.pad_w, g.padding);
  return grads;
}

PoolResult maxpool2x2(const Tensor& input) {
  if (input.height() % 2 != 0 || input.width() % 2 != 0 || input.height() == 0 || input.width() == 0) {
    throw InvalidArgument("maxpool2x2: extent must be even and nonzero, got " + input.shape_string());
  }
  const int oh = input.height() / 2;
  const int ow = input.width() / 2;
  PoolResult r;
  r.output = Tensor(input.channels(), oh, ow);
  r.indices.channels = input.channels();
  r.indices.in_height = input.height();
  r.indices.in_width = input.width();
  r.indices.argmax.resize(r.output.size());
  std::size_t k = 0;
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x, ++k) {
        int by = 2 * y;
        int bx = 2 * x;
        double best = input(c, by, bx);
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const double v = input(c, 2 * y + dy, 2 * x + dx);
            if (v > best) {
              best = v;
              by = 2 * y + dy;
              bx = 2 * x + dx;
            }
          }
        }
        r.output(c, y, x) = best;
        r.indices.argmax[k] = by * input.width() + bx;
      }
    }
  }
  return r;
}

Tensor unpool2x2(const Tensor& input, const PoolIndices& indices, int out_height, int out_width) {
  if (indices.in_height != out_height || indices.in_width != out_width || indices.channels != input.channels() ||
      out_height != 2 * input.height() || out_width != 2 * input.width() ||
      indices.argmax.size() != input.size()) {
    throw InvalidArgument("unpool2x2: indices recorded for " + std::to_string(indices.channels) + "x" +
                          std::to_string(indices.in_height) + "x" + std::to_string(indices.in_width) +
                          " cannot unpool " + input.shape_string() + " to " + std::to_string(out_height) + "x" +
                          std::to_string(out_width));
  }
  Tensor out(input.channels(), out_height, out_width);
  std::size_t k = 0;
  for (int c = 0; c < input.channels(); ++c) {
    auto plane = out.channel(c);
    for (int y = 0; y < input.height(); ++y) {
      for (int x = 0; x < input.width(); ++x, ++k) {
        const int idx = indices.argmax[k];
        const int iy = idx / out_width;
        const int ix = idx % out_width;
        if (idx < 0 || iy / 2 != y || ix / 2 != x) {
          throw InvalidArgument("unpool2x2: stored index outside its pooling window");
        }
        plane[idx] = input(c, y, x);
      }
    }
  }
  return out;
}

Tensor unpool2x2_backward(const Tensor& grad_output, const PoolIndices& indices) {
  if (grad_output.channels() != indices.channels || grad_output.height() != indices.in_height ||
      grad_output.width() != indices.in_width) {
    throw InvalidArgument("unpool2x2_backward: gradient " + grad_output.shape_string() + " does not match indices");
  }
  Tensor out(indices.channels, indices.in_height / 2, indices.in_width / 2);
  std::size_t k = 0;
  for (int c = 0; c < out.channels(); ++c) {
    const auto plane = grad_output.channel(c);
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x, ++k) out(c, y, x) = plane[indices.argmax[k]];
  }
  return out;
}

Tensor maxpool2x2_backward(const Tensor& grad_output, const PoolIndices& indices) {
  return unpool2x2(grad_output, indices, indices.in_height, indices.in_width);
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  if (!input.same_shape(grad_output)) throw InvalidArgument("relu_backward: shape mismatch");
  Tensor out = grad_output;
  const auto in = input.data();
  auto g = out.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(in[i] > 0.0)) g[i] = 0.0;
  }
  return out;
}

Tensor bilinear_upsample(const Tensor& input, int factor) {
  check_factor(factor);
  const AxisTaps ty = bilinear_taps(input.height(), factor);
  const AxisTaps tx = bilinear_taps(input.width(), factor);
  Tensor out(input.channels(), input.height() * factor, input.width() * factor);
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      const double fy = ty.frac[y];
      for (int x = 0; x < out.width(); ++x) {
        const double fx = tx.frac[x];
        const double top = (1.0 - fx) * input(c, ty.lo[y], tx.lo[x]) + fx * input(c, ty.lo[y], tx.hi[x]);
        const double bottom = (1.0 - fx) * input(c, ty.hi[y], tx.lo[x]) + fx * input(c, ty.hi[y], tx.hi[x]);
        out(c, y, x) = (1.0 - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

Tensor bilinear_upsample_backward(const Tensor& grad_output, int factor) {
  check_factor(factor);
  if (grad_output.height() % factor != 0 || grad_output.width() % factor != 0) {
    throw InvalidArgument("bilinear_upsample_backward: gradient extent not a multiple of the factor");
  }
  const int ih = grad_output.height() / factor;
  const int iw = grad_output.width() / factor;
  const AxisTaps ty = bilinear_taps(ih, factor);
  const AxisTaps tx = bilinear_taps(iw, factor);
  Tensor out(grad_output.channels(), ih, iw);
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = 0; y < grad_output.height(); ++y) {
      const double fy = ty.frac[y];
      for (int x = 0; x < grad_output.width(); ++x) {
        const double fx = tx.frac[x];
        const double g = grad_output(c, y, x);
        out(c, ty.lo[y], tx.lo[x]) += (1.0 - fy) * (1.0 - fx) * g;
        out(c, ty.lo[y], tx.hi[x]) += (1.0 - fy) * fx * g;
        out(c, ty.hi[y], tx.lo[x]) += fy * (1.0 - fx) * g;
        out(c, ty.hi[y], tx.hi[x]) += fy * fx * g;
      }
    }
  }
  return out;
}

Tensor softplus(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  return out;
}

Tensor softplus_backward(const Tensor& input, const Tensor& grad_output) {
  if (!input.same_shape(grad_output)) throw InvalidArgument("softplus_backward: shape mismatch");
  Tensor out = grad_output;
  const auto in = input.data();
  auto g = out.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = in[i];
    const double sigmoid = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    g[i] *= sigmoid;
  }
  return out;
}

// ------------------------------------------------------------------ params

PixelAffinity make_affinity(int height, int width, double fill) {
  return PixelAffinity{Tensor(1, height, width - 1, fill), Tensor(1, height - 1, width, fill)};
}

std::string ParamBlock::shape_string() const { return dims_string(shape); }

void ArchConfig::validate() const {
  if (in_channels < 1) throw InvalidArgument("arch: in_channels must be >= 1");
  if (classes < 2) throw InvalidArgument("arch: classes must be >= 2");
  if (widths.empty()) throw InvalidArgument("arch: encoder needs at least one block");
  for (int w : widths) {
    if (w < 1) throw InvalidArgument("arch: widths must be positive");
  }
  if (shared_blocks < 1 || shared_blocks > depth() || shared_blocks > 3) {
    throw InvalidArgument("arch: shared_blocks must be in [1, min(depth, 3)], got " + std::to_string(shared_blocks));
  }
  if (pairwise_width < 1 || pairwise_blocks < 0) throw InvalidArgument("arch: invalid pairwise branch");
}

NetParams::NetParams(ArchConfig arch) : arch_(std::move(arch)) {
  arch_.validate();
  const auto add_conv = [&](const std::string& name, Branch branch, int out, int in, int kh, int kw) {
    ParamBlock w{name + ".w", branch, {out, in, kh, kw}, {}};
    w.values.assign(static_cast<std::size_t>(out) * in * kh * kw, 0.0);
    ParamBlock b{name + ".b", branch, {out}, std::vector<double>(out, 0.0)};
    blocks_.push_back(std::move(w));
    blocks_.push_back(std::move(b));
  };
  const int depth = arch_.depth();
  for (int k = 1; k <= depth; ++k) {
    const int in = k == 1 ? arch_.in_channels : arch_.widths[k - 2];
    add_conv(enc_name(k), k <= arch_.shared_blocks ? Branch::Shared : Branch::Unary, arch_.widths[k - 1], in, 3, 3);
  }
  for (int k = depth; k >= 1; --k) {
    const int out = k > 1 ? arch_.widths[k - 2] : arch_.classes;
    add_conv(dec_name(k), Branch::Unary, out, arch_.widths[k - 1], 3, 3);
  }
  int feat = arch_.widths[arch_.shared_blocks - 1];
  for (int j = 1; j <= arch_.pairwise_blocks; ++j) {
    add_conv(pw_name(j), Branch::Pairwise, arch_.pairwise_width, feat, 3, 3);
    feat = arch_.pairwise_width;
  }
  add_conv("edge_h", Branch::Pairwise, 1, feat, 1, 2);
  add_conv("edge_v", Branch::Pairwise, 1, feat, 2, 1);
}

NetParams NetParams::initialize(const ArchConfig& arch, std::uint64_t seed) {
  NetParams p(arch);
  std::mt19937_64 rng(seed);
  for (auto& b : p.blocks_) {
    if (b.shape.size() != 4) continue;
    const double fan_in = double(b.shape[1]) * b.shape[2] * b.shape[3];
    const double fan_out = double(b.shape[0]) * b.shape[2] * b.shape[3];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : b.values) v = dist(rng);
  }
  return p;
}

NetParams NetParams::zeros(const ArchConfig& arch) { return NetParams(arch); }

NetParams NetParams::zeros_like() const {
  NetParams p = *this;
  p.fill(0.0);
  return p;
}

void NetParams::fill(double value) {
  for (auto& b : blocks_) std::fill(b.values.begin(), b.values.end(), value);
}

ParamBlock& NetParams::block(std::string_view name) {
  for (auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw InvalidArgument("no parameter block named " + std::string(name));
}

const ParamBlock& NetParams::block(std::string_view name) const {
  return const_cast<NetParams*>(this)->block(name);
}

std::size_t NetParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.values.size();
  return n;
}

// ------------------------------------------------------------------ networks

NetForward forward(const Tensor& image, const NetParams& params, bool with_unary, bool with_pairwise) {
  const ArchConfig& arch = params.arch();
  const int mult = arch.size_multiple();
  if (image.channels() != arch.in_channels) {
    throw InvalidArgument("network expects " + std::to_string(arch.in_channels) + " input channels, image is " +
                          image.shape_string());
  }
  if (image.height() % mult != 0 || image.width() % mult != 0 || image.height() == 0 || image.width() == 0) {
    throw InvalidArgument("image extent " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                          " not divisible by " + std::to_string(mult));
  }

  NetForward out;
  NetCache& cache = out.cache;
  cache.height = image.height();
  cache.width = image.width();
  cache.has_unary = with_unary;
  cache.has_pairwise = with_pairwise;

  const int depth = arch.depth();
  const int encoder_blocks = with_unary ? depth : arch.shared_blocks;
  Tensor x = image;
  Tensor shared_output;
  for (int k = 1; k <= encoder_blocks; ++k) {
    const int in = k == 1 ? arch.in_channels : arch.widths[k - 2];
    EncoderBlockCache blk;
    blk.input = x;
    blk.pre_activation = apply_conv(x, params, enc_name(k), conv3x3(in, arch.widths[k - 1]));
    blk.activation = relu(blk.pre_activation);
    PoolResult pooled = maxpool2x2(blk.activation);
    blk.pool = std::move(pooled.indices);
    x = std::move(pooled.output);
    cache.encoder.push_back(std::move(blk));
    if (k == arch.shared_blocks) shared_output = x;
  }

  if (with_unary) {
    for (int k = depth; k >= 1; --k) {
      const EncoderBlockCache& enc = cache.encoder[k - 1];
      DecoderBlockCache blk;
      blk.unpooled = unpool2x2(x, enc.pool, enc.activation.height(), enc.activation.width());
      const int out_ch = k > 1 ? arch.widths[k - 2] : arch.classes;
      blk.pre_activation = apply_conv(blk.unpooled, params, dec_name(k), conv3x3(arch.widths[k - 1], out_ch));
      blk.has_relu = k > 1;
      x = blk.has_relu ? relu(blk.pre_activation) : blk.pre_activation;
      cache.decoder.push_back(std::move(blk));
    }
    out.z = std::move(x);
  }

  if (with_pairwise) {
    PairwiseCache& pc = cache.pairwise;
    Tensor f = shared_output;
    int feat = arch.widths[arch.shared_blocks - 1];
    for (int j = 1; j <= arch.pairwise_blocks; ++j) {
      pc.block_inputs.push_back(f);
      Tensor pre = apply_conv(f, params, pw_name(j), conv3x3(feat, arch.pairwise_width));
      f = relu(pre);
      pc.pre_activations.push_back(std::move(pre));
      feat = arch.pairwise_width;
    }
    pc.upsampled = bilinear_upsample(f, 1 << arch.shared_blocks);
    pc.edge_h_pre = apply_conv(pc.upsampled, params, "edge_h", edge_geometry(feat, true));
    pc.edge_v_pre = apply_conv(pc.upsampled, params, "edge_v", edge_geometry(feat, false));
    out.wp.horizontal = softplus(pc.edge_h_pre);
    out.wp.vertical = softplus(pc.edge_v_pre);
  }
  return out;
}

void backward(const NetCache& cache, const NetParams& params, const Tensor* grad_z, const PixelAffinity* grad_wp,
              NetParams& grads) {
  const ArchConfig& arch = params.arch();
  if (grads.arch() != arch) throw InvalidArgument("backward: gradient buffer built for a different architecture");
  if (grad_z && !cache.has_unary) throw InvalidArgument("backward: unary path was not run forward");
  if (grad_wp && !cache.has_pairwise) throw InvalidArgument("backward: pairwise path was not run forward");
  const int depth = arch.depth();

  Tensor shared_grad;
  if (grad_wp) {
    const PairwiseCache& pc = cache.pairwise;
    const int feat = arch.pairwise_blocks > 0 ? arch.pairwise_width : arch.widths[arch.shared_blocks - 1];
    if (!grad_wp->horizontal.same_shape(pc.edge_h_pre) || !grad_wp->vertical.same_shape(pc.edge_v_pre)) {
      throw InvalidArgument("backward: pixel affinity gradient has the wrong extent");
    }
    Tensor gh = softplus_backward(pc.edge_h_pre, grad_wp->horizontal);
    Tensor gv = softplus_backward(pc.edge_v_pre, grad_wp->vertical);
    Tensor g = conv_back(pc.upsampled, params, "edge_h", edge_geometry(feat, true), gh, grads);
    add_into(g, conv_back(pc.upsampled, params, "edge_v", edge_geometry(feat, false), gv, grads));
    g = bilinear_upsample_backward(g, 1 << arch.shared_blocks);
    for (int j = arch.pairwise_blocks; j >= 1; --j) {
      const int in = j == 1 ? arch.widths[arch.shared_blocks - 1] : arch.pairwise_width;
      g = relu_backward(pc.pre_activations[j - 1], g);
      g = conv_back(pc.block_inputs[j - 1], params, pw_name(j), conv3x3(in, arch.pairwise_width), g, grads);
    }
    shared_grad = std::move(g);
  }

  Tensor g;
  int top = arch.shared_blocks;
  if (grad_z) {
    if (grad_z->channels() != arch.classes || grad_z->height() != cache.height || grad_z->width() != cache.width) {
      throw InvalidArgument("backward: dL/dZ has shape " + grad_z->shape_string());
    }
    g = *grad_z;
    // Decoder blocks were cached in order depth, depth-1, ..., 1.
    for (int k = 1; k <= depth; ++k) {
      const DecoderBlockCache& blk = cache.decoder[depth - k];
      const int out_ch = k > 1 ? arch.widths[k - 2] : arch.classes;
      if (blk.has_relu) g = relu_backward(blk.pre_activation, g);
      g = conv_back(blk.unpooled, params, dec_name(k), conv3x3(arch.widths[k - 1], out_ch), g, grads);
      g = unpool2x2_backward(g, cache.encoder[k - 1].pool);
    }
    top = depth;
  }

  for (int k = top; k >= 1; --k) {
    if (k == arch.shared_blocks && grad_wp) {
      if (g.empty()) {
        g = shared_grad;
      } else {
        add_into(g, shared_grad);
      }
    }
    if (g.empty()) continue;
    const EncoderBlockCache& blk = cache.encoder[k - 1];
    const int in = k == 1 ? arch.in_channels : arch.widths[k - 2];
    g = maxpool2x2_backward(g, blk.pool);
    g = relu_backward(blk.pre_activation, g);
    g = conv_back(blk.input, params, enc_name(k), conv3x3(in, arch.widths[k - 1]), g, grads);
  }
}

NetForward unary_forward(const Tensor& image, const NetParams& params) { return forward(image, params, true, false); }

void unary_backward(const NetCache& cache, const NetParams& params, const Tensor& grad_z, NetParams& grads) {
  backward(cache, params, &grad_z, nullptr, grads);
}

NetForward pairwise_forward(const Tensor& image, const NetParams& params) {
  return forward(image, params, false, true);
}

void pairwise_backward(const NetCache& cache, const NetParams& params, const PixelAffinity& grad_wp,
                       NetParams& grads) {
  backward(cache, params, nullptr, &grad_wp, grads);
}

// --------------------------------------------------------------- checkpoints

void save_checkpoint(const NetParams& params, const std::filesystem::path& path) {
  io::ByteWriter out;
  out.put_bytes(std::string_view(kCheckpointMagic, 4));
  out.put_u32(kCheckpointVersion);
  out.put_u32(static_cast<std::uint32_t>(params.blocks().size()));
  for (const auto& b : params.blocks()) {
    out.put_u32(static_cast<std::uint32_t>(b.name.size()));
    out.put_bytes(b.name);
    out.put_u32(static_cast<std::uint32_t>(b.shape.size()));
    for (int d : b.shape) out.put_u32(static_cast<std::uint32_t>(d));
    for (double v : b.values) out.put_f64(v);
  }
  out.save(path);
}

NetParams load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch) {
  NetParams params = NetParams::zeros(arch);
  auto in = io::ByteReader::from_file(path);
  if (in.get_bytes(4) != std::string_view(kCheckpointMagic, 4)) throw FormatError("bad checkpoint magic", 0);
  const std::size_t version_at = in.offset();
  if (in.get_u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);
  const std::uint32_t count = in.get_u32();
  if (count != params.blocks().size()) {
    throw InvalidArgument("checkpoint " + path.string() + " has " + std::to_string(count) +
                          " parameter blocks, architecture expects " + std::to_string(params.blocks().size()));
  }
  for (auto& b : params.blocks()) {
    const std::string name = in.get_bytes(in.get_u32());
    const std::uint32_t rank = in.get_u32();
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), in.offset() - 4);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(in.get_u32());
    if (name != b.name || shape != b.shape) {
      throw InvalidArgument("checkpoint block '" + name + "' has shape " + dims_string(shape) +
                            " but architecture expects '" + b.name + "' with shape " + b.shape_string());
    }
    for (double& v : b.values) v = in.get_f64();
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after last parameter block", in.offset());
  return params;
}

}  // namespace fccnn::net
