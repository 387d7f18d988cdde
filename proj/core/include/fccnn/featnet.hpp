#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fccnn/tensor.hpp"

namespace fccnn::net {

using FeatureField = Tensor;

// ---------------------------------------------------------------------------
// Primitive layers. Each forward has a matching exact backward.
// ---------------------------------------------------------------------------

enum class Padding { Zero, Replicate };

/// Filter bank layout is out x in x kernel_h x kernel_w, row-major.
struct ConvGeometry {
  int out_channels = 1;
  int in_channels = 1;
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  Padding padding = Padding::Zero;

  std::size_t filter_size() const noexcept {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel_h * kernel_w;
  }
};

/// Cross-correlation plus per-output-channel bias.
Tensor conv2d(const Tensor& input, std::span<const double> filters, std::span<const double> bias,
              const ConvGeometry& geometry);

struct ConvGrads {
  Tensor input;
  std::vector<double> filters;
  std::vector<double> bias;
};

ConvGrads conv2d_backward(const Tensor& input, std::span<const double> filters, const ConvGeometry& geometry,
                          const Tensor& grad_output);

/// Argmax of each 2x2 window, as a flat index y * in_width + x into the
/// input channel plane. One entry per output element.
struct PoolIndices {
  int channels = 0;
  int in_height = 0;
  int in_width = 0;
  std::vector<int> argmax;
};

struct PoolResult {
  Tensor output;
  PoolIndices indices;
};

/// 2x2 window, stride 2. Odd extents are rejected. Ties resolve to the
/// top-left-most position in raster order.
PoolResult maxpool2x2(const Tensor& input);
Tensor maxpool2x2_backward(const Tensor& grad_output, const PoolIndices& indices);

/// Places input(c, y, x) at its memorised argmax in an out_height x out_width
/// plane; every other position is zero.
Tensor unpool2x2(const Tensor& input, const PoolIndices& indices, int out_height, int out_width);
Tensor unpool2x2_backward(const Tensor& grad_output, const PoolIndices& indices);

Tensor relu(const Tensor& input);
/// Subgradient 0 at 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

/// Bilinear resize by an integer factor in {2, 4, 8}, half-pixel centres
/// (align_corners = false), source coordinates clamped at the borders.
Tensor bilinear_upsample(const Tensor& input, int factor);
Tensor bilinear_upsample_backward(const Tensor& grad_output, int factor);

/// log(1 + e^x), evaluated without overflow.
Tensor softplus(const Tensor& input);
Tensor softplus_backward(const Tensor& input, const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

/// Learned non-negative similarities between 4-adjacent pixels.
/// horizontal is 1 x H x (W-1): pixel (y, x) vs (y, x+1).
/// vertical is 1 x (H-1) x W: pixel (y, x) vs (y+1, x).
struct PixelAffinity {
  Tensor horizontal;
  Tensor vertical;

  int height() const noexcept { return horizontal.height(); }
  int width() const noexcept { return vertical.width(); }
};

PixelAffinity make_affinity(int height, int width, double fill = 0.0);

enum class Branch : std::uint8_t { Shared, Unary, Pairwise };

struct ParamBlock {
  std::string name;
  Branch branch = Branch::Unary;
  std::vector<int> shape;
  std::vector<double> values;

  std::string shape_string() const;
  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

/// Layer layout. The encoder has widths.size() conv+relu+maxpool blocks; the
/// unary decoder mirrors it with unpool+conv(+relu) blocks ending in `classes`
/// channels. The first `shared_blocks` encoder blocks also feed the pairwise
/// branch: `pairwise_blocks` conv+relu blocks of `pairwise_width`, bilinear
/// upsampling back to full resolution, then 1x2 / 2x1 edge convolutions and
/// softplus.
struct ArchConfig {
  int in_channels = 3;
  int classes = 3;
  std::vector<int> widths{8, 16, 32};
  int shared_blocks = 2;
  int pairwise_width = 16;
  int pairwise_blocks = 2;

  int depth() const noexcept { return static_cast<int>(widths.size()); }
  /// Spatial extents must be divisible by this.
  int size_multiple() const noexcept { return 1 << depth(); }
  void validate() const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// All trainable weights, grouped into named blocks. Gradients use the same
/// type (see zeros_like).
class NetParams {
 public:
  NetParams() = default;

  /// Uniform(+-sqrt(6 / (fan_in + fan_out))) filters, zero biases.
  static NetParams initialize(const ArchConfig& arch, std::uint64_t seed);
  static NetParams zeros(const ArchConfig& arch);

  const ArchConfig& arch() const noexcept { return arch_; }
  std::vector<ParamBlock>& blocks() noexcept { return blocks_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }

  ParamBlock& block(std::string_view name);
  const ParamBlock& block(std::string_view name) const;
  std::size_t parameter_count() const noexcept;

  NetParams zeros_like() const;
  void fill(double value);

  friend bool operator==(const NetParams&, const NetParams&) = default;

 private:
  explicit NetParams(ArchConfig arch);

  ArchConfig arch_;
  std::vector<ParamBlock> blocks_;
};

struct EncoderBlockCache {
  Tensor input;
  Tensor pre_activation;
  Tensor activation;
  PoolIndices pool;
};

struct DecoderBlockCache {
  Tensor unpooled;
  Tensor pre_activation;
  bool has_relu = true;
};

struct PairwiseCache {
  std::vector<Tensor> block_inputs;
  std::vector<Tensor> pre_activations;
  Tensor upsampled;
  Tensor edge_h_pre;
  Tensor edge_v_pre;
};

/// Intermediates kept by forward() for backward().
struct NetCache {
  int height = 0;
  int width = 0;
  std::vector<EncoderBlockCache> encoder;
  std::vector<DecoderBlockCache> decoder;
  bool has_unary = false;
  bool has_pairwise = false;
  PairwiseCache pairwise;
};

struct NetForward {
  FeatureField z;     // classes x H x W
  PixelAffinity wp;   // empty unless the pairwise branch ran
  NetCache cache;
};

/// Runs the shared encoder once and then whichever branches are requested.
NetForward forward(const Tensor& image, const NetParams& params, bool with_unary = true,
                   bool with_pairwise = true);

/// Accumulates dL/dparams into `grads`. Either upstream gradient may be null
/// to cut that path; the shared blocks receive the sum of both paths.
void backward(const NetCache& cache, const NetParams& params, const Tensor* grad_z, const PixelAffinity* grad_wp,
              NetParams& grads);

NetForward unary_forward(const Tensor& image, const NetParams& params);
void unary_backward(const NetCache& cache, const NetParams& params, const Tensor& grad_z, NetParams& grads);
NetForward pairwise_forward(const Tensor& image, const NetParams& params);
void pairwise_backward(const NetCache& cache, const NetParams& params, const PixelAffinity& grad_wp,
                       NetParams& grads);

/// Binary checkpoint: "FCNN", u32 version, u32 block count, then per block
/// u32 name length, name bytes, u32 rank, u32 dims, f64 values.
void save_checkpoint(const NetParams& params, const std::filesystem::path& path);

/// Loads and validates every block name and shape against `arch`. A mismatch
/// throws InvalidArgument showing the expected and stored shapes.
NetParams load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch);

}  // namespace fccnn::net
