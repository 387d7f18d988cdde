#include "fccnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fccnn/error.hpp"

namespace fccnn {

Tensor::Tensor(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 0 || height < 0 || width < 0) {
    throw InvalidArgument("Tensor: negative dimension");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  return std::to_string(channels_) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
}

double inner_product(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw InvalidArgument("inner_product: shape mismatch " + a.shape_string() + " vs " +
                          b.shape_string());
  }
  return std::inner_product(a.data().begin(), a.data().end(), b.data().begin(), 0.0);
}

}  // namespace fccnn
