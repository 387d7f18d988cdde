#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fccnn {

/// Dense channel-major (C x H x W) array of doubles.
///
/// Used for images, feature maps and their gradients. Element (c, y, x) lives
/// at offset (c * H + y) * W + x.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0);

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(int c, int y, int x) noexcept {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  double operator()(int c, int y, int x) const noexcept {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> channel(int c) noexcept {
    return std::span<double>(data_).subspan(c * plane_size(), plane_size());
  }
  std::span<const double> channel(int c) const noexcept {
    return std::span<const double>(data_).subspan(c * plane_size(), plane_size());
  }

  void fill(double value);
  bool same_shape(const Tensor& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }
  bool all_finite() const noexcept;

  /// "CxHxW", for error messages.
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Sum over all elements of a * b. Shapes must match.
double inner_product(const Tensor& a, const Tensor& b);

}  // namespace fccnn
