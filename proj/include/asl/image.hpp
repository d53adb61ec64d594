#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "asl/errors.hpp"

namespace asl {

struct VoxelSize {
  double x = 1.0;  // mm
  double y = 1.0;  // mm

  friend bool operator==(const VoxelSize&, const VoxelSize&) = default;
};

// Row-major 2D grid of doubles. Roles (ΔM, SI_PD, CBF, noise std, mask) are
// carried by the variable holding the image, not by the type.
class Image2D {
 public:
  Image2D() = default;
  Image2D(std::size_t width, std::size_t height, VoxelSize voxel = {}, double fill = 0.0)
      : width_(width), height_(height), voxel_(voxel), data_(width * height, fill) {}
  Image2D(std::size_t width, std::size_t height, VoxelSize voxel, std::vector<double> data)
      : width_(width), height_(height), voxel_(voxel), data_(std::move(data)) {
    if (data_.size() != width_ * height_) {
      throw ShapeMismatch("image: data length " + std::to_string(data_.size()) + " != " +
                          std::to_string(width_) + "x" + std::to_string(height_));
    }
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  VoxelSize voxel_size() const { return voxel_; }

  double& operator()(std::size_t x, std::size_t y) { return data_[y * width_ + x]; }
  double operator()(std::size_t x, std::size_t y) const { return data_[y * width_ + x]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Image2D& other) const { return width_ == other.width_ && height_ == other.height_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Image2D&, const Image2D&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  VoxelSize voxel_{};
  std::vector<double> data_;
};

inline void require_same_shape(const Image2D& a, const Image2D& b, const char* context) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(context) + ": shape mismatch " + std::to_string(a.width()) + "x" +
                        std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                        std::to_string(b.height()));
  }
}

inline bool in_mask(const Image2D& mask, std::size_t i) { return mask[i] > 0.5; }

inline std::size_t mask_count(const Image2D& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.values().begin(), mask.values().end(), [](double v) { return v > 0.5; }));
}

// Voxelwise a - b.
inline Image2D subtract(const Image2D& a, const Image2D& b) {
  require_same_shape(a, b, "image");
  Image2D out(a.width(), a.height(), a.voxel_size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

// Values of `img` at masked voxels, in raster order.
inline std::vector<double> masked_values(const Image2D& img, const Image2D& mask) {
  require_same_shape(img, mask, "image");
  std::vector<double> out;
  out.reserve(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (in_mask(mask, i)) out.push_back(img[i]);
  }
  return out;
}

}  // namespace asl
