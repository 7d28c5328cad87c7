#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pixcon {

inline constexpr std::uint8_t kIgnoreLabel = 255;

// Dense H×W×depth grid of reals, pixel-major (HWC). Used for images
// (depth 3), feature maps (depth D or P) and probability maps (depth C).
struct PixelMap {
  int height = 0;
  int width = 0;
  int depth = 0;
  std::vector<double> values;

  PixelMap() = default;
  PixelMap(int h, int w, int d, double fill = 0.0)
      : height(h), width(w), depth(d),
        values(static_cast<std::size_t>(h) * w * d, fill) {}

  int pixels() const noexcept { return height * width; }

  std::span<double> pixel(int index) {
    return {values.data() + static_cast<std::size_t>(index) * depth,
            static_cast<std::size_t>(depth)};
  }
  std::span<const double> pixel(int index) const {
    return {values.data() + static_cast<std::size_t>(index) * depth,
            static_cast<std::size_t>(depth)};
  }
  std::span<double> pixel(int y, int x) { return pixel(y * width + x); }
  std::span<const double> pixel(int y, int x) const {
    return pixel(y * width + x);
  }

  double& at(int y, int x, int c) {
    return values[(static_cast<std::size_t>(y) * width + x) * depth + c];
  }
  double at(int y, int x, int c) const {
    return values[(static_cast<std::size_t>(y) * width + x) * depth + c];
  }

  bool same_shape(const PixelMap& other) const noexcept {
    return height == other.height && width == other.width &&
           depth == other.depth;
  }

  friend bool operator==(const PixelMap&, const PixelMap&) = default;
};

using Image = PixelMap;
using FeatureMap = PixelMap;
using ProbMap = PixelMap;

// H×W class indices in {0..C-1} ∪ {kIgnoreLabel}.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  int pixels() const noexcept { return height * width; }
  std::uint8_t& at(int y, int x) { return labels[y * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[y * width + x]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// Bilinear resampling with half-pixel centers (align_corners = false).
// Resizing a probability map preserves per-pixel sums to 1.
PixelMap resize_bilinear(const PixelMap& src, int out_h, int out_w);

// Adjoint of resize_bilinear: scatters `grad_out` back onto an in_h×in_w grid.
PixelMap resize_bilinear_backward(const PixelMap& grad_out, int in_h, int in_w);

// Nearest-neighbour resampling of a label map.
LabelMap resize_nearest(const LabelMap& src, int out_h, int out_w);

}  // namespace pixcon
