#include "pixcon/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace pixcon {
namespace {

// Source coordinate and interpolation weight for one output index.
struct Tap {
  int lo;
  int hi;
  double frac;
};

Tap bilinear_tap(int out_index, int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  double src = (out_index + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  const int lo = static_cast<int>(std::floor(src));
  const int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

}  // namespace

PixelMap resize_bilinear(const PixelMap& src, int out_h, int out_w) {
  PixelMap out(out_h, out_w, src.depth);
  for (int y = 0; y < out_h; ++y) {
    const Tap ty = bilinear_tap(y, src.height, out_h);
    for (int x = 0; x < out_w; ++x) {
      const Tap tx = bilinear_tap(x, src.width, out_w);
      const double w00 = (1 - ty.frac) * (1 - tx.frac);
      const double w01 = (1 - ty.frac) * tx.frac;
      const double w10 = ty.frac * (1 - tx.frac);
      const double w11 = ty.frac * tx.frac;
      auto p00 = src.pixel(ty.lo, tx.lo);
      auto p01 = src.pixel(ty.lo, tx.hi);
      auto p10 = src.pixel(ty.hi, tx.lo);
      auto p11 = src.pixel(ty.hi, tx.hi);
      auto dst = out.pixel(y, x);
      for (int c = 0; c < src.depth; ++c) {
        dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  return out;
}

PixelMap resize_bilinear_backward(const PixelMap& grad_out, int in_h, int in_w) {
  PixelMap grad_in(in_h, in_w, grad_out.depth);
  for (int y = 0; y < grad_out.height; ++y) {
    const Tap ty = bilinear_tap(y, in_h, grad_out.height);
    for (int x = 0; x < grad_out.width; ++x) {
      const Tap tx = bilinear_tap(x, in_w, grad_out.width);
      const double w[4] = {(1 - ty.frac) * (1 - tx.frac), (1 - ty.frac) * tx.frac,
                           ty.frac * (1 - tx.frac), ty.frac * tx.frac};
      std::span<double> dst[4] = {grad_in.pixel(ty.lo, tx.lo),
                                  grad_in.pixel(ty.lo, tx.hi),
                                  grad_in.pixel(ty.hi, tx.lo),
                                  grad_in.pixel(ty.hi, tx.hi)};
      auto g = grad_out.pixel(y, x);
      for (int k = 0; k < 4; ++k) {
        if (w[k] == 0.0) continue;
        for (int c = 0; c < grad_out.depth; ++c) dst[k][c] += w[k] * g[c];
      }
    }
  }
  return grad_in;
}

LabelMap resize_nearest(const LabelMap& src, int out_h, int out_w) {
  LabelMap out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(
        static_cast<int>((y + 0.5) * src.height / out_h), src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(
          static_cast<int>((x + 0.5) * src.width / out_w), src.width - 1);
      out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

}  // namespace pixcon
