#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "gkan/autodiff.hpp"
#include "gkan/error.hpp"

namespace gkan {

/// Box-filter resize: each output pixel is the area-weighted mean of the input
/// pixels it covers. Integer downsampling factors reduce to block averages.
template <typename T>
std::vector<T> resize_area(std::span<const T> src, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) {
  if (src.size() != h * w) throw DimensionError("resize_area: buffer does not match extents");
  if (oh == h && ow == w) return std::vector<T>(src.begin(), src.end());
  // Overlap of output cell o with input cell i along one axis, in input units.
  auto weights = [](std::size_t n_in, std::size_t n_out) {
    std::vector<std::vector<std::pair<std::size_t, double>>> taps(n_out);
    const double r = static_cast<double>(n_in) / static_cast<double>(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double a = o * r, b = (o + 1) * r;
      for (auto i = static_cast<std::size_t>(a); i < n_in && static_cast<double>(i) < b; ++i) {
        const double ov = std::min<double>(b, i + 1.0) - std::max<double>(a, static_cast<double>(i));
        if (ov > 0) taps[o].emplace_back(i, ov / r);
      }
    }
    return taps;
  };
  const auto ty = weights(h, oh);
  const auto tx = weights(w, ow);
  std::vector<T> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (const auto& [iy, wy] : ty[y])
        for (const auto& [ix, wx] : tx[x]) acc += wy * wx * static_cast<double>(src[iy * w + ix]);
      out[y * ow + x] = static_cast<T>(acc);
    }
  return out;
}

/// Bilinear resize with half-pixel centers, corners not aligned.
template <typename T>
std::vector<T> resize_bilinear(std::span<const T> src, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) {
  if (src.size() != h * w) throw DimensionError("resize_bilinear: buffer does not match extents");
  if (oh == h && ow == w) return std::vector<T>(src.begin(), src.end());
  const auto ty = detail::linear_taps(h, oh);
  const auto tx = detail::linear_taps(w, ow);
  std::vector<T> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const auto& a = ty[y];
      const auto& b = tx[x];
      const double v = a.w0 * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
                       a.w1 * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]);
      out[y * ow + x] = static_cast<T>(v);
    }
  return out;
}

}  // namespace gkan
