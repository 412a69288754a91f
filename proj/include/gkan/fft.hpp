#pragma once

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <memory>
#include <cstddef>
#include <mutex>
#include <span>
#include <vector>

#include "gkan/error.hpp"

namespace gkan {

namespace detail {
// FFTW planning is not thread-safe; execution on distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};
}  // namespace detail

/// Real-to-complex / complex-to-real transform pair of fixed length n, with
/// its own buffers. Not shareable across threads; make one per worker.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n == 0) throw DimensionError("RealFft: length must be positive");
    real_.reset(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
    spec_.reset(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1))));
    std::lock_guard lock(detail::fftw_planner_mutex());
    const int len = static_cast<int>(n);
    forward_ = fftw_plan_dft_r2c_1d(len, real_.get(), spec_.get(), FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(len, spec_.get(), real_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const noexcept { return n_; }
  std::span<double> real() noexcept { return {real_.get(), n_}; }
  std::span<std::complex<double>> spectrum() noexcept {
    return {reinterpret_cast<std::complex<double>*>(spec_.get()), n_ / 2 + 1};
  }

  void forward() { fftw_execute(forward_); }
  /// Unnormalized: forward then inverse scales the signal by n.
  void inverse() { fftw_execute(inverse_); }

 private:
  std::size_t n_;
  std::unique_ptr<double, detail::FftwFree> real_;
  std::unique_ptr<fftw_complex, detail::FftwFree> spec_;
  fftw_plan forward_{};
  fftw_plan inverse_{};
};

/// |F(ky,kx)|^2 of a real h x w image over the half-plane kx in [0, w/2],
/// returned row-major [h][w/2+1].
inline std::vector<double> power_spectrum_2d(std::span<const double> image, std::size_t h, std::size_t w) {
  if (image.size() != h * w) throw DimensionError("power_spectrum_2d: buffer does not match extents");
  const std::size_t wc = w / 2 + 1;
  std::unique_ptr<double, detail::FftwFree> in(static_cast<double*>(fftw_malloc(sizeof(double) * h * w)));
  std::unique_ptr<fftw_complex, detail::FftwFree> out(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * h * wc)));
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_2d(static_cast<int>(h), static_cast<int>(w), in.get(), out.get(), FFTW_ESTIMATE);
  }
  std::copy(image.begin(), image.end(), in.get());
  fftw_execute(plan);
  std::vector<double> power(h * wc);
  for (std::size_t i = 0; i < h * wc; ++i) power[i] = out.get()[i][0] * out.get()[i][0] + out.get()[i][1] * out.get()[i][1];
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  return power;
}

}  // namespace gkan
