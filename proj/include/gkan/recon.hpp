#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "gkan/error.hpp"
#include "gkan/fft.hpp"
#include "gkan/parallel.hpp"
#include "gkan/projection.hpp"

namespace gkan {

struct ReconGrid {
  std::size_t nx = 64, ny = 64, nz = 64;
  double voxel_mm = 1.6;
  double origin_mm[3] = {0, 0, 0};

  void validate() const {
    if (nx == 0 || ny == 0 || nz == 0) throw ConfigError("recon grid: dimensions must be positive");
    if (!(voxel_mm > 0)) throw ConfigError("recon grid: voxel size must be positive");
  }
};

/// Line integrals -ln(clamp(I/I0, 1e-3, 1)). Ratios above one (scatter and
/// noise can push I past the flat field) are truncated to one.
inline ProjectionStack log_transform(const ProjectionStack& intensity, double i0) {
  if (!(i0 > 0)) throw ConfigError("log_transform: I0 must be positive");
  constexpr double floor_ratio = 1e-3;
  ProjectionStack out = intensity;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double r = std::clamp(static_cast<double>(intensity.data[i]) / i0, floor_ratio, 1.0);
    out.data[i] = static_cast<float>(-std::log(r));
  }
  return out;
}

/// Per-view 2-D median over a window x window neighbourhood, borders
/// replicated.
inline ProjectionStack median_denoise(const ProjectionStack& in, int window) {
  if (window < 1 || window % 2 == 0) throw ConfigError("median_denoise: window must be odd and >= 1");
  if (window == 1) return in;
  const long r = window / 2;
  const long H = static_cast<long>(in.rows), W = static_cast<long>(in.cols);
  ProjectionStack out = in;
  parallel_for(in.views, [&](std::size_t k) {
    const auto src = in.view(k);
    auto dst = out.view(k);
    std::vector<float> buf(static_cast<std::size_t>(window * window));
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        std::size_t n = 0;
        for (long dy = -r; dy <= r; ++dy) {
          const long yy = std::clamp(y + dy, 0L, H - 1);
          for (long dx = -r; dx <= r; ++dx) buf[n++] = src[static_cast<std::size_t>(yy * W + std::clamp(x + dx, 0L, W - 1))];
        }
        auto mid = buf.begin() + static_cast<std::ptrdiff_t>(n / 2);
        std::nth_element(buf.begin(), mid, buf.end());
        dst[static_cast<std::size_t>(y * W + x)] = *mid;
      }
  });
  return out;
}

inline double mu_to_hu(double mu, double mu_water) { return 1000.0 * (mu - mu_water) / mu_water; }

inline Volume mu_to_hu(const Volume& vol, double mu_water) {
  if (!(mu_water > 0)) throw ConfigError("mu_to_hu: water attenuation must be positive");
  Volume out = vol;
  for (auto& v : out.data) v = static_cast<float>(mu_to_hu(v, mu_water));
  return out;
}

/// Ram-Lak filtering of detector rows sampled every `spacing` units. The
/// band-limited spatial kernel (1/(4 d^2) at 0, -1/(pi n d)^2 at odd n) is
/// transformed once; rows are zero padded to the next power of two >= 2 n.
class RampFilter {
 public:
  RampFilter(std::size_t row_length, double spacing) : n_(row_length), spacing_(spacing) {
    if (row_length == 0 || !(spacing > 0)) throw ConfigError("RampFilter: bad row length or spacing");
    padded_ = 1;
    while (padded_ < 2 * n_) padded_ <<= 1;
    RealFft fft(padded_);
    auto h = fft.real();
    std::fill(h.begin(), h.end(), 0.0);
    const double d2 = spacing * spacing;
    h[0] = 1.0 / (4 * d2);
    for (std::size_t i = 1; i < padded_ / 2; i += 2) {
      const double v = -1.0 / (std::numbers::pi * std::numbers::pi * static_cast<double>(i * i) * d2);
      h[i] = v;
      h[padded_ - i] = v;
    }
    fft.forward();
    response_.resize(padded_ / 2 + 1);
    // Symmetric kernel: the spectrum is real. Fold in the sample spacing of
    // the convolution sum and the 1/N of the unnormalized inverse.
    for (std::size_t i = 0; i < response_.size(); ++i)
      response_[i] = fft.spectrum()[i].real() * spacing / static_cast<double>(padded_);
  }

  std::size_t padded_length() const noexcept { return padded_; }

  /// Filters `rows` consecutive rows of `data` in place.
  void apply(std::span<float> data, std::size_t rows) const {
    RealFft fft(padded_);
    for (std::size_t r = 0; r < rows; ++r) {
      auto row = data.subspan(r * n_, n_);
      auto buf = fft.real();
      std::fill(buf.begin(), buf.end(), 0.0);
      std::copy(row.begin(), row.end(), buf.begin());
      fft.forward();
      auto spec = fft.spectrum();
      for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= response_[i];
      fft.inverse();
      for (std::size_t i = 0; i < n_; ++i) row[i] = static_cast<float>(fft.real()[i]);
    }
  }

 private:
  std::size_t n_;
  double spacing_;
  std::size_t padded_;
  std::vector<double> response_;
};

namespace detail {

/// Per-view angular weights (half the span to each neighbour on the circle).
/// Rejects scans that leave gaps in the orbit.
inline std::vector<double> angular_weights(const std::vector<double>& angles) {
  const std::size_t n = angles.size();
  if (n < 2) throw ConfigError("fdk: full-orbit reconstruction needs at least 2 views");
  const double nominal = 2 * std::numbers::pi / static_cast<double>(n);
  std::vector<double> gap(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double next = k + 1 < n ? angles[k + 1] : angles[0] + 2 * std::numbers::pi;
    gap[k] = next - angles[k];
    if (gap[k] > 1.5 * nominal) throw ConfigError("fdk: insufficient angular coverage (orbit gap detected)");
  }
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = 0.5 * (gap[k] + gap[(k + n - 1) % n]);
  return w;
}

}  // namespace detail

/// Feldkamp-Davis-Kress reconstruction for a full circular orbit and flat
/// detector: cosine weighting, row-wise ramp filtering, voxel-driven
/// backprojection with bilinear detector interpolation. Output in the
/// inverse length unit of the geometry (mm^-1).
inline Volume fdk_reconstruct(const ProjectionStack& line_integrals, const ConeBeamGeometry& geometry,
                              const ReconGrid& grid) {
  geometry.validate();
  grid.validate();
  if (line_integrals.views != geometry.views() || line_integrals.rows != geometry.nv ||
      line_integrals.cols != geometry.nu)
    throw DimensionError("fdk: projections do not match the geometry");
  const auto dbeta = detail::angular_weights(geometry.angles);

  const double D = geometry.sid_mm;
  const double scale_to_iso = geometry.sid_mm / geometry.sdd_mm;
  const double da = geometry.pitch_mm * scale_to_iso;

  ProjectionStack filtered = line_integrals;
  RampFilter ramp(geometry.nu, da);
  parallel_for(geometry.views(), [&](std::size_t k) {
    auto view = filtered.view(k);
    for (std::size_t iv = 0; iv < geometry.nv; ++iv) {
      const double b = geometry.v_mm(static_cast<double>(iv)) * scale_to_iso;
      for (std::size_t iu = 0; iu < geometry.nu; ++iu) {
        const double a = geometry.u_mm(static_cast<double>(iu)) * scale_to_iso;
        view[iv * geometry.nu + iu] *= static_cast<float>(D / std::sqrt(D * D + a * a + b * b));
      }
    }
    ramp.apply(view, geometry.nv);
  });

  Volume vol(grid.nx, grid.ny, grid.nz, grid.voxel_mm);
  std::copy(std::begin(grid.origin_mm), std::end(grid.origin_mm), vol.origin_mm);
  const double cu = (static_cast<double>(geometry.nu) - 1) / 2, cv = (static_cast<double>(geometry.nv) - 1) / 2;
  const long NU = static_cast<long>(geometry.nu), NV = static_cast<long>(geometry.nv);
  std::vector<double> cosb(geometry.views()), sinb(geometry.views());
  for (std::size_t k = 0; k < geometry.views(); ++k) {
    cosb[k] = std::cos(geometry.angles[k]);
    sinb[k] = std::sin(geometry.angles[k]);
  }
  parallel_for(grid.nz, [&](std::size_t iz) {
    const double z = vol.z_mm(static_cast<double>(iz));
    for (std::size_t iy = 0; iy < grid.ny; ++iy) {
      const double y = vol.y_mm(static_cast<double>(iy));
      for (std::size_t ix = 0; ix < grid.nx; ++ix) {
        const double x = vol.x_mm(static_cast<double>(ix));
        double acc = 0;
        for (std::size_t k = 0; k < geometry.views(); ++k) {
          const double s = x * cosb[k] + y * sinb[k];
          const double t = -x * sinb[k] + y * cosb[k];
          const double U = D - s;
          const double mag = geometry.sdd_mm / U;
          const double fu = t * mag / geometry.pitch_mm + cu;
          const double fv = z * mag / geometry.pitch_mm + cv;
          const long u0 = static_cast<long>(std::floor(fu)), v0 = static_cast<long>(std::floor(fv));
          if (u0 < -1 || u0 >= NU || v0 < -1 || v0 >= NV) continue;
          const double wu = fu - u0, wv = fv - v0;
          auto sample = [&](long v, long u) -> double {
            return (u < 0 || u >= NU || v < 0 || v >= NV) ? 0.0 : filtered.at(k, static_cast<std::size_t>(v), static_cast<std::size_t>(u));
          };
          const double val = (1 - wv) * ((1 - wu) * sample(v0, u0) + wu * sample(v0, u0 + 1)) +
                             wv * ((1 - wu) * sample(v0 + 1, u0) + wu * sample(v0 + 1, u0 + 1));
          acc += dbeta[k] * (D * D) / (U * U) * val;
        }
        vol.at(ix, iy, iz) = static_cast<float>(0.5 * acc);
      }
    }
  });
  return vol;
}

}  // namespace gkan
