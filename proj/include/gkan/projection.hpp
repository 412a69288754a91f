#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gkan/error.hpp"

namespace gkan {

/// Circular cone-beam scan with a flat detector. The source orbits the z axis
/// at distance `sid_mm`; the detector plane sits `sdd_mm` from the source,
/// centered on the central ray. Detector rows run along z.
struct ConeBeamGeometry {
  double sid_mm = 500.0;
  double sdd_mm = 1000.0;
  std::size_t nu = 128;  // columns
  std::size_t nv = 128;  // rows
  double pitch_mm = 1.6;
  std::vector<double> angles;  // radians
  double i0 = 1e5;             // flat-field photons per pixel

  /// Evenly spaced views over [0, 2pi).
  static ConeBeamGeometry circular(std::size_t views, std::size_t nu = 128, std::size_t nv = 128, double pitch_mm = 1.6,
                                   double sid_mm = 500.0, double sdd_mm = 1000.0, double i0 = 1e5) {
    ConeBeamGeometry g;
    g.sid_mm = sid_mm;
    g.sdd_mm = sdd_mm;
    g.nu = nu;
    g.nv = nv;
    g.pitch_mm = pitch_mm;
    g.i0 = i0;
    g.angles.resize(views);
    for (std::size_t k = 0; k < views; ++k)
      g.angles[k] = 2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(views);
    return g;
  }

  std::size_t views() const noexcept { return angles.size(); }
  double magnification() const noexcept { return sdd_mm / sid_mm; }

  /// Detector-plane coordinates of column iu / row iv, mm from the center.
  double u_mm(double iu) const noexcept { return (iu - (static_cast<double>(nu) - 1) / 2) * pitch_mm; }
  double v_mm(double iv) const noexcept { return (iv - (static_cast<double>(nv) - 1) / 2) * pitch_mm; }

  void validate() const {
    if (!(sid_mm > 0) || !(sdd_mm > sid_mm)) throw ConfigError("geometry: need SDD > SID > 0");
    if (!(pitch_mm > 0)) throw ConfigError("geometry: pixel pitch must be positive");
    if (nu == 0 || nv == 0) throw ConfigError("geometry: detector must have pixels");
    if (!(i0 > 0)) throw ConfigError("geometry: flat-field I0 must be positive");
    if (angles.empty()) throw ConfigError("geometry: no view angles");
    for (std::size_t k = 0; k < angles.size(); ++k) {
      if (!(angles[k] >= 0) || !(angles[k] < 2 * std::numbers::pi))
        throw ConfigError("geometry: view angles must lie in [0, 2pi)");
      if (k && !(angles[k] > angles[k - 1])) throw ConfigError("geometry: view angles must be strictly increasing");
    }
  }

  friend bool operator==(const ConeBeamGeometry&, const ConeBeamGeometry&) = default;
};

/// Stack of detector images, layout [view][row][column].
struct ProjectionStack {
  std::size_t views = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
  std::optional<ConeBeamGeometry> geometry;

  ProjectionStack() = default;
  ProjectionStack(std::size_t v, std::size_t r, std::size_t c, float fill = 0.0f)
      : views(v), rows(r), cols(c), data(v * r * c, fill) {}

  /// Empty stack shaped after `g`.
  explicit ProjectionStack(const ConeBeamGeometry& g, float fill = 0.0f)
      : ProjectionStack(g.views(), g.nv, g.nu, fill) {
    geometry = g;
  }

  std::size_t view_size() const noexcept { return rows * cols; }
  std::span<float> view(std::size_t k) { return {data.data() + k * view_size(), view_size()}; }
  std::span<const float> view(std::size_t k) const { return {data.data() + k * view_size(), view_size()}; }
  float& at(std::size_t k, std::size_t r, std::size_t c) { return data[(k * rows + r) * cols + c]; }
  float at(std::size_t k, std::size_t r, std::size_t c) const { return data[(k * rows + r) * cols + c]; }

  bool same_layout(const ProjectionStack& o) const noexcept {
    return views == o.views && rows == o.rows && cols == o.cols;
  }

  const ConeBeamGeometry& require_geometry() const {
    if (!geometry) throw ConfigError("projection stack carries no geometry");
    return *geometry;
  }
};

inline void require_same_layout(const ProjectionStack& a, const ProjectionStack& b, const char* what) {
  if (!a.same_layout(b))
    throw DimensionError(std::string(what) + ": stacks differ in layout (" + std::to_string(a.views) + "x" +
                         std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " + std::to_string(b.views) +
                         "x" + std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
}

/// Voxel grid, layout [z][y][x]. The grid center sits at `origin_mm`.
struct Volume {
  std::size_t nx = 0, ny = 0, nz = 0;
  double voxel_mm = 1.0;
  double origin_mm[3] = {0, 0, 0};
  std::vector<float> data;

  Volume() = default;
  Volume(std::size_t x, std::size_t y, std::size_t z, double voxel, float fill = 0.0f)
      : nx(x), ny(y), nz(z), voxel_mm(voxel), data(x * y * z, fill) {}

  std::size_t slice_size() const noexcept { return nx * ny; }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return data[(z * ny + y) * nx + x]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return data[(z * ny + y) * nx + x]; }
  std::span<const float> slice(std::size_t z) const { return {data.data() + z * slice_size(), slice_size()}; }

  /// World coordinate of a voxel center along one axis.
  double x_mm(double ix) const noexcept { return origin_mm[0] + (ix - (static_cast<double>(nx) - 1) / 2) * voxel_mm; }
  double y_mm(double iy) const noexcept { return origin_mm[1] + (iy - (static_cast<double>(ny) - 1) / 2) * voxel_mm; }
  double z_mm(double iz) const noexcept { return origin_mm[2] + (iz - (static_cast<double>(nz) - 1) / 2) * voxel_mm; }

  bool same_layout(const Volume& o) const noexcept { return nx == o.nx && ny == o.ny && nz == o.nz; }
};

}  // namespace gkan
