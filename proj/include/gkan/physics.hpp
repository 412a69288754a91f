#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gkan/error.hpp"
#include "gkan/fft.hpp"
#include "gkan/parallel.hpp"
#include "gkan/projection.hpp"

namespace gkan {

inline constexpr double kClassicalElectronRadiusM = 2.8179403262e-15;
inline constexpr double kElectronRestEnergyKeV = 510.99895;

/// Total Compton cross-section per electron from the Klein-Nishina formula,
/// in units of r_e^2 (pass r_e in the length unit you want the area in).
/// eps is the reduced photon energy E / (m_e c^2). Below 1e-4 the closed
/// form cancels catastrophically and the first-order series is used.
inline double klein_nishina_sigma(double eps, double r_e = kClassicalElectronRadiusM) {
  if (!(eps > 0) || !std::isfinite(eps)) throw DomainError("klein_nishina_sigma: reduced energy must be positive");
  const double thomson = 8.0 * std::numbers::pi * r_e * r_e / 3.0;
  if (eps < 1e-4) return thomson * (1.0 - 2.0 * eps);
  const double l = std::log1p(2 * eps);
  const double a = 1 + 2 * eps;
  const double bracket = (1 + eps) / (eps * eps * eps) * (2 * eps * (1 + eps) / a - l) + l / (2 * eps) -
                         (1 + 3 * eps) / (a * a);
  return 2 * std::numbers::pi * r_e * r_e * bracket;
}

// ---------------------------------------------------------------------------
// Materials and phantoms

enum class Material : std::uint8_t { Air = 0, SoftTissue = 1, Bone = 2 };

struct MaterialProps {
  double density_g_cm3;
  double mu_per_mm;
};

/// Attenuation at the simulation energy. Soft tissue doubles as water for HU.
struct MaterialTable {
  double energy_kev = 60.0;
  MaterialProps air{0.0012, 0.0};
  MaterialProps soft_tissue{1.06, 0.0205};
  MaterialProps bone{1.92, 0.0586};

  const MaterialProps& operator[](Material m) const {
    switch (m) {
      case Material::Air: return air;
      case Material::SoftTissue: return soft_tissue;
      default: return bone;
    }
  }

  void validate() const {
    if (air.mu_per_mm != 0.0) throw ConfigError("material table: air must not attenuate");
    if (!(soft_tissue.mu_per_mm > 0)) throw ConfigError("material table: soft tissue mu must be positive");
    if (!(bone.mu_per_mm > soft_tissue.mu_per_mm)) throw ConfigError("material table: bone must attenuate more than soft tissue");
  }

  nlohmann::json to_json() const {
    auto entry = [](const MaterialProps& p) { return nlohmann::json{{"density", p.density_g_cm3}, {"mu", p.mu_per_mm}}; };
    return {{"energy_kev", energy_kev}, {"air", entry(air)}, {"soft_tissue", entry(soft_tissue)}, {"bone", entry(bone)}};
  }

  static MaterialTable from_json(const nlohmann::json& j) {
    MaterialTable t;
    for (const auto& [key, value] : j.items()) {
      if (key == "energy_kev") {
        t.energy_kev = value.get<double>();
        continue;
      }
      MaterialProps* dst = key == "air" ? &t.air : key == "soft_tissue" ? &t.soft_tissue : key == "bone" ? &t.bone : nullptr;
      if (!dst) throw ConfigError("material table: unknown material '" + key + "'");
      for (const auto& [field, v] : value.items()) {
        if (field == "density") dst->density_g_cm3 = v.get<double>();
        else if (field == "mu") dst->mu_per_mm = v.get<double>();
        else throw ConfigError("material table: unknown field '" + field + "' for " + key);
      }
    }
    t.validate();
    return t;
  }
};

/// Labelled voxel phantom centered on the rotation axis, layout [z][y][x].
struct Phantom {
  std::size_t nx = 0, ny = 0, nz = 0;
  double voxel_mm = 1.0;
  double energy_kev = 60.0;
  std::vector<Material> labels;
  std::vector<float> density;
  std::vector<float> mu;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept { return (z * ny + y) * nx + x; }
  Material label(std::size_t x, std::size_t y, std::size_t z) const { return labels[index(x, y, z)]; }

  Volume mu_volume() const {
    Volume v(nx, ny, nz, voxel_mm);
    v.data = mu;
    return v;
  }

  double fraction(Material m) const {
    return static_cast<double>(std::count(labels.begin(), labels.end(), m)) / static_cast<double>(labels.size());
  }
};

struct PhantomDims {
  std::size_t nx = 64, ny = 64, nz = 64;
};

/// Randomized head: soft-tissue ellipsoid inside an elliptical skull shell,
/// with 2-5 small bone or air inserts kept clear of the central axis so a
/// soft-tissue region of interest survives at the center of every axial
/// slice. Fully determined by `seed`.
inline Phantom make_head_phantom(std::uint64_t seed, PhantomDims dims = {}, double voxel_mm = 1.6,
                                 const MaterialTable& materials = {}) {
  if (dims.nx < 32 || dims.ny < 32 || dims.nz < 32) throw ConfigError("make_head_phantom: need at least 32^3 voxels");
  if (!(voxel_mm > 0)) throw ConfigError("make_head_phantom: voxel size must be positive");
  materials.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const double ex = dims.nx * voxel_mm / 2, ey = dims.ny * voxel_mm / 2, ez = dims.nz * voxel_mm / 2;
  const std::array<double, 3> outer{ex * uniform(0.72, 0.80), ey * uniform(0.78, 0.86), ez * uniform(0.70, 0.80)};
  const double shell = std::max(2.5 * voxel_mm, uniform(4.0, 6.5));
  const std::array<double, 3> inner{outer[0] - shell, outer[1] - shell, outer[2] - shell};
  const std::array<double, 3> center{uniform(-2.0, 2.0), uniform(-2.0, 2.0), 0.0};

  struct Insert {
    std::array<double, 3> c, r;
    Material m;
  };
  std::vector<Insert> inserts;
  const int count = std::uniform_int_distribution<int>(2, 5)(rng);
  const double clear_radius = 0.35 * std::min(inner[0], inner[1]);
  for (int n = 0; n < count; ++n) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Insert ins;
      ins.m = uniform(0, 1) < 0.4 ? Material::Bone : Material::Air;
      ins.r = {uniform(3.0, 7.0), uniform(3.0, 7.0), uniform(3.0, 9.0)};
      ins.c = {uniform(-inner[0], inner[0]), uniform(-inner[1], inner[1]), uniform(-inner[2], inner[2]) * 0.6};
      const double rmax = std::max({ins.r[0], ins.r[1], ins.r[2]});
      // Keep the insert well inside the brain and off the central axis.
      const double q = std::hypot(ins.c[0] / inner[0], ins.c[1] / inner[1], ins.c[2] / inner[2]);
      const double reach = q + rmax / std::min({inner[0], inner[1], inner[2]});
      if (reach > 0.85) continue;
      if (std::hypot(ins.c[0], ins.c[1]) < clear_radius + rmax) continue;
      inserts.push_back(ins);
      break;
    }
  }

  Phantom ph;
  ph.nx = dims.nx;
  ph.ny = dims.ny;
  ph.nz = dims.nz;
  ph.voxel_mm = voxel_mm;
  ph.energy_kev = materials.energy_kev;
  const std::size_t n = dims.nx * dims.ny * dims.nz;
  ph.labels.assign(n, Material::Air);
  ph.density.assign(n, 0.0f);
  ph.mu.assign(n, 0.0f);
  auto inside = [](const std::array<double, 3>& p, const std::array<double, 3>& c, const std::array<double, 3>& r) {
    const double a = (p[0] - c[0]) / r[0], b = (p[1] - c[1]) / r[1], d = (p[2] - c[2]) / r[2];
    return a * a + b * b + d * d <= 1.0;
  };
  for (std::size_t z = 0; z < dims.nz; ++z)
    for (std::size_t y = 0; y < dims.ny; ++y)
      for (std::size_t x = 0; x < dims.nx; ++x) {
        const std::array<double, 3> p{(x + 0.5) * voxel_mm - ex, (y + 0.5) * voxel_mm - ey, (z + 0.5) * voxel_mm - ez};
        Material m = Material::Air;
        if (inside(p, center, inner)) {
          m = Material::SoftTissue;
          for (const auto& ins : inserts) {
            const std::array<double, 3> c{center[0] + ins.c[0], center[1] + ins.c[1], ins.c[2]};
            if (inside(p, c, ins.r)) m = ins.m;
          }
        } else if (inside(p, center, outer)) {
          m = Material::Bone;
        }
        const std::size_t i = ph.index(x, y, z);
        ph.labels[i] = m;
        ph.density[i] = static_cast<float>(materials[m].density_g_cm3);
        ph.mu[i] = static_cast<float>(materials[m].mu_per_mm);
      }
  return ph;
}

// ---------------------------------------------------------------------------
// Forward projection

namespace detail {

struct Vec3 {
  double x, y, z;
};

/// Integral of mu along the segment a->b through a centered voxel grid,
/// by exact voxel traversal (Siddon intersection lengths, walked in
/// Amanatides-Woo order).
inline double ray_integral(const Volume& vol, Vec3 a, Vec3 b) {
  const double v = vol.voxel_mm;
  const std::array<double, 3> lo{vol.origin_mm[0] - vol.nx * v / 2, vol.origin_mm[1] - vol.ny * v / 2,
                                 vol.origin_mm[2] - vol.nz * v / 2};
  const std::array<long, 3> n{static_cast<long>(vol.nx), static_cast<long>(vol.ny), static_cast<long>(vol.nz)};
  const std::array<double, 3> s{a.x, a.y, a.z};
  const std::array<double, 3> d{b.x - a.x, b.y - a.y, b.z - a.z};
  const double length = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);

  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double hi = lo[k] + n[k] * v;
    if (std::fabs(d[k]) < 1e-15) {
      if (s[k] < lo[k] || s[k] > hi) return 0.0;
      continue;
    }
    double ta = (lo[k] - s[k]) / d[k], tb = (hi - s[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return 0.0;

  std::array<long, 3> idx{};
  std::array<long, 3> step{};
  std::array<double, 3> t_next{}, t_delta{};
  const double tm = 0.5 * (t0 + std::min(t1, t0 + 1e-9));
  for (int k = 0; k < 3; ++k) {
    const double p = s[k] + tm * d[k];
    idx[k] = std::clamp(static_cast<long>(std::floor((p - lo[k]) / v)), 0L, n[k] - 1);
    if (d[k] > 0) {
      step[k] = 1;
      t_next[k] = (lo[k] + (idx[k] + 1) * v - s[k]) / d[k];
      t_delta[k] = v / d[k];
    } else if (d[k] < 0) {
      step[k] = -1;
      t_next[k] = (lo[k] + idx[k] * v - s[k]) / d[k];
      t_delta[k] = -v / d[k];
    } else {
      step[k] = 0;
      t_next[k] = std::numeric_limits<double>::infinity();
      t_delta[k] = std::numeric_limits<double>::infinity();
    }
  }
  double acc = 0.0, t = t0;
  while (t < t1) {
    const int k = t_next[0] <= t_next[1] ? (t_next[0] <= t_next[2] ? 0 : 2) : (t_next[1] <= t_next[2] ? 1 : 2);
    const double te = std::min(t_next[k], t1);
    acc += vol.data[static_cast<std::size_t>((idx[2] * n[1] + idx[1]) * n[0] + idx[0])] * (te - t);
    t = te;
    idx[k] += step[k];
    t_next[k] += t_delta[k];
    if (idx[k] < 0 || idx[k] >= n[k]) break;
  }
  return acc * length;
}

inline Vec3 source_position(const ConeBeamGeometry& g, double beta) {
  return {g.sid_mm * std::cos(beta), g.sid_mm * std::sin(beta), 0.0};
}

inline Vec3 detector_position(const ConeBeamGeometry& g, double beta, double iu, double iv) {
  const double back = g.sdd_mm - g.sid_mm;
  const double u = g.u_mm(iu), vv = g.v_mm(iv);
  return {-back * std::cos(beta) - u * std::sin(beta), -back * std::sin(beta) + u * std::cos(beta), vv};
}

}  // namespace detail

/// Noise-free primary signal I0 * exp(-integral of mu) for every detector
/// pixel, monoenergetic.
inline ProjectionStack forward_project(const Volume& mu, const ConeBeamGeometry& geometry) {
  geometry.validate();
  const double hx = mu.nx * mu.voxel_mm / 2, hy = mu.ny * mu.voxel_mm / 2, hz = mu.nz * mu.voxel_mm / 2;
  for (double beta : geometry.angles) {
    const auto s = detail::source_position(geometry, beta);
    if (std::fabs(s.x - mu.origin_mm[0]) <= hx && std::fabs(s.y - mu.origin_mm[1]) <= hy &&
        std::fabs(s.z - mu.origin_mm[2]) <= hz)
      throw ConfigError("forward_project: source lies inside the phantom volume");
  }
  ProjectionStack out(geometry);
  parallel_for(geometry.views(), [&](std::size_t k) {
    const double beta = geometry.angles[k];
    const auto s = detail::source_position(geometry, beta);
    for (std::size_t iv = 0; iv < geometry.nv; ++iv)
      for (std::size_t iu = 0; iu < geometry.nu; ++iu) {
        const auto p = detail::detector_position(geometry, beta, static_cast<double>(iu), static_cast<double>(iv));
        out.at(k, iv, iu) = static_cast<float>(geometry.i0 * std::exp(-detail::ray_integral(mu, s, p)));
      }
  });
  return out;
}

inline ProjectionStack forward_project(const Phantom& phantom, const ConeBeamGeometry& geometry, double energy_kev) {
  if (std::fabs(energy_kev - phantom.energy_kev) > 1e-9)
    throw ConfigError("forward_project: phantom attenuation is tabulated at " + std::to_string(phantom.energy_kev) +
                      " keV, requested " + std::to_string(energy_kev) + " keV");
  return forward_project(phantom.mu_volume(), geometry);
}

// ---------------------------------------------------------------------------
// Scatter synthesis

/// Isotropic Gaussian point-scatter kernel on the detector grid, unit sum,
/// (2 radius + 1)^2 taps, row-major.
struct ScatterKernel {
  int radius = 0;
  std::vector<double> values;

  double at(int dy, int dx) const {
    const int w = 2 * radius + 1;
    return values[static_cast<std::size_t>((dy + radius) * w + dx + radius)];
  }
};

inline std::vector<double> gaussian_taps(double sigma_px, int radius) {
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma_px * sigma_px));
    taps[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : taps) v /= total;
  return taps;
}

inline ScatterKernel point_scatter_kernel(double sigma_mm, double pitch_mm, int support_radius_px) {
  if (!(sigma_mm > 0) || !(pitch_mm > 0)) throw ConfigError("point_scatter_kernel: width and pitch must be positive");
  const double sigma_px = sigma_mm / pitch_mm;
  if (support_radius_px < 3 * sigma_px)
    throw ConfigError("point_scatter_kernel: support radius must cover at least 3 sigma");
  ScatterKernel k;
  k.radius = support_radius_px;
  const int w = 2 * support_radius_px + 1;
  k.values.resize(static_cast<std::size_t>(w) * w);
  double total = 0;
  for (int dy = -k.radius; dy <= k.radius; ++dy)
    for (int dx = -k.radius; dx <= k.radius; ++dx) {
      const double v = std::exp(-0.5 * (dx * dx + dy * dy) / (sigma_px * sigma_px));
      k.values[static_cast<std::size_t>((dy + k.radius) * w + dx + k.radius)] = v;
      total += v;
    }
  for (auto& v : k.values) v /= total;
  return k;
}

/// Zero-padded "same" convolution of an h x w image with the outer product
/// taps x taps.
inline std::vector<double> convolve_separable(std::span<const double> image, std::size_t h, std::size_t w,
                                              const std::vector<double>& taps) {
  const long r = static_cast<long>(taps.size() / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  std::vector<double> tmp(h * w, 0.0), out(h * w, 0.0);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double acc = 0;
      for (long t = std::max(-r, -x); t <= std::min(r, W - 1 - x); ++t) acc += taps[static_cast<std::size_t>(t + r)] * image[static_cast<std::size_t>(y * W + x + t)];
      tmp[static_cast<std::size_t>(y * W + x)] = acc;
    }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double acc = 0;
      for (long t = std::max(-r, -y); t <= std::min(r, H - 1 - y); ++t) acc += taps[static_cast<std::size_t>(t + r)] * tmp[static_cast<std::size_t>((y + t) * W + x)];
      out[static_cast<std::size_t>(y * W + x)] = acc;
    }
  return out;
}

/// Ground-truth scatter model: source map a * I * p^k (p the line integral)
/// blurred by a primary Gaussian blended with an optional wide tail.
struct ScatterModelParams {
  double sigma_mm = 25.0;
  double amplitude = 0.2316;  // calibrated: mean peak SPR 1.0 on the default head set
  double exponent = 1.5;
  double tail_sigma_mm = 70.0;  // 0 disables the tail
  double tail_weight = 0.35;

  void validate() const {
    if (!(sigma_mm > 0)) throw ConfigError("scatter: kernel width must be positive");
    if (!(amplitude >= 0)) throw ConfigError("scatter: amplitude must be non-negative");
    if (!(exponent >= 0)) throw ConfigError("scatter: thickness exponent must be non-negative");
    if (!(tail_weight >= 0 && tail_weight <= 1)) throw ConfigError("scatter: tail weight must lie in [0,1]");
    if (tail_weight > 0 && !(tail_sigma_mm > 0)) throw ConfigError("scatter: tail width must be positive");
  }
};

/// Support radius used for synthesis kernels, in pixels.
inline int scatter_support_radius(double sigma_mm, double pitch_mm) {
  return static_cast<int>(std::ceil(4.0 * sigma_mm / pitch_mm));
}

/// a * I * p^k with p = -ln(clamp(I / I0, floor, 1)).
inline std::vector<double> scatter_source(std::span<const float> intensity, double i0, double amplitude, double exponent,
                                          double floor_ratio = 0.0) {
  std::vector<double> s(intensity.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double ratio = std::clamp(static_cast<double>(intensity[i]) / i0, floor_ratio, 1.0);
    const double p = ratio > 0 ? -std::log(ratio) : 0.0;
    s[i] = p > 0 ? amplitude * intensity[i] * std::pow(p, exponent) : 0.0;
  }
  return s;
}

inline ProjectionStack synthesize_scatter(const ProjectionStack& primary, double i0, const ScatterModelParams& params) {
  params.validate();
  if (!(i0 > 0)) throw ConfigError("synthesize_scatter: I0 must be positive");
  for (float v : primary.data)
    if (!(v > 0)) throw DomainError("synthesize_scatter: primary intensities must be positive");
  const double pitch = primary.require_geometry().pitch_mm;
  const auto main_taps = gaussian_taps(params.sigma_mm / pitch, scatter_support_radius(params.sigma_mm, pitch));
  std::vector<double> tail_taps;
  if (params.tail_weight > 0)
    tail_taps = gaussian_taps(params.tail_sigma_mm / pitch, scatter_support_radius(params.tail_sigma_mm, pitch));

  ProjectionStack out = primary;
  parallel_for(primary.views, [&](std::size_t k) {
    const auto src = scatter_source(primary.view(k), i0, params.amplitude, params.exponent);
    auto blurred = convolve_separable(src, primary.rows, primary.cols, main_taps);
    if (!tail_taps.empty()) {
      const auto wide = convolve_separable(src, primary.rows, primary.cols, tail_taps);
      for (std::size_t i = 0; i < blurred.size(); ++i)
        blurred[i] = (1 - params.tail_weight) * blurred[i] + params.tail_weight * wide[i];
    }
    auto dst = out.view(k);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(blurred[i]);
  });
  return out;
}

/// Measured signal I_m = I_p + I_s, elementwise in float.
inline ProjectionStack combine_signal(const ProjectionStack& primary, const ProjectionStack& scatter) {
  require_same_layout(primary, scatter, "combine_signal");
  ProjectionStack out = primary;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = primary.data[i] + scatter.data[i];
  return out;
}

struct SprStats {
  double peak = 0;
  double mean = 0;
};

/// Scatter-to-primary ratio over the object shadow, the pixels whose line
/// integral -ln(I_p/I0) exceeds `shadow_threshold`.
inline SprStats spr(const ProjectionStack& scatter, const ProjectionStack& primary, double i0,
                    double shadow_threshold = 0.05) {
  require_same_layout(scatter, primary, "spr");
  const double cut = i0 * std::exp(-shadow_threshold);
  SprStats s;
  std::size_t n = 0;
  for (std::size_t i = 0; i < primary.data.size(); ++i) {
    const double ip = primary.data[i];
    if (!(ip > 0)) throw DomainError("spr: primary must be positive");
    if (ip >= cut) continue;
    const double r = scatter.data[i] / ip;
    s.peak = std::max(s.peak, r);
    s.mean += r;
    ++n;
  }
  if (n) s.mean /= static_cast<double>(n);
  return s;
}

/// Amplitude for which the mean (over the given scans) of the peak SPR hits
/// `target`, found by bisection. The scatter field is linear in the
/// amplitude, so each scan is synthesized once at a = 1 and rescaled.
inline double calibrate_scatter_amplitude(const std::vector<ProjectionStack>& primaries, double i0,
                                          ScatterModelParams params, double target = 1.0, double rel_tol = 1e-4) {
  if (primaries.empty()) throw ConfigError("calibrate_scatter_amplitude: no scans");
  if (!(target > 0)) throw ConfigError("calibrate_scatter_amplitude: target SPR must be positive");
  params.amplitude = 1.0;
  std::vector<ProjectionStack> unit;
  unit.reserve(primaries.size());
  for (const auto& p : primaries) unit.push_back(synthesize_scatter(p, i0, params));
  auto mean_peak = [&](double a) {
    double total = 0;
    for (std::size_t s = 0; s < primaries.size(); ++s) {
      ProjectionStack scaled = unit[s];
      for (auto& v : scaled.data) v = static_cast<float>(a * v);
      total += spr(scaled, primaries[s], i0).peak;
    }
    return total / static_cast<double>(primaries.size());
  };
  double lo = 0, hi = 0.05;
  while (mean_peak(hi) < target) {
    lo = hi;
    hi *= 2;
    if (hi > 1e6) throw NumericError("calibrate_scatter_amplitude: target SPR unreachable");
  }
  while ((hi - lo) > rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    (mean_peak(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Independent Poisson draw per pixel with the pixel value as mean. Each view
/// has its own stream derived from (seed, view), so results do not depend on
/// evaluation order.
inline ProjectionStack add_poisson_noise(const ProjectionStack& in, std::uint64_t seed) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  ProjectionStack out = in;
  parallel_for(in.views, [&](std::size_t k) {
    std::mt19937_64 rng(mix(seed ^ mix(k + 1)));
    auto dst = out.view(k);
    const auto src = in.view(k);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const double mean = src[i];
      if (mean < 0) throw DomainError("add_poisson_noise: negative intensity");
      dst[i] = mean == 0 ? 0.0f : static_cast<float>(std::poisson_distribution<long long>(mean)(rng));
    }
  });
  return out;
}

/// Fraction of the 2-D spectral energy of an image at radial frequencies
/// above `fraction_of_nyquist` times the Nyquist frequency.
inline double high_frequency_energy_fraction(std::span<const float> image, std::size_t h, std::size_t w,
                                             double fraction_of_nyquist = 0.25) {
  std::vector<double> buf(image.begin(), image.end());
  const auto power = power_spectrum_2d(buf, h, w);
  const std::size_t wc = w / 2 + 1;
  double total = 0, high = 0;
  for (std::size_t ky = 0; ky < h; ++ky) {
    const double fy = (ky <= h / 2 ? static_cast<double>(ky) : static_cast<double>(ky) - h) / h;
    for (std::size_t kx = 0; kx < wc; ++kx) {
      const double fx = static_cast<double>(kx) / w;
      // Half-plane storage: interior columns stand for a conjugate pair.
      const double mult = (kx == 0 || (w % 2 == 0 && kx == w / 2)) ? 1.0 : 2.0;
      const double e = mult * power[ky * wc + kx];
      total += e;
      if (std::hypot(fx, fy) / 0.5 > fraction_of_nyquist) high += e;
    }
  }
  return total > 0 ? high / total : 0.0;
}

}  // namespace gkan
