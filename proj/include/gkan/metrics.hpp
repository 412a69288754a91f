#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gkan/error.hpp"
#include "gkan/parallel.hpp"
#include "gkan/projection.hpp"

namespace gkan {

namespace detail {
inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": inputs differ in size (" + std::to_string(a) + " vs " +
                                   std::to_string(b) + ")");
  if (a == 0) throw DimensionError(std::string(what) + ": empty input");
}

inline double mean_squared_error(std::span<const float> a, std::span<const float> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}
}  // namespace detail

/// 10 log10(range^2 / MSE); +infinity when the inputs are identical.
inline double psnr(std::span<const float> a, std::span<const float> b, double data_range) {
  detail::require_same_size(a.size(), b.size(), "psnr");
  if (!(data_range > 0)) throw DomainError("psnr: data range must be positive");
  const double mse = detail::mean_squared_error(a, b);
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

inline double rmse(std::span<const float> a, std::span<const float> b) {
  detail::require_same_size(a.size(), b.size(), "rmse");
  return std::sqrt(detail::mean_squared_error(a, b));
}

/// Mean structural similarity of two h x w images: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, averaged over window positions that lie
/// fully inside the image.
inline double ssim(std::span<const float> a, std::span<const float> b, std::size_t h, std::size_t w,
                   double data_range) {
  detail::require_same_size(a.size(), b.size(), "ssim");
  if (a.size() != h * w) throw DimensionError("ssim: buffer does not match extents");
  constexpr std::size_t win = 11;
  constexpr double sigma = 1.5;
  if (h < win || w < win) throw DimensionError("ssim: images must be at least 11x11");
  if (!(data_range > 0)) throw DomainError("ssim: data range must be positive");

  std::vector<double> g(win);
  double gsum = 0;
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    gsum += g[i];
  }
  for (auto& v : g) v /= gsum;

  const std::size_t oh = h - win + 1, ow = w - win + 1;
  // Five moment images filtered horizontally, then vertically.
  auto filter = [&](auto&& f) {
    std::vector<double> horiz(h * ow), out(oh * ow);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0;
        for (std::size_t t = 0; t < win; ++t) s += g[t] * f(y * w + x + t);
        horiz[y * ow + x] = s;
      }
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0;
        for (std::size_t t = 0; t < win; ++t) s += g[t] * horiz[(y + t) * ow + x];
        out[y * ow + x] = s;
      }
    return out;
  };
  auto A = [&](std::size_t i) { return static_cast<double>(a[i]); };
  auto B = [&](std::size_t i) { return static_cast<double>(b[i]); };
  const auto mu_a = filter(A);
  const auto mu_b = filter(B);
  const auto aa = filter([&](std::size_t i) { return A(i) * A(i); });
  const auto bb = filter([&](std::size_t i) { return B(i) * B(i); });
  const auto ab = filter([&](std::size_t i) { return A(i) * B(i); });

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double total = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = aa[i] - mu_a[i] * mu_a[i];
    const double vb = bb[i] - mu_b[i] * mu_b[i];
    const double cov = ab[i] - mu_a[i] * mu_b[i];
    total += (2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

/// Axial disk: voxels with (x-cx)^2 + (y-cy)^2 <= r^2 on one slice.
struct RoiSpec {
  std::string name = "roi";
  std::size_t slice = 0;
  double cx = 0, cy = 0;
  double radius = 1;

  void validate(const Volume& v) const {
    if (!(radius > 0)) throw DomainError("roi '" + name + "': radius must be positive");
    if (slice >= v.nz || cx - radius < 0 || cy - radius < 0 || cx + radius > static_cast<double>(v.nx) - 1 ||
        cy + radius > static_cast<double>(v.ny) - 1)
      throw DomainError("roi '" + name + "' lies outside the volume");
  }

  nlohmann::json to_json() const {
    return {{"name", name}, {"slice", slice}, {"cx", cx}, {"cy", cy}, {"radius", radius}};
  }
  static RoiSpec from_json(const nlohmann::json& j) {
    RoiSpec r;
    for (const auto& [key, v] : j.items()) {
      if (key == "name") r.name = v.get<std::string>();
      else if (key == "slice") r.slice = v.get<std::size_t>();
      else if (key == "cx") r.cx = v.get<double>();
      else if (key == "cy") r.cy = v.get<double>();
      else if (key == "radius") r.radius = v.get<double>();
      else throw ConfigError("roi: unknown key '" + key + "'");
    }
    return r;
  }
};

struct RoiStats {
  double mean = 0;
  double std = 0;  // population
  double error = 0;
  std::size_t count = 0;
};

inline RoiStats roi_stats(const Volume& vol, const RoiSpec& roi, double reference_mean) {
  roi.validate(vol);
  double sum = 0, sum_sq = 0;
  std::size_t n = 0;
  const auto x0 = static_cast<std::size_t>(std::ceil(roi.cx - roi.radius));
  const auto x1 = static_cast<std::size_t>(std::floor(roi.cx + roi.radius));
  const auto y0 = static_cast<std::size_t>(std::ceil(roi.cy - roi.radius));
  const auto y1 = static_cast<std::size_t>(std::floor(roi.cy + roi.radius));
  for (std::size_t y = y0; y <= y1; ++y)
    for (std::size_t x = x0; x <= x1; ++x) {
      const double dx = static_cast<double>(x) - roi.cx, dy = static_cast<double>(y) - roi.cy;
      if (dx * dx + dy * dy > roi.radius * roi.radius) continue;
      const double v = vol.at(x, y, roi.slice);
      sum += v;
      sum_sq += v * v;
      ++n;
    }
  RoiStats s;
  s.count = n;
  s.mean = sum / static_cast<double>(n);
  s.std = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - s.mean * s.mean));
  s.error = s.mean - reference_mean;
  return s;
}

// ---------------------------------------------------------------------------
// Reports

struct MeanStd {
  double mean = 0;
  double std = 0;
};

/// Population mean and std; an infinite entry makes the mean infinite and the
/// std undefined (reported as NaN).
inline MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (!std::isfinite(m.mean)) {
    m.std = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  for (double v : values) m.std += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(values.size()));
  return m;
}

struct ItemMetrics {
  std::size_t index = 0;
  double psnr = 0, ssim = 0, rmse = 0;
};

struct RoiRow {
  RoiSpec roi;
  RoiStats pred;
  double reference_mean = 0;
  double reference_std = 0;
};

struct EvalReport {
  std::string axis = "view";  // "view" for projection stacks, "slice" for volumes
  std::string units;
  double data_range = 0;
  std::vector<ItemMetrics> per_view;
  MeanStd psnr, ssim, rmse;
  double overall_psnr = 0;  // over the whole stack / volume
  double overall_rmse = 0;
  std::vector<RoiRow> roi;

  void aggregate() {
    std::vector<double> p, s, r;
    for (const auto& m : per_view) {
      p.push_back(m.psnr);
      s.push_back(m.ssim);
      r.push_back(m.rmse);
    }
    psnr = mean_std(p);
    ssim = mean_std(s);
    rmse = mean_std(r);
  }

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  std::string to_text() const;
};

namespace detail {
// JSON has no infinities; they travel as strings.
inline nlohmann::json number_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}
inline double number_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw DataError("report: bad numeric string '" + s + "'");
  }
  return j.get<double>();
}
inline nlohmann::json mean_std_json(const MeanStd& m) { return {{"mean", number_to_json(m.mean)}, {"std", number_to_json(m.std)}}; }
inline MeanStd mean_std_from(const nlohmann::json& j) { return {number_from_json(j.at("mean")), number_from_json(j.at("std"))}; }

inline std::string fmt(double v, int precision = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}
}  // namespace detail

inline nlohmann::json EvalReport::to_json() const {
  using detail::number_to_json;
  nlohmann::json views = nlohmann::json::array();
  for (const auto& m : per_view)
    views.push_back({{"index", m.index}, {"psnr", number_to_json(m.psnr)}, {"ssim", number_to_json(m.ssim)},
                     {"rmse", number_to_json(m.rmse)}});
  nlohmann::json rois = nlohmann::json::array();
  for (const auto& r : roi)
    rois.push_back({{"roi", r.roi.to_json()},
                    {"mean", number_to_json(r.pred.mean)},
                    {"std", number_to_json(r.pred.std)},
                    {"error", number_to_json(r.pred.error)},
                    {"count", r.pred.count},
                    {"reference_mean", number_to_json(r.reference_mean)},
                    {"reference_std", number_to_json(r.reference_std)}});
  return {{"axis", axis},
          {"units", units},
          {"data_range", data_range},
          {"per_view", views},
          {"aggregates",
           {{"psnr", detail::mean_std_json(psnr)},
            {"ssim", detail::mean_std_json(ssim)},
            {"rmse", detail::mean_std_json(rmse)},
            {"overall_psnr", number_to_json(overall_psnr)},
            {"overall_rmse", number_to_json(overall_rmse)}}},
          {"roi", rois}};
}

inline EvalReport EvalReport::from_json(const nlohmann::json& j) {
  using detail::number_from_json;
  EvalReport r;
  try {
    r.axis = j.at("axis").get<std::string>();
    r.units = j.at("units").get<std::string>();
    r.data_range = j.at("data_range").get<double>();
    for (const auto& v : j.at("per_view"))
      r.per_view.push_back({v.at("index").get<std::size_t>(), number_from_json(v.at("psnr")),
                            number_from_json(v.at("ssim")), number_from_json(v.at("rmse"))});
    const auto& ag = j.at("aggregates");
    r.psnr = detail::mean_std_from(ag.at("psnr"));
    r.ssim = detail::mean_std_from(ag.at("ssim"));
    r.rmse = detail::mean_std_from(ag.at("rmse"));
    r.overall_psnr = number_from_json(ag.at("overall_psnr"));
    r.overall_rmse = number_from_json(ag.at("overall_rmse"));
    for (const auto& e : j.at("roi")) {
      RoiRow row;
      row.roi = RoiSpec::from_json(e.at("roi"));
      row.pred.mean = number_from_json(e.at("mean"));
      row.pred.std = number_from_json(e.at("std"));
      row.pred.error = number_from_json(e.at("error"));
      row.pred.count = e.at("count").get<std::size_t>();
      row.reference_mean = number_from_json(e.at("reference_mean"));
      row.reference_std = number_from_json(e.at("reference_std"));
      r.roi.push_back(row);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

inline std::string EvalReport::to_text() const {
  using detail::fmt;
  std::ostringstream os;
  const std::string head = axis == "slice" ? "slice" : "view";
  os << std::left << std::setw(8) << head << std::right << std::setw(12) << "PSNR[dB]" << std::setw(10) << "SSIM"
     << std::setw(14) << ("RMSE[" + units + "]") << '\n';
  for (const auto& m : per_view)
    os << std::left << std::setw(8) << m.index << std::right << std::setw(12) << fmt(m.psnr, 3) << std::setw(10)
       << fmt(m.ssim, 4) << std::setw(14) << fmt(m.rmse, 4) << '\n';
  os << std::left << std::setw(8) << "mean" << std::right << std::setw(12) << fmt(psnr.mean, 3) << std::setw(10)
     << fmt(ssim.mean, 4) << std::setw(14) << fmt(rmse.mean, 4) << '\n';
  os << std::left << std::setw(8) << "std" << std::right << std::setw(12) << fmt(psnr.std, 3) << std::setw(10)
     << fmt(ssim.std, 4) << std::setw(14) << fmt(rmse.std, 4) << '\n';
  os << "overall PSNR " << fmt(overall_psnr, 3) << " dB, RMSE " << fmt(overall_rmse, 4) << ' ' << units
     << " (data range " << fmt(data_range, 3) << ")\n";
  if (!roi.empty()) {
    os << '\n'
       << std::left << std::setw(12) << "ROI" << std::right << std::setw(22) << "mean +- std" << std::setw(22)
       << "reference" << std::setw(12) << "error" << '\n';
    for (const auto& r : roi)
      os << std::left << std::setw(12) << r.roi.name << std::right << std::setw(22)
         << (fmt(r.pred.mean, 3) + " +- " + fmt(r.pred.std, 3)) << std::setw(22)
         << (fmt(r.reference_mean, 3) + " +- " + fmt(r.reference_std, 3)) << std::setw(12) << fmt(r.pred.error, 3)
         << '\n';
  }
  return os.str();
}

inline double max_value(std::span<const float> v) {
  if (v.empty()) throw DimensionError("max_value: empty input");
  return *std::max_element(v.begin(), v.end());
}

/// Per-view metrics of two projection-like stacks. `data_range` defaults to
/// the reference maximum.
inline EvalReport evaluate_projections(const ProjectionStack& pred, const ProjectionStack& ref,
                                       std::optional<double> data_range = {}, std::string units = "photons") {
  require_same_layout(pred, ref, "evaluate");
  EvalReport r;
  r.axis = "view";
  r.units = std::move(units);
  r.data_range = data_range ? *data_range : max_value(ref.data);
  if (!(r.data_range > 0)) throw DomainError("evaluate: data range must be positive");
  r.per_view.resize(pred.views);
  parallel_for(pred.views, [&](std::size_t k) {
    const auto a = pred.view(k), b = ref.view(k);
    r.per_view[k] = {k, psnr(a, b, r.data_range), ssim(a, b, pred.rows, pred.cols, r.data_range), rmse(a, b)};
  });
  r.aggregate();
  r.overall_psnr = psnr(pred.data, ref.data, r.data_range);
  r.overall_rmse = rmse(pred.data, ref.data);
  return r;
}

/// Per-axial-slice metrics of two volumes plus ROI statistics. Each ROI's
/// reference mean is measured on `ref`.
inline EvalReport evaluate_volumes(const Volume& pred, const Volume& ref, const std::vector<RoiSpec>& rois,
                                   double data_range = 2000.0, std::string units = "HU") {
  if (!pred.same_layout(ref)) throw DimensionError("evaluate: volumes differ in layout");
  if (!(data_range > 0)) throw DomainError("evaluate: data range must be positive");
  EvalReport r;
  r.axis = "slice";
  r.units = std::move(units);
  r.data_range = data_range;
  r.per_view.resize(pred.nz);
  parallel_for(pred.nz, [&](std::size_t z) {
    const auto a = pred.slice(z), b = ref.slice(z);
    r.per_view[z] = {z, psnr(a, b, data_range), ssim(a, b, pred.ny, pred.nx, data_range), rmse(a, b)};
  });
  r.aggregate();
  r.overall_psnr = psnr(pred.data, ref.data, data_range);
  r.overall_rmse = rmse(pred.data, ref.data);
  for (const auto& roi : rois) {
    const auto ref_stats = roi_stats(ref, roi, 0.0);
    r.roi.push_back({roi, roi_stats(pred, roi, ref_stats.mean), ref_stats.mean, ref_stats.std});
  }
  return r;
}

}  // namespace gkan
