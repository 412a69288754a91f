#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gkan/error.hpp"
#include "gkan/projection.hpp"
#include "gkan/tensor.hpp"

namespace gkan::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

/// Writes raw little-endian IEEE-754 values, no header.
template <typename T>
void write_blob(const fs::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

/// Reads a raw blob, insisting on exactly `count` values.
template <typename T>
std::vector<T> read_blob(const fs::path& path, std::size_t count) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw DataError("cannot stat '" + path.string() + "'");
  if (bytes != count * sizeof(T))
    throw DataError("'" + path.string() + "' holds " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(count * sizeof(T)));
  std::vector<T> values(count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("short read from '" + path.string() + "'");
  return values;
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Tensor files: <base>.f32 blob + <base>.json sidecar

inline const std::vector<std::string>& known_kinds() {
  static const std::vector<std::string> k{"projections", "volume", "scatter"};
  return k;
}
inline const std::vector<std::string>& known_units() {
  static const std::vector<std::string> u{"photons", "mm^-1", "HU", "ratio", "line_integral"};
  return u;
}

struct TensorFile {
  Shape shape;
  std::string kind;
  std::string units;
  json geometry = json::object();
  std::vector<float> data;
};

/// Strips a .json / .f32 suffix so either file of a pair names the pair.
inline fs::path base_path(const fs::path& p) {
  if (p.extension() == ".json" || p.extension() == ".f32") return fs::path(p).replace_extension();
  return p;
}
inline fs::path blob_path(const fs::path& p) { return fs::path(base_path(p).string() + ".f32"); }
inline fs::path sidecar_path(const fs::path& p) { return fs::path(base_path(p).string() + ".json"); }

inline bool tensor_file_exists(const fs::path& p) { return fs::exists(sidecar_path(p)) && fs::exists(blob_path(p)); }

inline void write_tensor_file(const fs::path& p, const TensorFile& t) {
  if (shape_numel(t.shape) != t.data.size()) throw DimensionError("write_tensor_file: data does not match shape");
  if (auto dir = base_path(p).parent_path(); !dir.empty()) fs::create_directories(dir);
  write_blob<float>(blob_path(p), t.data);
  write_json(sidecar_path(p), json{{"shape", t.shape},
                                   {"dtype", "f32"},
                                   {"kind", t.kind},
                                   {"units", t.units},
                                   {"geometry", t.geometry},
                                   {"blob", blob_path(p).filename().string()}});
}

/// Validates the sidecar against the blob before returning any data.
inline TensorFile read_tensor_file(const fs::path& p) {
  const json meta = read_json(sidecar_path(p));
  TensorFile t;
  try {
    t.shape = meta.at("shape").get<Shape>();
    t.kind = meta.at("kind").get<std::string>();
    t.units = meta.at("units").get<std::string>();
    if (meta.at("dtype").get<std::string>() != "f32") throw DataError("unsupported dtype");
    if (meta.contains("geometry")) t.geometry = meta.at("geometry");
  } catch (const json::exception& e) {
    throw DataError("malformed sidecar '" + sidecar_path(p).string() + "': " + e.what());
  }
  if (t.shape.empty() || shape_numel(t.shape) == 0) throw DataError("sidecar shape must be non-empty and positive");
  if (std::find(known_kinds().begin(), known_kinds().end(), t.kind) == known_kinds().end())
    throw DataError("unknown tensor kind '" + t.kind + "'");
  if (std::find(known_units().begin(), known_units().end(), t.units) == known_units().end())
    throw DataError("unknown units '" + t.units + "'");
  t.data = read_blob<float>(blob_path(p), shape_numel(t.shape));
  return t;
}

// ---------------------------------------------------------------------------
// Domain objects <-> tensor files

inline json geometry_to_json(const ConeBeamGeometry& g) {
  return {{"sid_mm", g.sid_mm}, {"sdd_mm", g.sdd_mm}, {"nu", g.nu}, {"nv", g.nv},
          {"pitch_mm", g.pitch_mm}, {"i0", g.i0}, {"angles", g.angles}};
}

inline ConeBeamGeometry geometry_from_json(const json& j) {
  ConeBeamGeometry g;
  try {
    g.sid_mm = j.at("sid_mm").get<double>();
    g.sdd_mm = j.at("sdd_mm").get<double>();
    g.nu = j.at("nu").get<std::size_t>();
    g.nv = j.at("nv").get<std::size_t>();
    g.pitch_mm = j.at("pitch_mm").get<double>();
    g.i0 = j.at("i0").get<double>();
    g.angles = j.at("angles").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed geometry: ") + e.what());
  }
  g.validate();
  return g;
}

inline void write_projections(const fs::path& p, const ProjectionStack& s, const std::string& kind = "projections",
                              const std::string& units = "photons") {
  TensorFile t{{s.views, s.rows, s.cols}, kind, units, s.geometry ? geometry_to_json(*s.geometry) : json::object(), s.data};
  write_tensor_file(p, t);
}

/// Reads a projection-like stack; `expected_kind` empty accepts projections
/// or scatter.
inline ProjectionStack read_projections(const fs::path& p, const std::string& expected_kind = "") {
  auto t = read_tensor_file(p);
  if (t.kind == "volume" || (!expected_kind.empty() && t.kind != expected_kind))
    throw DataError("'" + p.string() + "' has kind '" + t.kind + "', expected " +
                    (expected_kind.empty() ? std::string("projections or scatter") : expected_kind));
  if (t.shape.size() != 3) throw DataError("projection stacks must have shape [views,rows,cols]");
  ProjectionStack s(t.shape[0], t.shape[1], t.shape[2]);
  s.data = std::move(t.data);
  if (!t.geometry.empty()) {
    s.geometry = geometry_from_json(t.geometry);
    if (s.geometry->views() != s.views || s.geometry->nv != s.rows || s.geometry->nu != s.cols)
      throw DataError("'" + p.string() + "': geometry does not match the stack shape");
  }
  return s;
}

inline void write_volume(const fs::path& p, const Volume& v, const std::string& units = "mm^-1") {
  TensorFile t{{v.nz, v.ny, v.nx},
               "volume",
               units,
               {{"voxel_mm", v.voxel_mm}, {"origin_mm", {v.origin_mm[0], v.origin_mm[1], v.origin_mm[2]}}},
               v.data};
  write_tensor_file(p, t);
}

inline std::pair<Volume, std::string> read_volume(const fs::path& p) {
  auto t = read_tensor_file(p);
  if (t.kind != "volume") throw DataError("'" + p.string() + "' has kind '" + t.kind + "', expected volume");
  if (t.shape.size() != 3) throw DataError("volumes must have shape [nz,ny,nx]");
  Volume v(t.shape[2], t.shape[1], t.shape[0], t.geometry.value("voxel_mm", 1.0));
  if (t.geometry.contains("origin_mm")) {
    const auto o = t.geometry.at("origin_mm").get<std::vector<double>>();
    if (o.size() != 3) throw DataError("origin_mm must have three entries");
    for (int i = 0; i < 3; ++i) v.origin_mm[i] = o[static_cast<std::size_t>(i)];
  }
  v.data = std::move(t.data);
  return {std::move(v), t.units};
}

}  // namespace gkan::io
