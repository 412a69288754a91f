#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gkan/error.hpp"
#include "gkan/io.hpp"
#include "gkan/metrics.hpp"
#include "gkan/net.hpp"
#include "gkan/physics.hpp"
#include "gkan/projection.hpp"
#include "gkan/recon.hpp"
#include "gkan/train.hpp"

namespace gkan {

inline constexpr int kConfigSchemaVersion = 1;

struct PhantomSection {
  std::uint64_t seed = 1000;  // phantom i uses seed + i
  std::size_t train_count = 8;
  std::size_t validation_count = 1;
  PhantomDims dims{};
  double voxel_mm = 1.6;
  MaterialTable materials{};
};

struct GeometrySection {
  std::size_t views = 90;
  std::size_t nu = 128, nv = 128;
  double pitch_mm = 1.6;
  double sid_mm = 500.0;
  double sdd_mm = 1000.0;
  double i0 = 1e5;

  ConeBeamGeometry build() const {
    auto g = ConeBeamGeometry::circular(views, nu, nv, pitch_mm, sid_mm, sdd_mm, i0);
    g.validate();
    return g;
  }
};

struct ScatterSection {
  ScatterModelParams model{};
  bool noise = true;
  std::uint64_t seed = 2000;  // noise streams
};

struct NetworkSection {
  UNetConfig unet{};
  std::uint64_t seed = 3000;  // initialization
};

struct ReconSection {
  ReconGrid grid{};
  int median_window = 3;
};

struct EvalSection {
  double hu_data_range = 2000.0;
  std::vector<RoiSpec> rois;  // empty: one central disk per volume
  bool preview = false;       // write PGM preview slices
};

/// Every tunable of a run. Loading is strict: unknown keys are rejected and
/// each stochastic section must carry an explicit seed.
struct RunConfig {
  PhantomSection phantom;
  GeometrySection geometry;
  ScatterSection scatter;
  NetworkSection network;
  TrainConfig train{};
  ReconSection recon;
  EvalSection eval;

  void validate() const {
    if (phantom.train_count + phantom.validation_count == 0) throw ConfigError("phantom: need at least one phantom");
    phantom.materials.validate();
    geometry.build();
    scatter.model.validate();
    network.unet.validate();
    train.validate();
    recon.grid.validate();
    if (recon.median_window < 1 || recon.median_window % 2 == 0) throw ConfigError("recon: median window must be odd");
    if (!(eval.hu_data_range > 0)) throw ConfigError("eval: HU data range must be positive");
  }

  /// Central soft-tissue disk on the middle axial slice.
  std::vector<RoiSpec> rois_for(const Volume& v) const {
    if (!eval.rois.empty()) return eval.rois;
    RoiSpec r;
    r.name = "center";
    r.slice = v.nz / 2;
    r.cx = (static_cast<double>(v.nx) - 1) / 2;
    r.cy = (static_cast<double>(v.ny) - 1) / 2;
    r.radius = std::max(2.0, static_cast<double>(std::min(v.nx, v.ny)) / 12.0);
    return {r};
  }

  nlohmann::json to_json() const {
    nlohmann::json rois = nlohmann::json::array();
    for (const auto& r : eval.rois) rois.push_back(r.to_json());
    return {
        {"schema_version", kConfigSchemaVersion},
        {"phantom",
         {{"seed", phantom.seed},
          {"train_count", phantom.train_count},
          {"validation_count", phantom.validation_count},
          {"dims", {phantom.dims.nx, phantom.dims.ny, phantom.dims.nz}},
          {"voxel_mm", phantom.voxel_mm},
          {"materials", phantom.materials.to_json()}}},
        {"geometry",
         {{"views", geometry.views},
          {"nu", geometry.nu},
          {"nv", geometry.nv},
          {"pitch_mm", geometry.pitch_mm},
          {"sid_mm", geometry.sid_mm},
          {"sdd_mm", geometry.sdd_mm},
          {"i0", geometry.i0}}},
        {"scatter",
         {{"sigma_mm", scatter.model.sigma_mm},
          {"amplitude", scatter.model.amplitude},
          {"exponent", scatter.model.exponent},
          {"tail_sigma_mm", scatter.model.tail_sigma_mm},
          {"tail_weight", scatter.model.tail_weight},
          {"noise", scatter.noise},
          {"seed", scatter.seed}}},
        {"network", [&] {
           auto j = network.unet.to_json();
           j["seed"] = network.seed;
           return j;
         }()},
        {"train", train.to_json()},
        {"recon",
         {{"dims", {recon.grid.nx, recon.grid.ny, recon.grid.nz}},
          {"voxel_mm", recon.grid.voxel_mm},
          {"origin_mm", {recon.grid.origin_mm[0], recon.grid.origin_mm[1], recon.grid.origin_mm[2]}},
          {"median_window", recon.median_window}}},
        {"eval", {{"hu_data_range", eval.hu_data_range}, {"rois", rois}, {"preview", eval.preview}}}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      if (!j.is_object()) throw ConfigError("config: top level must be an object");
      if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
      if (j.at("schema_version").get<int>() != kConfigSchemaVersion)
        throw ConfigError("config: unsupported schema_version " + j.at("schema_version").dump());
      for (const char* section : {"phantom", "scatter", "network", "train"}) {
        if (!j.contains(section) || !j.at(section).contains("seed"))
          throw ConfigError(std::string("config: section '") + section + "' must set an explicit seed");
      }
      for (const auto& [section, body] : j.items()) {
        if (section == "schema_version") continue;
        if (section == "phantom") c.phantom = parse_phantom(body);
        else if (section == "geometry") c.geometry = parse_geometry(body);
        else if (section == "scatter") c.scatter = parse_scatter(body);
        else if (section == "network") c.network = parse_network(body);
        else if (section == "train") c.train = TrainConfig::from_json(body);
        else if (section == "recon") c.recon = parse_recon(body);
        else if (section == "eval") c.eval = parse_eval(body);
        else throw ConfigError("config: unknown section '" + section + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
      j = io::read_json(path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    return from_json(j);
  }

 private:
  static void dims3(const nlohmann::json& v, std::size_t& x, std::size_t& y, std::size_t& z) {
    const auto d = v.get<std::vector<std::size_t>>();
    if (d.size() != 3) throw ConfigError("config: dims must have three entries");
    x = d[0], y = d[1], z = d[2];
  }

  static PhantomSection parse_phantom(const nlohmann::json& j) {
    PhantomSection p;
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") p.seed = v.get<std::uint64_t>();
      else if (key == "train_count") p.train_count = v.get<std::size_t>();
      else if (key == "validation_count") p.validation_count = v.get<std::size_t>();
      else if (key == "dims") dims3(v, p.dims.nx, p.dims.ny, p.dims.nz);
      else if (key == "voxel_mm") p.voxel_mm = v.get<double>();
      else if (key == "materials") p.materials = MaterialTable::from_json(v);
      else throw ConfigError("phantom: unknown key '" + key + "'");
    }
    return p;
  }

  static GeometrySection parse_geometry(const nlohmann::json& j) {
    GeometrySection g;
    for (const auto& [key, v] : j.items()) {
      if (key == "views") g.views = v.get<std::size_t>();
      else if (key == "nu") g.nu = v.get<std::size_t>();
      else if (key == "nv") g.nv = v.get<std::size_t>();
      else if (key == "pitch_mm") g.pitch_mm = v.get<double>();
      else if (key == "sid_mm") g.sid_mm = v.get<double>();
      else if (key == "sdd_mm") g.sdd_mm = v.get<double>();
      else if (key == "i0") g.i0 = v.get<double>();
      else throw ConfigError("geometry: unknown key '" + key + "'");
    }
    return g;
  }

  static ScatterSection parse_scatter(const nlohmann::json& j) {
    ScatterSection s;
    for (const auto& [key, v] : j.items()) {
      if (key == "sigma_mm") s.model.sigma_mm = v.get<double>();
      else if (key == "amplitude") s.model.amplitude = v.get<double>();
      else if (key == "exponent") s.model.exponent = v.get<double>();
      else if (key == "tail_sigma_mm") s.model.tail_sigma_mm = v.get<double>();
      else if (key == "tail_weight") s.model.tail_weight = v.get<double>();
      else if (key == "noise") s.noise = v.get<bool>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else throw ConfigError("scatter: unknown key '" + key + "'");
    }
    return s;
  }

  static NetworkSection parse_network(nlohmann::json j) {
    NetworkSection n;
    n.seed = j.at("seed").get<std::uint64_t>();
    j.erase("seed");
    n.unet = UNetConfig::from_json(j);
    return n;
  }

  static ReconSection parse_recon(const nlohmann::json& j) {
    ReconSection r;
    for (const auto& [key, v] : j.items()) {
      if (key == "dims") dims3(v, r.grid.nx, r.grid.ny, r.grid.nz);
      else if (key == "voxel_mm") r.grid.voxel_mm = v.get<double>();
      else if (key == "origin_mm") {
        const auto o = v.get<std::vector<double>>();
        if (o.size() != 3) throw ConfigError("recon: origin_mm must have three entries");
        for (int i = 0; i < 3; ++i) r.grid.origin_mm[i] = o[static_cast<std::size_t>(i)];
      } else if (key == "median_window") r.median_window = v.get<int>();
      else throw ConfigError("recon: unknown key '" + key + "'");
    }
    return r;
  }

  static EvalSection parse_eval(const nlohmann::json& j) {
    EvalSection e;
    for (const auto& [key, v] : j.items()) {
      if (key == "hu_data_range") e.hu_data_range = v.get<double>();
      else if (key == "rois") {
        for (const auto& r : v) e.rois.push_back(RoiSpec::from_json(r));
      } else if (key == "preview") e.preview = v.get<bool>();
      else throw ConfigError("eval: unknown key '" + key + "'");
    }
    return e;
  }
};

}  // namespace gkan
