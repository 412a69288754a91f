// gkan: command-line driver for the scatter-correction pipeline.
//
//   phantom -> simulate -> train -> correct -> reconstruct -> evaluate
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 numeric or training error. Failures print one JSON object on stderr.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11/CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gkan/config.hpp"
#include "gkan/error.hpp"
#include "gkan/io.hpp"
#include "gkan/metrics.hpp"
#include "gkan/net.hpp"
#include "gkan/parallel.hpp"
#include "gkan/physics.hpp"
#include "gkan/recon.hpp"
#include "gkan/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(const gkan::Error& e) {
  if (dynamic_cast<const gkan::ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const gkan::DataError*>(&e) || dynamic_cast<const gkan::DimensionError*>(&e)) return kExitData;
  return kExitNumeric;
}

void report_error(const std::string& category, const std::string& message, int code,
                  std::optional<long> iteration = {}) {
  json j{{"error", category}, {"message", message}, {"exit_code", code}};
  if (iteration) j["iteration"] = *iteration;
  std::cerr << j.dump() << std::endl;
}

struct Common {
  std::string config_path;
  unsigned threads = 0;

  gkan::RunConfig config() const {
    return config_path.empty() ? gkan::RunConfig{} : gkan::RunConfig::load(config_path);
  }
};

// Scan directories under `root`: root itself if it holds a measured stack,
// otherwise its immediate children that do, in name order.
std::vector<fs::path> scan_dirs(const fs::path& root) {
  auto is_scan = [](const fs::path& p) { return gkan::io::tensor_file_exists(p / "measured"); };
  if (!fs::is_directory(root)) throw gkan::DataError("'" + root.string() + "' is not a directory");
  if (is_scan(root)) return {root};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && is_scan(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw gkan::DataError("no scans (measured.json) found under '" + root.string() + "'");
  return out;
}

void write_pgm(const fs::path& path, std::span<const float> image, std::size_t h, std::size_t w, double lo, double hi) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gkan::DataError("cannot write '" + path.string() + "'");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (std::size_t i = 0; i < h * w; ++i) {
    const double t = hi > lo ? (image[i] - lo) / (hi - lo) : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::clamp(t, 0.0, 1.0) * 255.0 + 0.5)));
  }
}

// ---------------------------------------------------------------------------

void cmd_phantom(const Common& common, std::optional<std::uint64_t> seed, const fs::path& out) {
  const auto cfg = common.config();
  const auto phantom = gkan::make_head_phantom(seed.value_or(cfg.phantom.seed), cfg.phantom.dims, cfg.phantom.voxel_mm,
                                               cfg.phantom.materials);
  gkan::io::write_volume(out, phantom.mu_volume(), "mm^-1");
}

void cmd_simulate(const Common& common, const fs::path& phantom_path, const fs::path& out_dir,
                  std::optional<std::uint64_t> seed) {
  const auto cfg = common.config();
  auto [mu, units] = gkan::io::read_volume(phantom_path);
  if (units != "mm^-1") throw gkan::DataError("simulate: phantom must be an attenuation volume (mm^-1)");
  const auto geometry = cfg.geometry.build();
  auto primary = gkan::forward_project(mu, geometry);
  auto scatter = gkan::synthesize_scatter(primary, geometry.i0, cfg.scatter.model);
  if (cfg.scatter.noise) {
    // Primary and scatter photons are counted independently; the measurement
    // is their sum, so I_m = I_p + I_s holds for the noisy stacks too.
    const std::uint64_t s = seed.value_or(cfg.scatter.seed);
    primary = gkan::add_poisson_noise(primary, s);
    scatter = gkan::add_poisson_noise(scatter, s ^ 0x5ca77e25ca77e25cULL);
  }
  const auto measured = gkan::combine_signal(primary, scatter);
  fs::create_directories(out_dir);
  gkan::io::write_projections(out_dir / "primary", primary, "projections", "photons");
  gkan::io::write_projections(out_dir / "scatter", scatter, "scatter", "photons");
  gkan::io::write_projections(out_dir / "measured", measured, "projections", "photons");
}

void cmd_train(const Common& common, const fs::path& data_dir, const fs::path& out_checkpoint, bool quiet) {
  const auto cfg = common.config();
  std::vector<gkan::TrainingPair> pairs;
  std::vector<gkan::ProjectionStack> measured, scatter;
  for (const auto& dir : scan_dirs(data_dir)) {
    measured.push_back(gkan::io::read_projections(dir / "measured", "projections"));
    scatter.push_back(gkan::io::read_projections(dir / "scatter", "scatter"));
    const double i0 = measured.back().require_geometry().i0;
    auto p = gkan::make_pairs(measured.back(), scatter.back(), i0, cfg.network.unet.input_size);
    pairs.insert(pairs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  auto model = gkan::build<float>(cfg.network.unet, cfg.network.seed);
  const std::size_t per_epoch = (pairs.size() + cfg.train.batch_size - 1) / cfg.train.batch_size;
  auto ck = gkan::train(std::move(model), pairs, cfg.train, [&](long it, double loss) {
    if (!quiet && (static_cast<std::size_t>(it + 1) % per_epoch == 0))
      std::cerr << "epoch " << (static_cast<std::size_t>(it) + 1) / per_epoch << " iteration " << it + 1 << " loss "
                << loss << '\n';
  });
  // The classical baseline is fitted on the same scans and stored alongside.
  std::vector<gkan::SksFitSample> samples;
  for (std::size_t i = 0; i < measured.size(); ++i) samples.push_back({&measured[i], &scatter[i]});
  ck.sks = gkan::fit_sks(samples, measured.front().require_geometry().i0);
  gkan::save_checkpoint(out_checkpoint, ck);
}

void cmd_correct(const Common& common, const fs::path& checkpoint, const fs::path& projections, const fs::path& out_dir,
                 const std::string& baseline) {
  const auto cfg = common.config();
  const auto measured = gkan::io::read_projections(projections, "projections");
  const double i0 = measured.require_geometry().i0;
  const auto ck = gkan::load_checkpoint(checkpoint);
  gkan::CorrectionResult result;
  if (baseline == "sks") {
    if (!ck.sks) throw gkan::DataError("checkpoint carries no fitted SKS parameters");
    result = gkan::correct_with_estimate(measured, i0, gkan::sks_baseline(measured, i0, *ck.sks), cfg.recon.median_window);
  } else {
    result = gkan::correct(measured, i0, ck.model, cfg.recon.median_window);
  }
  fs::create_directories(out_dir);
  gkan::io::write_projections(out_dir / "scatter_est", result.scatter, "scatter", "photons");
  gkan::io::write_projections(out_dir / "primary_est", result.primary, "projections", "photons");
}

void cmd_reconstruct(const Common& common, const fs::path& projections, const fs::path& out_volume,
                     const std::string& units, bool denoise) {
  const auto cfg = common.config();
  auto stack = gkan::io::read_projections(projections, "projections");
  const auto geometry = stack.require_geometry();
  if (denoise) stack = gkan::median_denoise(stack, cfg.recon.median_window);
  auto mu = gkan::fdk_reconstruct(gkan::log_transform(stack, geometry.i0), geometry, cfg.recon.grid);
  if (units == "HU") {
    gkan::io::write_volume(out_volume, gkan::mu_to_hu(mu, cfg.phantom.materials.soft_tissue.mu_per_mm), "HU");
  } else {
    gkan::io::write_volume(out_volume, mu, "mm^-1");
  }
}

void cmd_evaluate(const Common& common, const fs::path& pred_path, const fs::path& ref_path, const fs::path& rois_path,
                  const fs::path& out_report, const fs::path& preview_dir) {
  const auto cfg = common.config();
  const auto pred_meta = gkan::io::read_tensor_file(pred_path);
  const auto ref_meta = gkan::io::read_tensor_file(ref_path);
  if ((pred_meta.kind == "volume") != (ref_meta.kind == "volume") || pred_meta.units != ref_meta.units)
    throw gkan::DataError("evaluate: prediction and reference differ in kind or units");
  gkan::EvalReport report;
  fs::path preview = preview_dir;
  if (preview.empty() && cfg.eval.preview) preview = out_report.parent_path() / "preview";
  if (pred_meta.kind == "volume") {
    const auto pred = gkan::io::read_volume(pred_path).first;
    const auto ref = gkan::io::read_volume(ref_path).first;
    std::vector<gkan::RoiSpec> rois;
    if (!rois_path.empty()) {
      for (const auto& r : gkan::io::read_json(rois_path)) rois.push_back(gkan::RoiSpec::from_json(r));
    } else {
      rois = cfg.rois_for(ref);
    }
    const double range = ref_meta.units == "HU" ? cfg.eval.hu_data_range : gkan::max_value(ref.data);
    report = gkan::evaluate_volumes(pred, ref, rois, range, ref_meta.units);
    if (!preview.empty()) {
      fs::create_directories(preview);
      const double lo = ref_meta.units == "HU" ? -1000.0 : 0.0, hi = lo + range;
      write_pgm(preview / "pred_mid.pgm", pred.slice(pred.nz / 2), pred.ny, pred.nx, lo, hi);
      write_pgm(preview / "ref_mid.pgm", ref.slice(ref.nz / 2), ref.ny, ref.nx, lo, hi);
    }
  } else {
    const auto pred = gkan::io::read_projections(pred_path);
    const auto ref = gkan::io::read_projections(ref_path);
    report = gkan::evaluate_projections(pred, ref, std::nullopt, ref_meta.units);
    if (!preview.empty()) {
      fs::create_directories(preview);
      write_pgm(preview / "pred_view0.pgm", pred.view(0), pred.rows, pred.cols, 0.0, report.data_range);
      write_pgm(preview / "ref_view0.pgm", ref.view(0), ref.rows, ref.cols, 0.0, report.data_range);
    }
  }
  if (auto dir = out_report.parent_path(); !dir.empty()) fs::create_directories(dir);
  gkan::io::write_json(out_report, report.to_json());
  const auto text = report.to_text();
  std::ofstream(fs::path(out_report).replace_extension(".txt")) << text;
  std::cout << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-RBF KAN scatter correction for cone-beam CT"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--threads", common.threads, "Worker threads (0: machine parallelism; GKAN_THREADS overrides)");

  std::optional<std::uint64_t> seed;
  std::string out, in_a, in_b, in_c, baseline = "gkan", units = "HU", preview;
  bool quiet = false, denoise = false;

  auto* phantom = app.add_subcommand("phantom", "Generate a head phantom attenuation volume");
  phantom->add_option("--seed", seed, "Phantom seed (default: config phantom.seed)");
  phantom->add_option("--out", out, "Output tensor path")->required();

  auto* simulate = app.add_subcommand("simulate", "Project a phantom and synthesize scatter and noise");
  simulate->add_option("--phantom", in_a, "Phantom volume")->required();
  simulate->add_option("--out-dir", out, "Output directory")->required();
  simulate->add_option("--seed", seed, "Noise seed (default: config scatter.seed)");

  auto* train = app.add_subcommand("train", "Train the network on simulated scans");
  train->add_option("--data-dir", in_a, "Scan directory or directory of scan directories")->required();
  train->add_option("--out-checkpoint", out, "Checkpoint directory")->required();
  train->add_flag("--quiet", quiet, "Suppress per-epoch progress");

  auto* correct = app.add_subcommand("correct", "Estimate and remove scatter from measured projections");
  correct->add_option("--checkpoint", in_a, "Checkpoint directory")->required();
  correct->add_option("--projections", in_b, "Measured projections")->required();
  correct->add_option("--out", out, "Output directory")->required();
  correct->add_option("--baseline", baseline, "Scatter estimator")->check(CLI::IsMember({"gkan", "sks"}));

  auto* reconstruct = app.add_subcommand("reconstruct", "FDK reconstruction of a projection stack");
  reconstruct->add_option("--projections", in_a, "Projections in photons")->required();
  reconstruct->add_option("--out-volume", out, "Output volume")->required();
  reconstruct->add_option("--units", units, "Output units")->check(CLI::IsMember({"HU", "mm^-1"}));
  reconstruct->add_flag("--denoise", denoise, "Median-filter the projections first");

  auto* evaluate = app.add_subcommand("evaluate", "Compare a prediction with a reference");
  evaluate->add_option("--pred", in_a, "Predicted tensor")->required();
  evaluate->add_option("--ref", in_b, "Reference tensor")->required();
  evaluate->add_option("--rois", in_c, "ROI list (JSON array)");
  evaluate->add_option("--out-report", out, "Report JSON path (a .txt table is written beside it)")->required();
  evaluate->add_option("--preview", preview, "Directory for PGM preview images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("config", e.what(), kExitConfig);
    return kExitConfig;
  }

  try {
    gkan::set_num_threads(gkan::threads_from_env(common.threads));
    if (*phantom) cmd_phantom(common, seed, out);
    else if (*simulate) cmd_simulate(common, in_a, out, seed);
    else if (*train) cmd_train(common, in_a, out, quiet);
    else if (*correct) cmd_correct(common, in_a, in_b, out, baseline);
    else if (*reconstruct) cmd_reconstruct(common, in_a, out, units, denoise);
    else if (*evaluate) cmd_evaluate(common, in_a, in_b, in_c, out, preview);
  } catch (const gkan::TrainingError& e) {
    report_error(e.category(), e.what(), kExitNumeric, e.iteration());
    return kExitNumeric;
  } catch (const gkan::Error& e) {
    const int code = exit_code_for(e);
    report_error(e.category(), e.what(), code);
    return code;
  } catch (const nlohmann::json::exception& e) {
    report_error("data", e.what(), kExitData);
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    report_error("data", e.what(), kExitData);
    return kExitData;
  }
  return 0;
}
