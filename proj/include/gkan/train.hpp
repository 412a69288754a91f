#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gkan/autodiff.hpp"
#include "gkan/error.hpp"
#include "gkan/image.hpp"
#include "gkan/io.hpp"
#include "gkan/net.hpp"
#include "gkan/physics.hpp"
#include "gkan/projection.hpp"
#include "gkan/recon.hpp"

namespace gkan {

enum class LossKind { Mse, L1 };

struct TrainConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double lr_decay_factor = 0.5;
  long lr_decay_at = 3000;
  long lr_decay_every = 0;  // 0: decay once at lr_decay_at
  std::size_t epochs = 100;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::Mse;

  void validate() const {
    if (!(learning_rate >= 0)) throw ConfigError("train: learning rate must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train: Adam betas must lie in [0,1)");
    if (!(adam_eps > 0)) throw ConfigError("train: Adam epsilon must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight decay must be non-negative");
    if (!(lr_decay_factor > 0)) throw ConfigError("train: decay factor must be positive");
    if (lr_decay_every < 0) throw ConfigError("train: decay interval must be non-negative");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  }

  /// Step-decayed learning rate for a 0-based iteration.
  double lr_at(long iteration) const {
    if (iteration < lr_decay_at) return learning_rate;
    const long decays = lr_decay_every > 0 ? 1 + (iteration - lr_decay_at) / lr_decay_every : 1;
    return learning_rate * std::pow(lr_decay_factor, static_cast<double>(decays));
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate}, {"beta1", beta1},
            {"beta2", beta2},                 {"adam_eps", adam_eps},
            {"weight_decay", weight_decay},   {"lr_decay_factor", lr_decay_factor},
            {"lr_decay_at", lr_decay_at},     {"lr_decay_every", lr_decay_every},
            {"epochs", epochs},               {"batch_size", batch_size},
            {"seed", seed},                   {"loss", loss == LossKind::Mse ? "mse" : "l1"}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
      if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "beta1") c.beta1 = v.get<double>();
      else if (key == "beta2") c.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "lr_decay_factor") c.lr_decay_factor = v.get<double>();
      else if (key == "lr_decay_at") c.lr_decay_at = v.get<long>();
      else if (key == "lr_decay_every") c.lr_decay_every = v.get<long>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "loss") {
        const auto s = v.get<std::string>();
        if (s == "mse") c.loss = LossKind::Mse;
        else if (s == "l1") c.loss = LossKind::L1;
        else throw ConfigError("train: loss must be 'mse' or 'l1'");
      } else throw ConfigError("train: unknown key '" + key + "'");
    }
    c.validate();
    return c;
  }
};

/// One supervised sample at network resolution.
struct TrainingPair {
  Tensor<float> input;   // clamp(I_m/I0, 0, 1), [1,S,S]
  Tensor<float> target;  // I_s/I_m, [1,S,S]
  std::size_t view = 0;
};

inline std::vector<TrainingPair> make_pairs(const ProjectionStack& measured, const ProjectionStack& scatter, double i0,
                                            std::size_t size) {
  require_same_layout(measured, scatter, "make_pairs");
  if (!(i0 > 0)) throw ConfigError("make_pairs: I0 must be positive");
  std::vector<TrainingPair> pairs;
  pairs.reserve(measured.views);
  std::vector<float> fraction(measured.view_size());
  for (std::size_t k = 0; k < measured.views; ++k) {
    const auto m = measured.view(k);
    const auto s = scatter.view(k);
    for (std::size_t i = 0; i < fraction.size(); ++i) {
      if (!(m[i] > 0)) throw DomainError("make_pairs: measured intensities must be positive");
      fraction[i] = s[i] / m[i];
    }
    auto target = resize_area<float>(fraction, measured.rows, measured.cols, size, size);
    pairs.push_back({normalized_input<float>(m, measured.rows, measured.cols, i0, size),
                     Tensor<float>({1, size, size}, std::move(target)), k});
  }
  return pairs;
}

template <typename T>
double loss(const Tensor<T>& pred, const Tensor<T>& target, LossKind kind = LossKind::Mse) {
  require_same_shape(pred.shape(), target.shape(), "loss");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += kind == LossKind::Mse ? d * d : std::fabs(d);
  }
  return acc / static_cast<double>(pred.size());
}

/// Adam with decoupled weight decay:
/// p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
struct AdamState {
  long step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  template <typename T>
  void init(const GKanUNet<T>& model) {
    step = 0;
    m.clear();
    v.clear();
    for (const auto& p : model.params()) {
      m.emplace_back(p.value.size(), 0.0f);
      v.emplace_back(p.value.size(), 0.0f);
    }
  }

  void update(GKanUNet<float>& model, const std::vector<Tensor<float>>& grads, double lr, const TrainConfig& cfg) {
    ++step;
    const double bc1 = 1 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1 - std::pow(cfg.beta2, static_cast<double>(step));
    auto& params = model.params();
    for (std::size_t g = 0; g < params.size(); ++g) {
      auto& p = params[g].value;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = grads[g][i];
        m[g][i] = static_cast<float>(cfg.beta1 * m[g][i] + (1 - cfg.beta1) * gi);
        v[g][i] = static_cast<float>(cfg.beta2 * v[g][i] + (1 - cfg.beta2) * gi * gi);
        const double mhat = m[g][i] / bc1, vhat = v[g][i] / bc2;
        p[i] = static_cast<float>(p[i] - lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * p[i]));
      }
    }
  }
};

/// Classical scatter-kernel-superposition parameters.
struct SksParams {
  double sigma_mm = 25.0;
  double amplitude = 0.1;
  double exponent = 1.5;

  nlohmann::json to_json() const { return {{"sigma_mm", sigma_mm}, {"amplitude", amplitude}, {"exponent", exponent}}; }
  static SksParams from_json(const nlohmann::json& j) {
    SksParams s;
    s.sigma_mm = j.at("sigma_mm").get<double>();
    s.amplitude = j.at("amplitude").get<double>();
    s.exponent = j.at("exponent").get<double>();
    return s;
  }
};

struct Checkpoint {
  UNetConfig network;
  TrainConfig train;
  GKanUNet<float> model;
  AdamState optimizer;
  long iteration = 0;
  std::vector<double> loss_history;
  std::optional<SksParams> sks;
};

using IterationCallback = std::function<void(long iteration, double loss)>;

/// Gradient of the loss of one pair w.r.t. every parameter group.
inline std::vector<Tensor<float>> pair_gradients(const GKanUNet<float>& model, const TrainingPair& pair, LossKind kind,
                                                 double* loss_out) {
  Tape<float> tape;
  auto vars = model.bind(tape);
  Var x = tape.constant(pair.input);
  Var target = tape.constant(pair.target);
  Var pred = model.forward(tape, vars, x);
  Var l = kind == LossKind::Mse ? mse_loss(tape, pred, target) : l1_loss(tape, pred, target);
  *loss_out = tape.value(l)[0];
  tape.backward(l);
  std::vector<Tensor<float>> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.push_back(tape.grad(v));
  return grads;
}

/// Minibatch Adam training. The order of pairs is reshuffled every epoch from
/// a generator seeded with `config.seed`; batch gradients are averaged in a
/// fixed order, so equal seeds give identical runs.
inline Checkpoint train(GKanUNet<float> model, const std::vector<TrainingPair>& pairs, const TrainConfig& config,
                        const IterationCallback& on_iteration = {}) {
  config.validate();
  if (pairs.empty()) throw ConfigError("train: no training pairs");
  Checkpoint ck;
  ck.network = model.config();
  ck.train = config;
  ck.optimizer.init(model);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  long iteration = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with an explicit draw so the permutation is library independent.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor<float>> grads;
      double batch_loss = 0;
      for (std::size_t b = start; b < end; ++b) {
        double l = 0;
        std::vector<Tensor<float>> g;
        try {
          g = pair_gradients(model, pairs[order[b]], config.loss, &l);
        } catch (const NumericError& e) {
          throw TrainingError(std::string("training diverged: ") + e.what(), iteration);
        }
        batch_loss += l;
        if (grads.empty()) {
          grads = std::move(g);
        } else {
          for (std::size_t p = 0; p < grads.size(); ++p)
            for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += g[p][i];
        }
      }
      const float inv = 1.0f / static_cast<float>(end - start);
      for (auto& g : grads)
        for (auto& v : g.values()) v *= inv;
      batch_loss /= static_cast<double>(end - start);
      if (!std::isfinite(batch_loss)) throw TrainingError("training diverged: non-finite loss", iteration);
      ck.optimizer.update(model, grads, config.lr_at(iteration), config);
      ck.loss_history.push_back(batch_loss);
      if (on_iteration) on_iteration(iteration, batch_loss);
      ++iteration;
    }
  }
  ck.iteration = iteration;
  ck.model = std::move(model);
  return ck;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence: manifest.json + one raw f32 blob per parameter group
// (plus Adam moments) and the loss history as f64.

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json params = nlohmann::json::array();
  const auto& ps = ck.model.params();
  for (std::size_t g = 0; g < ps.size(); ++g) {
    const std::string file = ps[g].name + ".f32";
    io::write_blob<float>(dir / file, ps[g].value.values());
    nlohmann::json entry{{"name", ps[g].name}, {"shape", ps[g].value.shape()}, {"file", file}};
    if (g < ck.optimizer.m.size()) {
      entry["adam_m"] = ps[g].name + ".adam_m.f32";
      entry["adam_v"] = ps[g].name + ".adam_v.f32";
      io::write_blob<float>(dir / entry["adam_m"].get<std::string>(), ck.optimizer.m[g]);
      io::write_blob<float>(dir / entry["adam_v"].get<std::string>(), ck.optimizer.v[g]);
    }
    params.push_back(entry);
  }
  io::write_blob<double>(dir / "loss_history.f64", ck.loss_history);
  nlohmann::json manifest{{"format", "gkan-checkpoint"},
                          {"version", 1},
                          {"dtype", "f32"},
                          {"network", ck.network.to_json()},
                          {"train", ck.train.to_json()},
                          {"iteration", ck.iteration},
                          {"optimizer_step", ck.optimizer.step},
                          {"loss_history", {{"file", "loss_history.f64"}, {"count", ck.loss_history.size()}}},
                          {"params", params}};
  if (ck.sks) manifest["sks"] = ck.sks->to_json();
  io::write_json(dir / "manifest.json", manifest);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  Checkpoint ck;
  try {
    if (manifest.at("format") != "gkan-checkpoint") throw DataError("not a gkan checkpoint");
    if (manifest.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    ck.network = UNetConfig::from_json(manifest.at("network"));
    ck.train = TrainConfig::from_json(manifest.at("train"));
    ck.iteration = manifest.at("iteration").get<long>();
    ck.optimizer.step = manifest.at("optimizer_step").get<long>();
    // Rebuild the architecture, then overwrite every group from disk.
    ck.model = GKanUNet<float>(ck.network, 0);
    auto& ps = ck.model.params();
    const auto& entries = manifest.at("params");
    if (entries.size() != ps.size()) throw DataError("checkpoint parameter groups do not match the architecture");
    for (std::size_t g = 0; g < ps.size(); ++g) {
      const auto& e = entries[g];
      if (e.at("name").get<std::string>() != ps[g].name || e.at("shape").get<Shape>() != ps[g].value.shape())
        throw DataError("checkpoint group '" + e.at("name").get<std::string>() + "' does not match the architecture");
      ps[g].value = Tensor<float>(ps[g].value.shape(), io::read_blob<float>(dir / e.at("file").get<std::string>(), ps[g].value.size()));
      if (e.contains("adam_m")) {
        ck.optimizer.m.push_back(io::read_blob<float>(dir / e.at("adam_m").get<std::string>(), ps[g].value.size()));
        ck.optimizer.v.push_back(io::read_blob<float>(dir / e.at("adam_v").get<std::string>(), ps[g].value.size()));
      }
    }
    const auto& lh = manifest.at("loss_history");
    ck.loss_history = io::read_blob<double>(dir / lh.at("file").get<std::string>(), lh.at("count").get<std::size_t>());
    if (manifest.contains("sks")) ck.sks = SksParams::from_json(manifest.at("sks"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Correction

struct CorrectionResult {
  ProjectionStack scatter;  // estimated I_s, photons
  ProjectionStack primary;  // corrected I_p, photons
};

/// D(I_m - I_s_hat) with a median denoiser, floored at 1e-3 * I0.
inline CorrectionResult correct_with_estimate(const ProjectionStack& measured, double i0, ProjectionStack scatter,
                                              int window = 3) {
  require_same_layout(measured, scatter, "correct");
  ProjectionStack residual = measured;
  for (std::size_t i = 0; i < residual.data.size(); ++i) residual.data[i] = measured.data[i] - scatter.data[i];
  ProjectionStack primary = median_denoise(residual, window);
  const auto floor = static_cast<float>(1e-3 * i0);
  for (auto& v : primary.data) v = std::max(v, floor);
  return {std::move(scatter), std::move(primary)};
}

template <typename T>
CorrectionResult correct(const ProjectionStack& measured, double i0, const GKanUNet<T>& model, int window = 3) {
  return correct_with_estimate(measured, i0, infer_native(model, measured, i0), window);
}

/// SKS estimate: (a * I_m * p_hat^k) convolved with one Gaussian, where
/// p_hat = -ln(clamp(I_m/I0, 1e-3, 1)).
inline ProjectionStack sks_baseline(const ProjectionStack& measured, double i0, const SksParams& params) {
  if (!(params.sigma_mm > 0) || params.amplitude < 0 || params.exponent < 0)
    throw ConfigError("sks: parameters must be positive");
  if (!(i0 > 0)) throw ConfigError("sks: I0 must be positive");
  const double pitch = measured.require_geometry().pitch_mm;
  const auto taps = gaussian_taps(params.sigma_mm / pitch, scatter_support_radius(params.sigma_mm, pitch));
  ProjectionStack out = measured;
  parallel_for(measured.views, [&](std::size_t k) {
    const auto src = scatter_source(measured.view(k), i0, params.amplitude, params.exponent, 1e-3);
    const auto blurred = convolve_separable(src, measured.rows, measured.cols, taps);
    auto dst = out.view(k);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(blurred[i]);
  });
  return out;
}

/// Scans for an SKS fit: measured stack with its true scatter.
struct SksFitSample {
  const ProjectionStack* measured;
  const ProjectionStack* scatter;
};

/// Fits SKS parameters by coordinate search over (sigma, k) minimizing the
/// scatter MSE; for fixed (sigma, k) the amplitude is the closed-form least
/// squares scale. Uses every `view_stride`-th view.
inline SksParams fit_sks(const std::vector<SksFitSample>& samples, double i0, std::size_t view_stride = 6,
                         SksParams start = {}) {
  if (samples.empty()) throw ConfigError("fit_sks: no samples");
  view_stride = std::max<std::size_t>(1, view_stride);
  struct Eval {
    double amplitude, mse;
  };
  auto evaluate = [&](double sigma, double k) {
    double num = 0, den = 0, ss = 0;
    std::size_t count = 0;
    for (const auto& s : samples) {
      const double pitch = s.measured->require_geometry().pitch_mm;
      const auto taps = gaussian_taps(sigma / pitch, scatter_support_radius(sigma, pitch));
      for (std::size_t v = 0; v < s.measured->views; v += view_stride) {
        const auto src = scatter_source(s.measured->view(v), i0, 1.0, k, 1e-3);
        const auto base = convolve_separable(src, s.measured->rows, s.measured->cols, taps);
        const auto truth = s.scatter->view(v);
        for (std::size_t i = 0; i < base.size(); ++i) {
          num += base[i] * truth[i];
          den += base[i] * base[i];
          ss += static_cast<double>(truth[i]) * truth[i];
        }
        count += base.size();
      }
    }
    const double a = den > 0 ? num / den : 0.0;
    // sum (a b - t)^2 = a^2 den - 2 a num + ss
    return Eval{a, (a * a * den - 2 * a * num + ss) / static_cast<double>(count)};
  };
  double sigma = start.sigma_mm, k = start.exponent;
  Eval best = evaluate(sigma, k);
  double sigma_step = 1.5, k_step = 0.5;
  for (int round = 0; round < 12 && (sigma_step > 1.02 || k_step > 0.02); ++round) {
    bool improved = false;
    for (double cand : {sigma * sigma_step, sigma / sigma_step}) {
      const Eval e = evaluate(cand, k);
      if (e.mse < best.mse) best = e, sigma = cand, improved = true;
    }
    for (double cand : {k + k_step, k - k_step}) {
      if (cand < 0) continue;
      const Eval e = evaluate(sigma, cand);
      if (e.mse < best.mse) best = e, k = cand, improved = true;
    }
    if (!improved) {
      sigma_step = std::sqrt(sigma_step);
      k_step *= 0.5;
    }
  }
  return {sigma, best.amplitude, k};
}

}  // namespace gkan
