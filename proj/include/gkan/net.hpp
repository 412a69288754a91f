#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gkan/autodiff.hpp"
#include "gkan/error.hpp"
#include "gkan/gkan.hpp"
#include "gkan/image.hpp"
#include "gkan/parallel.hpp"
#include "gkan/projection.hpp"

namespace gkan {

struct UNetConfig {
  std::size_t depth = 4;
  std::vector<std::size_t> channels{16, 32, 64, 128};
  std::size_t input_size = 128;
  std::size_t kernel_size = 3;
  int rbf_centers = 8;
  double rbf_half_range = 1.0;
  double rbf_sigma = 0;  // 0: center spacing

  RbfGrid grid() const {
    return rbf_sigma > 0 ? RbfGrid(rbf_centers, rbf_half_range, rbf_sigma) : RbfGrid(rbf_centers, rbf_half_range);
  }

  void validate() const {
    if (depth < 1) throw ConfigError("network: depth must be >= 1");
    if (channels.size() != depth) throw ConfigError("network: need one channel count per level");
    for (auto c : channels)
      if (c == 0) throw ConfigError("network: channel counts must be positive");
    if (input_size == 0 || input_size % (std::size_t{1} << (depth - 1)) != 0)
      throw ConfigError("network: input size must be divisible by 2^(depth-1)");
    if (kernel_size % 2 == 0) throw ConfigError("network: kernel size must be odd");
    grid();
  }

  nlohmann::json to_json() const {
    return {{"depth", depth},           {"channels", channels},       {"input_size", input_size},
            {"kernel_size", kernel_size}, {"rbf_centers", rbf_centers}, {"rbf_half_range", rbf_half_range},
            {"rbf_sigma", rbf_sigma}};
  }

  static UNetConfig from_json(const nlohmann::json& j) {
    UNetConfig c;
    for (const auto& [key, v] : j.items()) {
      if (key == "depth") c.depth = v.get<std::size_t>();
      else if (key == "channels") c.channels = v.get<std::vector<std::size_t>>();
      else if (key == "input_size") c.input_size = v.get<std::size_t>();
      else if (key == "kernel_size") c.kernel_size = v.get<std::size_t>();
      else if (key == "rbf_centers") c.rbf_centers = v.get<int>();
      else if (key == "rbf_half_range") c.rbf_half_range = v.get<double>();
      else if (key == "rbf_sigma") c.rbf_sigma = v.get<double>();
      else throw ConfigError("network: unknown key '" + key + "'");
    }
    c.validate();
    return c;
  }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// U-shaped encoder-decoder of KAN blocks mapping a normalized projection
/// [1,S,S] to a scatter-fraction map [1,S,S] in (0,1).
///
/// Level l of the encoder runs one kan_block (after 2x2 average pooling for
/// l > 0). Each decoder level upsamples bilinearly, concatenates the encoder
/// skip, fuses channels with a 1x1 adapter and runs one kan_block. A 1x1 head
/// with bias and a logistic squashing produce the output.
template <typename T>
class GKanUNet {
 public:
  struct Param {
    std::string name;
    Tensor<T> value;
  };

  GKanUNet() = default;

  /// Deterministic initialization from `seed`.
  GKanUNet(const UNetConfig& config, std::uint64_t seed) : config_(config), grid_(config.grid()) {
    config_.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&](Shape shape, double bound) {
      Tensor<T> t(std::move(shape));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : t.values()) v = static_cast<T>(u(rng));
      return t;
    };
    const auto& ch = config_.channels;
    const std::size_t k = config_.kernel_size, c = grid_.count();
    constexpr double rbf_path_scale = 0.1;
    auto add_block = [&](const std::string& prefix, std::size_t cin, std::size_t cout) {
      params_.push_back({prefix + ".conv", uniform({cout, cin, k, k}, 1.0 / std::sqrt(static_cast<double>(cin * k * k)))});
      params_.push_back({prefix + ".rbf", uniform({cout, cin * c}, rbf_path_scale / std::sqrt(static_cast<double>(cin * c)))});
    };
    for (std::size_t l = 0; l < config_.depth; ++l) add_block("enc" + std::to_string(l), l == 0 ? 1 : ch[l - 1], ch[l]);
    for (std::size_t l = config_.depth - 1; l-- > 0;) {
      const std::size_t fused = ch[l] + ch[l + 1];
      params_.push_back({"dec" + std::to_string(l) + ".adapter", uniform({ch[l], fused, 1, 1}, 1.0 / std::sqrt(static_cast<double>(fused)))});
      add_block("dec" + std::to_string(l), ch[l], ch[l]);
    }
    params_.push_back({"head.weight", uniform({1, ch[0], 1, 1}, 1.0 / std::sqrt(static_cast<double>(ch[0])))});
    params_.push_back({"head.bias", Tensor<T>({1})});
  }

  const UNetConfig& config() const noexcept { return config_; }
  const RbfGrid& grid() const noexcept { return grid_; }
  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }

  Tensor<T>& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p.value;
    throw ConfigError("network has no parameter '" + name + "'");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  template <typename U>
  GKanUNet<U> cast() const {
    GKanUNet<U> out;
    out.config_ = config_;
    out.grid_ = grid_;
    for (const auto& p : params_) out.params_.push_back({p.name, p.value.template cast<U>()});
    return out;
  }

  /// Registers every parameter as a tape leaf, in params() order.
  std::vector<Var> bind(Tape<T>& tape, bool requires_grad = true) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.leaf(p.value, requires_grad));
    return vars;
  }

  Var forward(Tape<T>& tape, std::span<const Var> bound, Var x) const {
    if (bound.size() != params_.size()) throw DimensionError("forward: parameter binding size mismatch");
    const auto& xs = tape.value(x).shape();
    if (xs != Shape{1, config_.input_size, config_.input_size})
      throw DimensionError("forward: expected input " + shape_str({1, config_.input_size, config_.input_size}) +
                           ", got " + shape_str(xs));
    std::size_t next = 0;
    auto take = [&] { return bound[next++]; };
    std::vector<Var> skips;
    Var h = x;
    for (std::size_t l = 0; l < config_.depth; ++l) {
      if (l > 0) h = downsample_avg2x(tape, h);
      Var conv = take(), rbf = take();
      h = kan_block(tape, h, conv, rbf, grid_);
      skips.push_back(h);
    }
    for (std::size_t l = config_.depth - 1; l-- > 0;) {
      h = upsample_bilinear2x(tape, h);
      h = concat_channels(tape, skips[l], h);
      h = conv2d(tape, h, take(), 1, 0);
      Var conv = take(), rbf = take();
      h = kan_block(tape, h, conv, rbf, grid_);
    }
    Var head_w = take(), head_b = take();
    h = add_channel_bias(tape, conv2d(tape, h, head_w, 1, 0), head_b);
    return sigmoid(tape, h);
  }

  /// Inference without gradient bookkeeping.
  Tensor<T> predict(const Tensor<T>& x) const {
    Tape<T> tape;
    auto vars = bind(tape, false);
    Var in = tape.constant(x);
    return tape.value(forward(tape, vars, in));
  }

 private:
  template <typename U>
  friend class GKanUNet;

  UNetConfig config_;
  RbfGrid grid_;
  std::vector<Param> params_;
};

template <typename T = float>
GKanUNet<T> build(const UNetConfig& config, std::uint64_t seed) {
  return GKanUNet<T>(config, seed);
}

/// Network-facing input of one view: clamp(I/I0, 0, 1) area-resampled to the
/// network resolution.
template <typename T>
Tensor<T> normalized_input(std::span<const float> intensity, std::size_t rows, std::size_t cols, double i0,
                           std::size_t size) {
  std::vector<float> ratio(intensity.size());
  for (std::size_t i = 0; i < ratio.size(); ++i)
    ratio[i] = static_cast<float>(std::clamp(static_cast<double>(intensity[i]) / i0, 0.0, 1.0));
  const auto small = resize_area<float>(ratio, rows, cols, size, size);
  std::vector<T> out(small.begin(), small.end());
  return Tensor<T>({1, size, size}, std::move(out));
}

/// Scatter estimate in photons at native detector resolution: predict the
/// scatter fraction at network resolution, upsample bilinearly, multiply by
/// the measurement.
template <typename T>
ProjectionStack infer_native(const GKanUNet<T>& model, const ProjectionStack& measured, double i0) {
  if (!(i0 > 0)) throw ConfigError("infer_native: I0 must be positive");
  const std::size_t S = model.config().input_size;
  ProjectionStack out = measured;
  parallel_for(measured.views, [&](std::size_t k) {
    const auto view = measured.view(k);
    const auto fraction = model.predict(normalized_input<T>(view, measured.rows, measured.cols, i0, S));
    std::vector<float> small(fraction.values().begin(), fraction.values().end());
    const auto native = resize_bilinear<float>(small, S, S, measured.rows, measured.cols);
    auto dst = out.view(k);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = native[i] * view[i];
  });
  return out;
}

}  // namespace gkan
