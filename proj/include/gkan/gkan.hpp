#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gkan/autodiff.hpp"
#include "gkan/error.hpp"
#include "gkan/tensor.hpp"

namespace gkan {

/// Fixed Gaussian basis: `count` centers evenly spaced on [-half_range,
/// +half_range], one shared width. Not learnable.
class RbfGrid {
 public:
  RbfGrid() : RbfGrid(8, 1.0) {}

  /// Width defaults to the center spacing.
  RbfGrid(int count, double half_range) : RbfGrid(count, half_range, count >= 2 ? 2 * half_range / (count - 1) : 0) {}

  RbfGrid(int count, double half_range, double sigma) : half_range_(half_range), sigma_(sigma) {
    if (count < 2) throw ConfigError("RbfGrid: need at least 2 centers");
    if (!(half_range > 0)) throw ConfigError("RbfGrid: half range must be positive");
    if (!(sigma > 0)) throw ConfigError("RbfGrid: sigma must be positive");
    centers_.resize(static_cast<std::size_t>(count));
    for (int j = 0; j < count; ++j) centers_[static_cast<std::size_t>(j)] = -half_range + spacing() * j;
  }

  std::size_t count() const noexcept { return centers_.size(); }
  double half_range() const noexcept { return half_range_; }
  double sigma() const noexcept { return sigma_; }
  double spacing() const noexcept { return 2 * half_range_ / (static_cast<double>(centers_.size()) - 1); }
  const std::vector<double>& centers() const noexcept { return centers_; }
  double center(std::size_t j) const { return centers_[j]; }

  friend bool operator==(const RbfGrid&, const RbfGrid&) = default;

 private:
  double half_range_;
  double sigma_;
  std::vector<double> centers_;
};

/// exp(-(x - mu_j)^2 / sigma^2) for every center. The exponent divides by
/// sigma^2, not 2 sigma^2.
template <typename T>
std::vector<T> rbf_basis(T x, const RbfGrid& grid) {
  std::vector<T> out(grid.count());
  const T inv_s2 = static_cast<T>(1.0 / (grid.sigma() * grid.sigma()));
  for (std::size_t j = 0; j < grid.count(); ++j) {
    const T d = x - static_cast<T>(grid.center(j));
    out[j] = std::exp(-d * d * inv_s2);
  }
  return out;
}

/// Learnable univariate function on one KAN edge:
/// phi(x) = w1 * SiLU(x) + w2 * sum_j weights[j] * rbf_j(x).
template <typename T>
struct KanEdgeParams {
  T w1 = T{1};
  T w2 = T(0.1);
  std::vector<T> weights;
};

template <typename T>
T kan_phi(T x, const KanEdgeParams<T>& edge, const RbfGrid& grid) {
  if (edge.weights.size() != grid.count())
    throw DimensionError("kan_phi: edge has " + std::to_string(edge.weights.size()) + " RBF weights, grid has " +
                         std::to_string(grid.count()) + " centers");
  const auto basis = rbf_basis(x, grid);
  T bf{0};
  for (std::size_t j = 0; j < basis.size(); ++j) bf += edge.weights[j] * basis[j];
  return edge.w1 * x * logistic(x) + edge.w2 * bf;
}

/// The edge matrix of a KAN layer, row-major by output: edge(k, i) maps input
/// i into output k.
template <typename T>
struct KanLayerParams {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::vector<KanEdgeParams<T>> edges;

  KanLayerParams() = default;
  KanLayerParams(std::size_t in, std::size_t out, std::size_t centers) : d_in(in), d_out(out), edges(in * out) {
    for (auto& e : edges) e.weights.assign(centers, T{0});
  }

  KanEdgeParams<T>& edge(std::size_t k, std::size_t i) { return edges[k * d_in + i]; }
  const KanEdgeParams<T>& edge(std::size_t k, std::size_t i) const { return edges[k * d_in + i]; }

  /// Tensor views of the parameters: w1, w2 as [d_out,d_in], weights as
  /// [d_out,d_in,c].
  Tensor<T> w1_tensor() const { return gather([](const KanEdgeParams<T>& e, std::vector<T>& v) { v.push_back(e.w1); }, {d_out, d_in}); }
  Tensor<T> w2_tensor() const { return gather([](const KanEdgeParams<T>& e, std::vector<T>& v) { v.push_back(e.w2); }, {d_out, d_in}); }
  Tensor<T> rbf_tensor() const {
    const std::size_t c = edges.empty() ? 0 : edges.front().weights.size();
    return gather([](const KanEdgeParams<T>& e, std::vector<T>& v) { v.insert(v.end(), e.weights.begin(), e.weights.end()); },
                  {d_out, d_in, c});
  }

 private:
  template <typename Fn>
  Tensor<T> gather(Fn fn, Shape shape) const {
    std::vector<T> v;
    v.reserve(shape_numel(shape));
    for (const auto& e : edges) fn(e, v);
    return Tensor<T>(std::move(shape), std::move(v));
  }
};

/// Output k = sum_i phi_{k,i}(x_i).
template <typename T>
std::vector<T> kan_layer(std::span<const T> x, const KanLayerParams<T>& params, const RbfGrid& grid) {
  if (x.size() != params.d_in)
    throw DimensionError("kan_layer: input length " + std::to_string(x.size()) + " but layer expects " +
                         std::to_string(params.d_in));
  if (params.edges.size() != params.d_in * params.d_out) throw DimensionError("kan_layer: edge matrix size mismatch");
  std::vector<T> out(params.d_out, T{0});
  for (std::size_t k = 0; k < params.d_out; ++k)
    for (std::size_t i = 0; i < params.d_in; ++i) out[k] += kan_phi(x[i], params.edge(k, i), grid);
  return out;
}

/// Differentiable KAN layer on the tape. x: [d_in]; w1, w2: [d_out,d_in];
/// rbf: [d_out,d_in,c]. Returns [d_out].
template <typename T>
Var kan_layer(Tape<T>& tape, Var x, Var w1, Var w2, Var rbf, const RbfGrid& grid) {
  const auto& vx = tape.value(x);
  const auto& v1 = tape.value(w1);
  const auto& v2 = tape.value(w2);
  const auto& vr = tape.value(rbf);
  const std::size_t d_in = vx.size();
  if (v1.rank() != 2 || v1.dim(1) != d_in) throw DimensionError("kan_layer: w1 must be [d_out,d_in]");
  const std::size_t d_out = v1.dim(0);
  const std::size_t c = grid.count();
  require_same_shape(v1.shape(), v2.shape(), "kan_layer w2");
  require_same_shape(vr.shape(), Shape{d_out, d_in, c}, "kan_layer rbf weights");

  // Per-input basis values, shared by every output row.
  auto basis = std::make_shared<std::vector<T>>(d_in * c);
  for (std::size_t i = 0; i < d_in; ++i) {
    auto b = rbf_basis(vx[i], grid);
    std::copy(b.begin(), b.end(), basis->begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  Tensor<T> out({d_out});
  for (std::size_t k = 0; k < d_out; ++k)
    for (std::size_t i = 0; i < d_in; ++i) {
      T bf{0};
      for (std::size_t j = 0; j < c; ++j) bf += vr[(k * d_in + i) * c + j] * (*basis)[i * c + j];
      out[k] += v1[k * d_in + i] * vx[i] * logistic(vx[i]) + v2[k * d_in + i] * bf;
    }
  return tape.record(std::move(out), {x, w1, w2, rbf}, [=](Tape<T>& t, const Tensor<T>& g) {
    const auto& vx = t.value(x);
    const auto& v1 = t.value(w1);
    const auto& v2 = t.value(w2);
    const auto& vr = t.value(rbf);
    Tensor<T>* dx = t.grad_buffer(x);
    Tensor<T>* d1 = t.grad_buffer(w1);
    Tensor<T>* d2 = t.grad_buffer(w2);
    Tensor<T>* dr = t.grad_buffer(rbf);
    const T inv_s2 = static_cast<T>(1.0 / (grid.sigma() * grid.sigma()));
    for (std::size_t k = 0; k < d_out; ++k)
      for (std::size_t i = 0; i < d_in; ++i) {
        const std::size_t e = k * d_in + i;
        const T s = logistic(vx[i]);
        const T silu_v = vx[i] * s;
        T bf{0}, dbf{0};
        for (std::size_t j = 0; j < c; ++j) {
          const T b = (*basis)[i * c + j];
          const T wj = vr[e * c + j];
          bf += wj * b;
          dbf += wj * b * T{-2} * (vx[i] - static_cast<T>(grid.center(j))) * inv_s2;
          if (dr) (*dr)[e * c + j] += g[k] * v2[e] * b;
        }
        if (d1) (*d1)[e] += g[k] * silu_v;
        if (d2) (*d2)[e] += g[k] * bf;
        if (dx) (*dx)[i] += g[k] * (v1[e] * s * (T{1} + vx[i] * (T{1} - s)) + v2[e] * dbf);
      }
  });
}

/// Pixelwise Gaussian-RBF KAN map. Every pixel's channel vector F[:,p] is
/// expanded to c_in*c basis responses (input channel major, center minor)
/// and projected by one weight matrix [c_out, c_in*c] shared across pixels.
template <typename T>
Var gauss_rbf_map(Tape<T>& tape, Var features, Var weights, const RbfGrid& grid) {
  const auto& f = tape.value(features);
  const auto& w = tape.value(weights);
  detail::require_chw(f.shape(), "gauss_rbf_map");
  const std::size_t cin = f.dim(0), h = f.dim(1), wd = f.dim(2), P = h * wd, c = grid.count();
  const std::size_t K = cin * c;
  if (w.rank() != 2 || w.dim(1) != K)
    throw DimensionError("gauss_rbf_map: weights must be [c_out," + std::to_string(K) + "], got " + shape_str(w.shape()));
  const std::size_t cout = w.dim(0);

  const T inv_s2 = static_cast<T>(1.0 / (grid.sigma() * grid.sigma()));
  auto basis = std::make_shared<std::vector<T>>(K * P);
  for (std::size_t i = 0; i < cin; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T mu = static_cast<T>(grid.center(j));
      T* row = basis->data() + (i * c + j) * P;
      const T* fr = f.data() + i * P;
      for (std::size_t p = 0; p < P; ++p) {
        const T d = fr[p] - mu;
        row[p] = std::exp(-d * d * inv_s2);
      }
    }
  Tensor<T> out({cout, h, wd});
  for (std::size_t o = 0; o < cout; ++o) {
    T* orow = out.data() + o * P;
    for (std::size_t k = 0; k < K; ++k) {
      const T wv = w[o * K + k];
      const T* brow = basis->data() + k * P;
      for (std::size_t p = 0; p < P; ++p) orow[p] += wv * brow[p];
    }
  }
  debug_check_finite(out, "gauss_rbf_map");
  return tape.record(std::move(out), {features, weights}, [=](Tape<T>& t, const Tensor<T>& g) {
    const auto& f = t.value(features);
    const auto& w = t.value(weights);
    Tensor<T>* df = t.grad_buffer(features);
    Tensor<T>* dw = t.grad_buffer(weights);
    if (dw)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t k = 0; k < K; ++k) {
          const T* grow = g.data() + o * P;
          const T* brow = basis->data() + k * P;
          (*dw)[o * K + k] += detail::dot(grow, brow, P);
        }
    if (df) {
      std::vector<T> db(P);
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t k = i * c + j;
          std::fill(db.begin(), db.end(), T{0});
          for (std::size_t o = 0; o < cout; ++o) {
            const T wv = w[o * K + k];
            const T* grow = g.data() + o * P;
            for (std::size_t p = 0; p < P; ++p) db[p] += wv * grow[p];
          }
          const T mu = static_cast<T>(grid.center(j));
          const T* brow = basis->data() + k * P;
          const T* fr = f.data() + i * P;
          T* dfr = df->data() + i * P;
          for (std::size_t p = 0; p < P; ++p) dfr[p] += db[p] * brow[p] * T{-2} * (fr[p] - mu) * inv_s2;
        }
    }
  });
}

/// Two-path KAN block: Conv(SiLU(F)) + GaussRBF(F). The convolution is
/// stride 1 with same padding, so the spatial size is preserved.
template <typename T>
Var kan_block(Tape<T>& tape, Var features, Var conv_kernel, Var rbf_weights, const RbfGrid& grid) {
  const auto& k = tape.value(conv_kernel);
  if (k.rank() != 4 || k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0 || k.dim(2) != k.dim(3))
    throw DimensionError("kan_block: conv kernel must be [c_out,c_in,k,k] with odd k");
  if (tape.value(rbf_weights).rank() != 2 || tape.value(rbf_weights).dim(0) != k.dim(0))
    throw DimensionError("kan_block: conv and RBF paths disagree on output channels");
  const int pad = static_cast<int>(k.dim(2) / 2);
  Var conv_path = conv2d(tape, silu(tape, features), conv_kernel, 1, pad);
  Var rbf_path = gauss_rbf_map(tape, features, rbf_weights, grid);
  return add(tape, conv_path, rbf_path);
}

}  // namespace gkan
