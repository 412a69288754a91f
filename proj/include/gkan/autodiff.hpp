#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gkan/error.hpp"
#include "gkan/tensor.hpp"

namespace gkan {

/// Handle to a node recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the recorded
/// graph is acyclic by construction and reverse insertion order is a valid
/// topological order for the backward sweep. Each node keeps the value its
/// consumers' backward closures read; nothing else is saved.
template <typename T>
class Tape {
 public:
  /// Receives the gradient of the node's output and accumulates into inputs.
  using Backward = std::function<void(Tape&, const Tensor<T>&)>;

  Var leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, true, {}});
    return Var{nodes_.size() - 1};
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an interior node. The backward closure is dropped when no input
  /// requires a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || node(v).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{}});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient buffer of `v`, or nullptr if `v` does not take gradients.
  /// Allocated as zeros on first access.
  Tensor<T>* grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>::zeros_like(n.value);
    return &n.grad;
  }

  /// Accumulated gradient of a leaf; zeros if nothing flowed into it.
  Tensor<T> grad(Var v) const {
    const Node& n = node(v);
    return n.grad.empty() ? Tensor<T>::zeros_like(n.value) : n.grad;
  }

  /// Backpropagates from a single-element root with seed 1.
  void backward(Var root) {
    if (value(root).size() != 1) throw DimensionError("backward() needs a scalar root; pass a seed otherwise");
    backward(root, Tensor<T>(value(root).shape(), T{1}));
  }

  /// Backpropagates `seed` from `root`. Leaf gradients accumulate across
  /// calls; interior gradients are released once propagated, so repeated
  /// calls do not double count.
  void backward(Var root, const Tensor<T>& seed) {
    require_same_shape(value(root).shape(), seed.shape(), "backward seed");
    if (!node(root).requires_grad) return;
    Tensor<T>* g = grad_buffer(root);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += seed[i];
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.is_leaf || n.grad.empty()) continue;
      Tensor<T> out_grad = std::move(n.grad);
      n.grad = Tensor<T>{};
      if (n.backward) n.backward(*this, out_grad);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor<T>{};
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad;
    bool is_leaf;
    Backward backward;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw DimensionError("invalid tape variable");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw DimensionError("invalid tape variable");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
void accumulate(Tape<T>& tape, Var v, const Tensor<T>& g) {
  if (Tensor<T>* dst = tape.grad_buffer(v))
    for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
}

/// Dot product with eight interleaved partial sums. The summation order is
/// fixed, so results are reproducible, and the lanes vectorize.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lane[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
  for (std::size_t l = 0; i < n; ++i, ++l) lane[l] += a[i] * b[i];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

/// y[i] += a * x[i * stride].
template <typename T>
void axpy_strided(T* y, const T* x, T a, long n, long stride) {
  if (stride == 1) {
    for (long i = 0; i < n; ++i) y[i] += a * x[i];
  } else {
    for (long i = 0; i < n; ++i) y[i] += a * x[i * stride];
  }
}

inline void require_chw(const Shape& s, const char* op) {
  if (s.size() != 3) throw DimensionError(std::string(op) + ": expected [c,h,w], got " + shape_str(s));
}

/// Output positions o in [lo, hi) for which o*stride - pad + k lands in [0, n).
inline std::pair<long, long> valid_range(long n_in, long n_out, long k, long stride, long pad) {
  long lo = pad - k > 0 ? (pad - k + stride - 1) / stride : 0;
  long hi_num = n_in - 1 + pad - k;
  long hi = hi_num < 0 ? 0 : hi_num / stride + 1;
  return {std::min(lo, n_out), std::min(hi, n_out)};
}

/// Source taps of half-pixel bilinear resampling (corners not aligned,
/// negative coordinates clamped to the first sample).
struct LinearTap {
  std::size_t i0, i1;
  double w0, w1;
};

inline std::vector<LinearTap> linear_taps(std::size_t n_in, std::size_t n_out) {
  std::vector<LinearTap> taps(n_out);
  const double ratio = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > n_in - 1) i0 = n_in - 1;
    std::size_t i1 = std::min(i0 + 1, n_in - 1);
    double l = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  require_same_shape(va.shape(), vb.shape(), "add");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T s) {
  const auto& va = tape.value(a);
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * s;
  return tape.record(std::move(out), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * s;
  });
}

/// Elementwise product.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  require_same_shape(va.shape(), vb.shape(), "mul");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto& va = t.value(a);
    const auto& vb = t.value(b);
    if (Tensor<T>* d = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * vb[i];
    if (Tensor<T>* d = t.grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * va[i];
  });
}

/// Sum of all elements, shape [1].
template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const auto& va = tape.value(a);
  T s{0};
  for (T v : va.values()) s += v;
  return tape.record(Tensor<T>({1}, s), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = t.grad_buffer(a))
      for (auto& v : d->values()) v += g[0];
  });
}

/// Stacks [ca,h,w] and [cb,h,w] into [ca+cb,h,w].
template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  detail::require_chw(va.shape(), "concat_channels");
  detail::require_chw(vb.shape(), "concat_channels");
  if (va.dim(1) != vb.dim(1) || va.dim(2) != vb.dim(2))
    throw DimensionError("concat_channels: spatial mismatch " + shape_str(va.shape()) + " vs " + shape_str(vb.shape()));
  Tensor<T> out({va.dim(0) + vb.dim(0), va.dim(1), va.dim(2)});
  std::copy(va.values().begin(), va.values().end(), out.values().begin());
  std::copy(vb.values().begin(), vb.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(va.size()));
  const std::size_t split = va.size();
  return tape.record(std::move(out), {a, b}, [a, b, split](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = t.grad_buffer(a))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += g[i];
    if (Tensor<T>* d = t.grad_buffer(b))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += g[split + i];
  });
}

template <typename T>
inline T logistic(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

/// x * logistic(x).
template <typename T>
Var silu(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] * logistic(vx[i]);
  debug_check_finite(out, "silu");
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    const auto& vx = t.value(x);
    Tensor<T>* d = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = logistic(vx[i]);
      (*d)[i] += g[i] * s * (T{1} + vx[i] * (T{1} - s));
    }
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logistic(vx[i]);
  // The node about to be recorded gets the next id; its closure reads that output.
  const Var y{tape.size()};
  return tape.record(std::move(out), {x}, [x, y](Tape<T>& t, const Tensor<T>& g) {
    const auto& vy = t.value(y);
    Tensor<T>* d = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * vy[i] * (T{1} - vy[i]);
  });
}

/// Adds bias[c] to every pixel of channel c.
template <typename T>
Var add_channel_bias(Tape<T>& tape, Var x, Var bias) {
  const auto& vx = tape.value(x);
  const auto& vb = tape.value(bias);
  detail::require_chw(vx.shape(), "add_channel_bias");
  if (vb.size() != vx.dim(0)) throw DimensionError("add_channel_bias: bias length must equal channel count");
  const std::size_t plane = vx.dim(1) * vx.dim(2);
  Tensor<T> out(vx.shape());
  for (std::size_t c = 0; c < vx.dim(0); ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = vx[c * plane + p] + vb[c];
  return tape.record(std::move(out), {x, bias}, [x, bias, plane](Tape<T>& t, const Tensor<T>& g) {
    detail::accumulate(t, x, g);
    if (Tensor<T>* d = t.grad_buffer(bias))
      for (std::size_t c = 0; c < d->size(); ++c)
        for (std::size_t p = 0; p < plane; ++p) (*d)[c] += g[c * plane + p];
  });
}

// ---------------------------------------------------------------------------
// Convolution

/// Cross-correlation of input [c_in,h,w] with kernel [c_out,c_in,kh,kw],
/// zero padding `pad` on every side.
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernel, int stride = 1, int pad = 0) {
  const auto& x = tape.value(input);
  const auto& k = tape.value(kernel);
  detail::require_chw(x.shape(), "conv2d");
  if (k.rank() != 4) throw DimensionError("conv2d: kernel must be [c_out,c_in,kh,kw], got " + shape_str(k.shape()));
  if (k.dim(1) != x.dim(0))
    throw DimensionError("conv2d: kernel expects " + std::to_string(k.dim(1)) + " input channels, input has " +
                         std::to_string(x.dim(0)));
  if (k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0) throw DimensionError("conv2d: kernel extents must be odd");
  if (stride < 1 || pad < 0) throw DimensionError("conv2d: stride must be >= 1 and pad >= 0");
#ifndef NDEBUG
  if (!x.all_finite()) throw NumericError("conv2d: non-finite input");
#endif
  const long cin = static_cast<long>(x.dim(0)), h = static_cast<long>(x.dim(1)), w = static_cast<long>(x.dim(2));
  const long cout = static_cast<long>(k.dim(0)), kh = static_cast<long>(k.dim(2)), kw = static_cast<long>(k.dim(3));
  const long oh_num = h + 2 * pad - kh, ow_num = w + 2 * pad - kw;
  if (oh_num < 0 || ow_num < 0) throw DimensionError("conv2d: kernel larger than padded input");
  const long oh = oh_num / stride + 1, ow = ow_num / stride + 1;

  Tensor<T> out({static_cast<std::size_t>(cout), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  const T* xd = x.data();
  const T* kd = k.data();
  T* od = out.data();
  for (long co = 0; co < cout; ++co)
    for (long ci = 0; ci < cin; ++ci)
      for (long ky = 0; ky < kh; ++ky) {
        const auto [ylo, yhi] = detail::valid_range(h, oh, ky, stride, pad);
        for (long kx = 0; kx < kw; ++kx) {
          const auto [xlo, xhi] = detail::valid_range(w, ow, kx, stride, pad);
          const T kv = kd[((co * cin + ci) * kh + ky) * kw + kx];
          for (long oy = ylo; oy < yhi; ++oy) {
            const T* xrow = xd + (ci * h + oy * stride - pad + ky) * w - pad + kx;
            T* orow = od + (co * oh + oy) * ow;
            detail::axpy_strided(orow + xlo, xrow + xlo * stride, kv, xhi - xlo, stride);
          }
        }
      }
  return tape.record(std::move(out), {input, kernel},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       const auto& x = t.value(input);
                       const auto& k = t.value(kernel);
                       const T* xd = x.data();
                       const T* kd = k.data();
                       const T* gd = g.data();
                       Tensor<T>* dx = t.grad_buffer(input);
                       Tensor<T>* dk = t.grad_buffer(kernel);
                       for (long co = 0; co < cout; ++co)
                         for (long ci = 0; ci < cin; ++ci)
                           for (long ky = 0; ky < kh; ++ky) {
                             const auto [ylo, yhi] = detail::valid_range(h, oh, ky, stride, pad);
                             for (long kx = 0; kx < kw; ++kx) {
                               const auto [xlo, xhi] = detail::valid_range(w, ow, kx, stride, pad);
                               const long kidx = ((co * cin + ci) * kh + ky) * kw + kx;
                               const T kv = kd[kidx];
                               T kacc{0};
                               const long n = xhi - xlo;
                               for (long oy = ylo; oy < yhi; ++oy) {
                                 const long xoff = (ci * h + oy * stride - pad + ky) * w - pad + kx + xlo * stride;
                                 const T* grow = gd + (co * oh + oy) * ow + xlo;
                                 const T* xrow = xd + xoff;
                                 if (dk) {
                                   if (stride == 1) {
                                     kacc += detail::dot(grow, xrow, static_cast<std::size_t>(n));
                                   } else {
                                     for (long ox = 0; ox < n; ++ox) kacc += grow[ox] * xrow[ox * stride];
                                   }
                                 }
                                 if (dx) {
                                   T* dxrow = dx->data() + xoff;
                                   if (stride == 1) {
                                     for (long ox = 0; ox < n; ++ox) dxrow[ox] += grow[ox] * kv;
                                   } else {
                                     for (long ox = 0; ox < n; ++ox) dxrow[ox * stride] += grow[ox] * kv;
                                   }
                                 }
                               }
                               if (dk) (*dk)[static_cast<std::size_t>(kidx)] += kacc;
                             }
                           }
                     });
}

// ---------------------------------------------------------------------------
// Resampling

/// 2x2 mean pooling; h and w must be even.
template <typename T>
Var downsample_avg2x(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  detail::require_chw(vx.shape(), "downsample_avg2x");
  const std::size_t c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  if (h % 2 || w % 2) throw DimensionError("downsample_avg2x: odd spatial extent " + shape_str(vx.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out.at(ch, y, xx) = T(0.25) * (vx.at(ch, 2 * y, 2 * xx) + vx.at(ch, 2 * y, 2 * xx + 1) +
                                       vx.at(ch, 2 * y + 1, 2 * xx) + vx.at(ch, 2 * y + 1, 2 * xx + 1));
  return tape.record(std::move(out), {x}, [x, c, oh, ow](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* d = t.grad_buffer(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T q = T(0.25) * g.at(ch, y, xx);
          d->at(ch, 2 * y, 2 * xx) += q;
          d->at(ch, 2 * y, 2 * xx + 1) += q;
          d->at(ch, 2 * y + 1, 2 * xx) += q;
          d->at(ch, 2 * y + 1, 2 * xx + 1) += q;
        }
  });
}

/// Bilinear 2x upsampling with half-pixel centers (corners not aligned).
template <typename T>
Var upsample_bilinear2x(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  detail::require_chw(vx.shape(), "upsample_bilinear2x");
  const std::size_t c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  const std::size_t oh = 2 * h, ow = 2 * w;
  auto ty = detail::linear_taps(h, oh);
  auto tx = detail::linear_taps(w, ow);
  Tensor<T> out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        out.at(ch, y, xx) = static_cast<T>(a.w0 * (b.w0 * vx.at(ch, a.i0, b.i0) + b.w1 * vx.at(ch, a.i0, b.i1)) +
                                           a.w1 * (b.w0 * vx.at(ch, a.i1, b.i0) + b.w1 * vx.at(ch, a.i1, b.i1)));
      }
  return tape.record(std::move(out), {x}, [x, c, oh, ow, ty, tx](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* d = t.grad_buffer(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const auto& a = ty[y];
          const auto& b = tx[xx];
          const T gv = g.at(ch, y, xx);
          d->at(ch, a.i0, b.i0) += static_cast<T>(a.w0 * b.w0) * gv;
          d->at(ch, a.i0, b.i1) += static_cast<T>(a.w0 * b.w1) * gv;
          d->at(ch, a.i1, b.i0) += static_cast<T>(a.w1 * b.w0) * gv;
          d->at(ch, a.i1, b.i1) += static_cast<T>(a.w1 * b.w1) * gv;
        }
  });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean squared error over all elements, shape [1].
template <typename T>
Var mse_loss(Tape<T>& tape, Var pred, Var target) {
  const auto& p = tape.value(pred);
  const auto& q = tape.value(target);
  require_same_shape(p.shape(), q.shape(), "mse_loss");
  long double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double d = static_cast<long double>(p[i]) - q[i];
    acc += d * d;
  }
  const T n = static_cast<T>(p.size());
  return tape.record(Tensor<T>({1}, static_cast<T>(acc / p.size())), {pred, target},
                     [pred, target, n](Tape<T>& t, const Tensor<T>& g) {
                       const auto& p = t.value(pred);
                       const auto& q = t.value(target);
                       Tensor<T>* dp = t.grad_buffer(pred);
                       Tensor<T>* dq = t.grad_buffer(target);
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         const T d = T{2} * (p[i] - q[i]) / n * g[0];
                         if (dp) (*dp)[i] += d;
                         if (dq) (*dq)[i] -= d;
                       }
                     });
}

/// Mean absolute error, shape [1]. Subgradient 0 at equality.
template <typename T>
Var l1_loss(Tape<T>& tape, Var pred, Var target) {
  const auto& p = tape.value(pred);
  const auto& q = tape.value(target);
  require_same_shape(p.shape(), q.shape(), "l1_loss");
  long double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(static_cast<long double>(p[i]) - q[i]);
  const T n = static_cast<T>(p.size());
  return tape.record(Tensor<T>({1}, static_cast<T>(acc / p.size())), {pred, target},
                     [pred, target, n](Tape<T>& t, const Tensor<T>& g) {
                       const auto& p = t.value(pred);
                       const auto& q = t.value(target);
                       Tensor<T>* dp = t.grad_buffer(pred);
                       Tensor<T>* dq = t.grad_buffer(target);
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         const T s = p[i] > q[i] ? T{1} : (p[i] < q[i] ? T{-1} : T{0});
                         if (dp) (*dp)[i] += s / n * g[0];
                         if (dq) (*dq)[i] -= s / n * g[0];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Compares the analytic gradient of `op` at `input` with central differences.
/// `op(tape, x)` may return any shape; it is reduced to a scalar by a fixed
/// random projection so every output coordinate contributes. Returns
/// max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
template <typename Op>
double grad_check(Op&& op, const Tensor<double>& input, double eps = 1e-5, std::uint64_t seed = 0x5eed) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw DomainError("grad_check: eps must lie in [1e-6, 1e-3]");
  Tensor<double> projection;
  auto evaluate = [&](const Tensor<double>& x, Tensor<double>* grad_out) {
    Tape<double> tape;
    Var xv = tape.leaf(x, grad_out != nullptr);
    Var y = op(tape, xv);
    if (projection.empty()) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      projection = Tensor<double>(tape.value(y).shape());
      for (auto& v : projection.values()) v = u(rng);
    }
    Var r = tape.constant(projection);
    Var loss = sum(tape, mul(tape, y, r));
    if (grad_out) {
      tape.backward(loss);
      *grad_out = tape.grad(xv);
    }
    return tape.value(loss)[0];
  };
  Tensor<double> analytic;
  evaluate(input, &analytic);
  if (!analytic.all_finite()) throw NumericError("grad_check: non-finite analytic gradient");
  double worst = 0;
  Tensor<double> probe = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    probe[i] = input[i] + eps;
    const double up = evaluate(probe, nullptr);
    probe[i] = input[i] - eps;
    const double down = evaluate(probe, nullptr);
    probe[i] = input[i];
    const double numeric = (up - down) / (2 * eps);
    if (!std::isfinite(numeric)) throw NumericError("grad_check: non-finite numeric gradient");
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric)));
  }
  return worst;
}

}  // namespace gkan
