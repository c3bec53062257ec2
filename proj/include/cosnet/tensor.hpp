#pragma once

// Dense row-major f64 tensors with a dynamically recorded reverse-mode tape.
//
// Every op returns a fresh tensor; values are never modified after the op
// that produced them returns. Leaves (parameters, inputs) may be edited in
// place through mutable_data(), which is how optimizers update weights.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cosnet/error.hpp"

namespace cosnet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

inline void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    }
    check_finite(data, "tensor construction");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) { return Tensor({1}, {value}, requires_grad); }

  static Tensor eye(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = 1.0;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::span<const double> data() const& { return node_->data; }
  std::span<const double> data() const&& = delete;
  const std::vector<double>& values() const { return node_->data; }

  // Only valid on leaves; editing an interior node would desynchronize the tape.
  std::span<double> mutable_data() {
    if (!node_->is_leaf()) throw UsageError("mutable_data() on a non-leaf tensor");
    return node_->data;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw UsageError("set_requires_grad() on a non-leaf tensor");
    node_->requires_grad = on;
  }

  // Empty span until a backward pass has reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  double item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  double at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t k = 0;
    for (auto i : index) {
      if (i >= node_->shape[k]) throw DimensionError("index out of range for " + shape_str(shape()));
      flat = flat * node_->shape[k] + i;
      ++k;
    }
    return node_->data[flat];
  }

  // Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const char* op() const { return node_->op; }

  // Reverse-mode pass from this scalar. Leaf gradients accumulate across
  // calls until zero_grad(); interior gradients are recomputed. The graph
  // links are released afterwards, so each graph supports one backward.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  // Builds an op result. Parents and the backward closure are only kept when
  // a parent requires grad and grad recording is enabled.
  static Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn, const char* op) {
    check_finite(data, op);
    Tensor out;
    out.node_ = std::make_shared<detail::Node>();
    out.node_->shape = std::move(shape);
    out.node_->data = std::move(data);
    out.node_->op = op;
    bool needs = false;
    if (grad_enabled()) {
      for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
      out.node_->requires_grad = true;
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
  if (size() != 1) throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->is_leaf()) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->data.size(), 0.0);
    }
  }
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
  for (auto* n : order) {
    if (!n->is_leaf()) {
      n->backward_fn = nullptr;
      n->parents.clear();
    }
  }
}

namespace detail {

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    const double* G = self.grad.data();
    if (pa.requires_grad) {
      // dA = G * B^T, as row axpys against B^T.
      std::vector<double> bt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = pb.data[p * n + j];
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = G + i * n;
        double* ga = pa.grad.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[j];
          if (gv == 0.0) continue;
          const double* brow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) ga[p] += gv * brow[p];
        }
      }
    }
    if (pb.requires_grad) {
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.data[i * k + p];
          if (av == 0.0) continue;
          double* gb = pb.grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gb[j] += av * g[j];
        }
      }
    }
  }, "matmul");
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) pa.grad[i * c + j] += self.grad[j * r + i];
  }, "transpose");
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return Tensor::make_result(std::move(shape), a.values(), {a}, [](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  }, "reshape");
}

// Softmax down each column, with the column max subtracted first.
inline Tensor softmax_columns(const Tensor& m) {
  detail::require_rank(m, 2, "softmax_columns");
  const std::size_t r = m.dim(0), c = m.dim(1);
  const auto in = m.data();
  std::vector<double> out(r * c);
  std::vector<double> colmax(c, -INFINITY);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) colmax[j] = std::max(colmax[j], in[i * c + j]);
  std::vector<double> colsum(c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(in[i * c + j] - colmax[j]);
      out[i * c + j] = e;
      colsum[j] += e;
    }
  }
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= colsum[j];
  return Tensor::make_result({r, c}, std::move(out), {m}, [r, c](detail::Node& self) {
    auto& pm = detail::parent(self, 0);
    const auto& y = self.data;
    const auto& g = self.grad;
    std::vector<double> dot(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dot[j] += g[i * c + j] * y[i * c + j];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) pm.grad[i * c + j] += y[i * c + j] * (g[i * c + j] - dot[j]);
  }, "softmax_columns");
}

// ---------------------------------------------------------------------------
// Convolution and resampling. Images are H x W x C, kernels kh x kw x Cin x Cout.

inline Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(k, 4, "conv2d");
  const std::size_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const std::size_t kh = k.dim(0), kw = k.dim(1), Cout = k.dim(3);
  if (k.dim(2) != Cin) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " has " + std::to_string(Cin) +
                         " channels but kernel " + shape_str(k.shape()) + " expects " + std::to_string(k.dim(2)));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv2d: kernel sides must be odd, got " + shape_str(k.shape()));
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const long long hspan = static_cast<long long>(H + 2 * pad) - static_cast<long long>(kh);
  const long long wspan = static_cast<long long>(W + 2 * pad) - static_cast<long long>(kw);
  if (hspan < 0 || wspan < 0) {
    throw DimensionError("conv2d: non-positive output size for input " + shape_str(x.shape()) + " and kernel " +
                         shape_str(k.shape()));
  }
  const std::size_t Ho = static_cast<std::size_t>(hspan) / stride + 1;
  const std::size_t Wo = static_cast<std::size_t>(wspan) / stride + 1;

  std::vector<double> out(Ho * Wo * Cout, 0.0);
  const double* X = x.data().data();
  const double* K = k.data().data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double* o = out.data() + (oy * Wo + ox) * Cout;
      for (std::size_t dy = 0; dy < kh; ++dy) {
        const long long iy = static_cast<long long>(oy * stride + dy) - static_cast<long long>(pad);
        if (iy < 0 || iy >= static_cast<long long>(H)) continue;
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const long long ix = static_cast<long long>(ox * stride + dx) - static_cast<long long>(pad);
          if (ix < 0 || ix >= static_cast<long long>(W)) continue;
          const double* in = X + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
          const double* kk = K + (dy * kw + dx) * Cin * Cout;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double v = in[ci];
            if (v == 0.0) continue;
            const double* krow = kk + ci * Cout;
            for (std::size_t co = 0; co < Cout; ++co) o[co] += v * krow[co];
          }
        }
      }
    }
  }
  return Tensor::make_result({Ho, Wo, Cout}, std::move(out), {x, k},
                             [=](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    auto& pk = detail::parent(self, 1);
    const double* G = self.grad.data();
    // Kernel with Cin and Cout swapped, so the input gradient is an axpy over Cin.
    std::vector<double> kt;
    if (px.requires_grad) {
      kt.resize(pk.data.size());
      for (std::size_t t = 0; t < kh * kw; ++t)
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t co = 0; co < Cout; ++co)
            kt[(t * Cout + co) * Cin + ci] = pk.data[(t * Cin + ci) * Cout + co];
    }
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const double* g = G + (oy * Wo + ox) * Cout;
        for (std::size_t dy = 0; dy < kh; ++dy) {
          const long long iy = static_cast<long long>(oy * stride + dy) - static_cast<long long>(pad);
          if (iy < 0 || iy >= static_cast<long long>(H)) continue;
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const long long ix = static_cast<long long>(ox * stride + dx) - static_cast<long long>(pad);
            if (ix < 0 || ix >= static_cast<long long>(W)) continue;
            const std::size_t in_off = (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
            const std::size_t tap = dy * kw + dx;
            if (px.requires_grad) {
              double* gx = px.grad.data() + in_off;
              const double* ktap = kt.data() + tap * Cout * Cin;
              for (std::size_t co = 0; co < Cout; ++co) {
                const double gv = g[co];
                if (gv == 0.0) continue;
                const double* krow = ktap + co * Cin;
                for (std::size_t ci = 0; ci < Cin; ++ci) gx[ci] += gv * krow[ci];
              }
            }
            if (pk.requires_grad) {
              const double* in = px.data.data() + in_off;
              double* gk_tap = pk.grad.data() + tap * Cin * Cout;
              for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double v = in[ci];
                if (v == 0.0) continue;
                double* gk = gk_tap + ci * Cout;
                for (std::size_t co = 0; co < Cout; ++co) gk[co] += v * g[co];
              }
            }
          }
        }
      }
    }
  }, "conv2d");
}

// Integer-factor bilinear resize of an H x W x C map, half-pixel centers
// (align_corners = false), edge-clamped.
inline Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
  detail::require_rank(x, 3, "bilinear_upsample");
  if (factor == 0) throw DimensionError("bilinear_upsample: factor must be positive");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t Ho = H * factor, Wo = W * factor;

  struct Tap {
    std::size_t i0, i1;
    double w;
  };
  auto taps = [factor](std::size_t out_len, std::size_t in_len) {
    std::vector<Tap> t(out_len);
    for (std::size_t o = 0; o < out_len; ++o) {
      double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      if (src < 0.0) src = 0.0;
      std::size_t i0 = static_cast<std::size_t>(src);
      if (i0 > in_len - 1) i0 = in_len - 1;
      const std::size_t i1 = std::min(i0 + 1, in_len - 1);
      t[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(Ho, H);
  const auto tx = taps(Wo, W);

  const auto in = x.data();
  std::vector<double> out(Ho * Wo * C);
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    const auto& yt = ty[oy];
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      const auto& xt = tx[ox];
      const double* a = &in[(yt.i0 * W + xt.i0) * C];
      const double* b = &in[(yt.i0 * W + xt.i1) * C];
      const double* c = &in[(yt.i1 * W + xt.i0) * C];
      const double* d = &in[(yt.i1 * W + xt.i1) * C];
      double* o = &out[(oy * Wo + ox) * C];
      for (std::size_t ch = 0; ch < C; ++ch) {
        // Difference form keeps constant maps exactly constant.
        const double top = a[ch] + xt.w * (b[ch] - a[ch]);
        const double bottom = c[ch] + xt.w * (d[ch] - c[ch]);
        o[ch] = top + yt.w * (bottom - top);
      }
    }
  }
  return Tensor::make_result({Ho, Wo, C}, std::move(out), {x}, [=](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const auto& yt = ty[oy];
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const auto& xt = tx[ox];
        const double* g = &self.grad[(oy * Wo + ox) * C];
        const double w00 = (1 - yt.w) * (1 - xt.w), w01 = (1 - yt.w) * xt.w;
        const double w10 = yt.w * (1 - xt.w), w11 = yt.w * xt.w;
        double* a = &px.grad[(yt.i0 * W + xt.i0) * C];
        double* b = &px.grad[(yt.i0 * W + xt.i1) * C];
        double* c = &px.grad[(yt.i1 * W + xt.i0) * C];
        double* d = &px.grad[(yt.i1 * W + xt.i1) * C];
        for (std::size_t ch = 0; ch < C; ++ch) {
          a[ch] += w00 * g[ch];
          b[ch] += w01 * g[ch];
          c[ch] += w10 * g[ch];
          d[ch] += w11 * g[ch];
        }
      }
    }
  }, "bilinear_upsample");
}

// Concatenate two H x W x C maps along channels, a's channels first.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 3, "concat_channels");
  detail::require_rank(b, 3, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
    throw DimensionError("concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t P = a.dim(0) * a.dim(1), Ca = a.dim(2), Cb = b.dim(2), C = Ca + Cb;
  std::vector<double> out(P * C);
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t p = 0; p < P; ++p) {
    std::copy_n(&da[p * Ca], Ca, &out[p * C]);
    std::copy_n(&db[p * Cb], Cb, &out[p * C + Ca]);
  }
  return Tensor::make_result({a.dim(0), a.dim(1), C}, std::move(out), {a, b}, [P, Ca, Cb, C](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    for (std::size_t p = 0; p < P; ++p) {
      if (pa.requires_grad)
        for (std::size_t c = 0; c < Ca; ++c) pa.grad[p * Ca + c] += self.grad[p * C + c];
      if (pb.requires_grad)
        for (std::size_t c = 0; c < Cb; ++c) pb.grad[p * Cb + c] += self.grad[p * C + Ca + c];
    }
  }, "concat_channels");
}

// ---------------------------------------------------------------------------
// Pointwise

namespace detail {

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    auto& px = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      px.grad[i] += self.grad[i] * deriv(px.data[i], self.data[i]);
  }, name);
}

inline double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, "sigmoid", detail::sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// Subgradient sign(0) = 0.
inline Tensor abs(const Tensor& x) {
  return detail::unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor scale(const Tensor& x, double factor) {
  return detail::unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

// Elementwise sum of equal shapes, or a per-channel bias: b of shape [C]
// added at every position of a [..., C] map.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const auto da = a.data();
  const auto db = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
      for (std::size_t k = 0; k < 2; ++k) {
        auto& p = detail::parent(self, k);
        if (!p.requires_grad) continue;
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
      }
    }, "add");
  }
  if (b.rank() == 1 && a.rank() >= 2 && b.dim(0) == a.shape().back()) {
    const std::size_t C = b.dim(0), P = a.size() / C;
    std::vector<double> out(da.size());
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) out[p * C + c] = da[p * C + c] + db[c];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [P, C](detail::Node& self) {
      auto& pa = detail::parent(self, 0);
      auto& pb = detail::parent(self, 1);
      if (pa.requires_grad)
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
      if (pb.requires_grad)
        for (std::size_t p = 0; p < P; ++p)
          for (std::size_t c = 0; c < C; ++c) pb.grad[c] += self.grad[p * C + c];
    }, "add_bias");
  }
  throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  const auto da = a.data();
  const auto db = b.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i];
      if (pb.requires_grad) pb.grad[i] -= self.grad[i];
    }
  }, "sub");
}

// Elementwise product of equal shapes, or a per-position scalar: a is a
// C x N matrix (one column per position) and b has shape [N]; b[i] scales
// every channel of column i.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  const auto da = a.data();
  const auto db = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
      auto& pa = detail::parent(self, 0);
      auto& pb = detail::parent(self, 1);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.data[i];
        if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.data[i];
      }
    }, "mul");
  }
  if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) {
    const std::size_t R = a.dim(0), N = a.dim(1);
    std::vector<double> out(da.size());
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t i = 0; i < N; ++i) out[r * N + i] = da[r * N + i] * db[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [R, N](detail::Node& self) {
      auto& pa = detail::parent(self, 0);
      auto& pb = detail::parent(self, 1);
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t i = 0; i < N; ++i) {
          const double g = self.grad[r * N + i];
          if (pa.requires_grad) pa.grad[r * N + i] += g * pb.data[i];
          if (pb.requires_grad) pb.grad[i] += g * pa.data[r * N + i];
        }
      }
    }, "mul_positions");
  }
  throw DimensionError("mul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

// Diagonal channel weighting: x is [..., C], d is [C]; every position's
// feature vector is multiplied elementwise by d.
inline Tensor scale_channels(const Tensor& x, const Tensor& d) {
  detail::require_rank(d, 1, "scale_channels");
  if (x.shape().back() != d.dim(0)) {
    throw DimensionError("scale_channels: " + shape_str(x.shape()) + " vs weights " + shape_str(d.shape()));
  }
  const std::size_t C = d.dim(0), P = x.size() / C;
  const auto dx = x.data();
  const auto dd = d.data();
  std::vector<double> out(dx.size());
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < C; ++c) out[p * C + c] = dx[p * C + c] * dd[c];
  return Tensor::make_result(x.shape(), std::move(out), {x, d}, [P, C](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    auto& pd = detail::parent(self, 1);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t c = 0; c < C; ++c) {
        const double g = self.grad[p * C + c];
        if (px.requires_grad) px.grad[p * C + c] += g * pd.data[c];
        if (pd.requires_grad) pd.grad[c] += g * px.data[p * C + c];
      }
    }
  }, "scale_channels");
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::make_result({1}, {s}, {x}, [](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    for (auto& g : px.grad) g += self.grad[0];
  }, "sum");
}

inline Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.size());
  return Tensor::make_result({1}, {s / n}, {x}, [n](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    for (auto& g : px.grad) g += self.grad[0] / n;
  }, "mean");
}

// Average over every position of a [..., C] map, giving [C].
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("global_avg_pool: need rank >= 2, got " + shape_str(x.shape()));
  const std::size_t C = x.shape().back(), P = x.size() / C;
  const auto dx = x.data();
  std::vector<double> out(C, 0.0);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < C; ++c) out[c] += dx[p * C + c];
  for (auto& v : out) v /= static_cast<double>(P);
  return Tensor::make_result({C}, std::move(out), {x}, [P, C](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) px.grad[p * C + c] += self.grad[c] / static_cast<double>(P);
  }, "global_avg_pool");
}

}  // namespace cosnet
