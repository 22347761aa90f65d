#pragma once

// Reverse-mode automatic differentiation over dense N-D tensors, with exactly
// the operator set the generator/discriminator networks need. Templated on
// the scalar type: float for training, double for gradient checking.
//
// Every op creates a graph node holding the result; when gradients are
// enabled and an input requires grad, the node keeps references to its
// parents and a backprop closure. backward() replays the recorded nodes in
// reverse creation order, which is a valid topological order.
//
// Parallel kernels partition work by output element only, so each scalar is
// accumulated in a fixed sequential order and results do not depend on the
// thread count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctseg::ad {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// RAII scope that disables graph recording (inference / detached evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline uint64_t next_seq() {
  static std::atomic<uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <class T>
struct Node {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool backward_ran = false;  // set on a loss root once backward has run
  bool seq_mark = false;      // transient visit flag for Tape construction
  uint64_t seq = next_seq();
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(std::vector<int> shape, T v, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(count(t.node_->shape), v);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_data(std::vector<int> shape, std::vector<T> data,
                          bool requires_grad = false) {
    if (count(shape) != data.size())
      throw std::invalid_argument("Tensor: data length does not match shape");
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  size_t size() const { return node_->value.size(); }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor is not scalar");
    return node_->value[0];
  }

  // Leaf copy of the values, outside any graph.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    t.node_->requires_grad = false;
    return t;
  }

  std::shared_ptr<Node<T>> node() const { return node_; }

  static size_t count(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative extent");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Builds the result node; wires parents + backprop only when recording.
template <class T>
Tensor<T> make_result(std::vector<int> shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backprop) {
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(value));
  bool needs = false;
  if (grad_mode())
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) needs = true;
  if (needs) {
    out.node()->requires_grad = true;
    for (auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backprop = std::move(backprop);
  }
  return out;
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

inline int conv_out_extent(int in, int k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

}  // namespace detail

// ---- elementwise & reduction ops -------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return detail::make_result<T>(a.shape(), std::move(v), {a, b}, [](Node<T>& n) {
    for (int p = 0; p < 2; ++p) {
      if (!n.parents[p]->requires_grad) continue;
      n.parents[p]->ensure_grad();
      for (size_t i = 0; i < n.size(); ++i) n.parents[p]->grad[i] += n.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return detail::make_result<T>(a.shape(), std::move(v), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      for (size_t i = 0; i < n.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      for (size_t i = 0; i < n.size(); ++i) n.parents[1]->grad[i] -= n.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return detail::make_result<T>(a.shape(), std::move(v), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      for (size_t i = 0; i < n.size(); ++i)
        n.parents[0]->grad[i] += n.grad[i] * n.parents[1]->value[i];
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      for (size_t i = 0; i < n.size(); ++i)
        n.parents[1]->grad[i] += n.grad[i] * n.parents[0]->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  return detail::make_result<T>(a.shape(), std::move(v), {a}, [c](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (size_t i = 0; i < n.size(); ++i) n.parents[0]->grad[i] += n.grad[i] * c;
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return detail::make_result<T>({1}, {s}, {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    const T g = n.grad[0];
    for (auto& gi : n.parents[0]->grad) gi += g;
  });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  std::vector<T> v(x.size());
  for (size_t i = 0; i < v.size(); ++i) {
    const T xi = x.data()[i];
    v[i] = xi >= T(0) ? xi : slope * xi;
  }
  return detail::make_result<T>(x.shape(), std::move(v), {x}, [slope](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (size_t i = 0; i < n.size(); ++i) {
      // subgradient at 0: positive branch
      const T d = n.parents[0]->value[i] >= T(0) ? T(1) : slope;
      n.parents[0]->grad[i] += n.grad[i] * d;
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> v(x.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(x.data()[i]);
  return detail::make_result<T>(x.shape(), std::move(v), {x}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (size_t i = 0; i < n.size(); ++i) {
      const T y = n.value[i];
      n.parents[0]->grad[i] += n.grad[i] * (T(1) - y * y);
    }
  });
}

// ---- losses -----------------------------------------------------------------

template <class T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "l1_loss");
  if (a.size() == 0) throw std::invalid_argument("l1_loss: empty input");
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i)
    acc += std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
  const T inv_n = T(1) / static_cast<T>(a.size());
  const T out = static_cast<T>(acc / static_cast<double>(a.size()));
  return detail::make_result<T>({1}, {out}, {a, b}, [inv_n](Node<T>& n) {
    const T g = n.grad[0] * inv_n;
    for (int p = 0; p < 2; ++p) {
      if (!n.parents[p]->requires_grad) continue;
      n.parents[p]->ensure_grad();
      const T sgn = p == 0 ? T(1) : T(-1);
      for (size_t i = 0; i < n.parents[0]->value.size(); ++i) {
        const T d = n.parents[0]->value[i] - n.parents[1]->value[i];
        const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        n.parents[p]->grad[i] += sgn * g * s;
      }
    }
  });
}

template <class T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mse_loss");
  if (a.size() == 0) throw std::invalid_argument("mse_loss: empty input");
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    acc += d * d;
  }
  const T inv_n = T(1) / static_cast<T>(a.size());
  const T out = static_cast<T>(acc / static_cast<double>(a.size()));
  return detail::make_result<T>({1}, {out}, {a, b}, [inv_n](Node<T>& n) {
    const T g = n.grad[0] * inv_n * T(2);
    for (int p = 0; p < 2; ++p) {
      if (!n.parents[p]->requires_grad) continue;
      n.parents[p]->ensure_grad();
      const T sgn = p == 0 ? T(1) : T(-1);
      for (size_t i = 0; i < n.parents[0]->value.size(); ++i) {
        const T d = n.parents[0]->value[i] - n.parents[1]->value[i];
        n.parents[p]->grad[i] += sgn * g * d;
      }
    }
  });
}

// ---- structural ops ----------------------------------------------------------

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (!b.defined() || b.size() == 0) return a;
  if (a.shape().size() != 4 || b.shape().size() != 4)
    throw std::invalid_argument("concat_channels: expects NCHW tensors");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: batch/spatial mismatch");
  const int n = a.dim(0), c1 = a.dim(1), c2 = b.dim(1), h = a.dim(2), w = a.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<T> v(static_cast<size_t>(n) * (c1 + c2) * plane);
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + static_cast<size_t>(i) * c1 * plane, c1 * plane,
                v.begin() + static_cast<size_t>(i) * (c1 + c2) * plane);
    std::copy_n(b.data().begin() + static_cast<size_t>(i) * c2 * plane, c2 * plane,
                v.begin() + static_cast<size_t>(i) * (c1 + c2) * plane + c1 * plane);
  }
  return detail::make_result<T>({n, c1 + c2, h, w}, std::move(v), {a, b},
                                [n, c1, c2, plane](Node<T>& nd) {
    for (int p = 0; p < 2; ++p) {
      auto& par = *nd.parents[p];
      if (!par.requires_grad) continue;
      par.ensure_grad();
      const int cs = p == 0 ? c1 : c2;
      const size_t off = p == 0 ? 0 : static_cast<size_t>(c1) * plane;
      for (int i = 0; i < n; ++i) {
        const T* src = nd.grad.data() + static_cast<size_t>(i) * (c1 + c2) * plane + off;
        T* dst = par.grad.data() + static_cast<size_t>(i) * cs * plane;
        for (size_t j = 0; j < static_cast<size_t>(cs) * plane; ++j) dst[j] += src[j];
      }
    }
  });
}

// 2x nearest-neighbor upsampling of NCHW tensors.
template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  if (x.shape().size() != 4) throw std::invalid_argument("upsample: expects NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> v(static_cast<size_t>(n) * c * 4 * h * w);
  const T* src = x.data().data();
  for (int pc = 0; pc < n * c; ++pc) {
    const T* in = src + static_cast<size_t>(pc) * h * w;
    T* out = v.data() + static_cast<size_t>(pc) * 4 * h * w;
    for (int y = 0; y < h; ++y) {
      T* row0 = out + static_cast<size_t>(2 * y) * 2 * w;
      T* row1 = row0 + static_cast<size_t>(2) * w;
      for (int xx = 0; xx < w; ++xx) {
        const T val = in[static_cast<size_t>(y) * w + xx];
        row0[2 * xx] = val;
        row0[2 * xx + 1] = val;
        row1[2 * xx] = val;
        row1[2 * xx + 1] = val;
      }
    }
  }
  return detail::make_result<T>({n, c, 2 * h, 2 * w}, std::move(v), {x},
                                [n, c, h, w](Node<T>& nd) {
    auto& par = *nd.parents[0];
    if (!par.requires_grad) return;
    par.ensure_grad();
    for (int pc = 0; pc < n * c; ++pc) {
      const T* gy = nd.grad.data() + static_cast<size_t>(pc) * 4 * h * w;
      T* gx = par.grad.data() + static_cast<size_t>(pc) * h * w;
      for (int y = 0; y < h; ++y) {
        const T* row0 = gy + static_cast<size_t>(2 * y) * 2 * w;
        const T* row1 = row0 + static_cast<size_t>(2) * w;
        for (int xx = 0; xx < w; ++xx)
          gx[static_cast<size_t>(y) * w + xx] +=
              row0[2 * xx] + row0[2 * xx + 1] + row1[2 * xx] + row1[2 * xx + 1];
      }
    }
  });
}

// ---- conv2d ------------------------------------------------------------------

// Cross-correlation (no kernel flip): x [N,C,H,W], w [F,C,k,k], b [F].
// H' = (H + 2*padding - k) / stride + 1.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int padding) {
  if (x.shape().size() != 4 || w.shape().size() != 4)
    throw std::invalid_argument("conv2d: x and w must be 4-D");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int f = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c) throw std::invalid_argument("conv2d: channel count mismatch");
  if (w.dim(2) != w.dim(3)) throw std::invalid_argument("conv2d: kernel must be square");
  if (b.shape() != std::vector<int>{f}) throw std::invalid_argument("conv2d: bias shape");
  if (k < 1 || stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad params");
  if (h + 2 * padding < k || wd + 2 * padding < k)
    throw std::invalid_argument("conv2d: input smaller than kernel");

  const int ho = detail::conv_out_extent(h, k, stride, padding);
  const int wo = detail::conv_out_extent(wd, k, stride, padding);
  std::vector<T> out(static_cast<size_t>(n) * f * ho * wo);

  const T* xd = x.data().data();
  const T* wd_ = w.data().data();
  const T* bd = b.data().data();

#pragma omp parallel for schedule(static)
  for (int nf = 0; nf < n * f; ++nf) {
    const int ni = nf / f, fi = nf % f;
    T* op = out.data() + static_cast<size_t>(nf) * ho * wo;
    std::fill(op, op + static_cast<size_t>(ho) * wo, bd[fi]);
    for (int ci = 0; ci < c; ++ci) {
      const T* xp = xd + (static_cast<size_t>(ni) * c + ci) * h * wd;
      const T* wp = wd_ + (static_cast<size_t>(fi) * c + ci) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wp[ky * k + kx];
          if (wv == T(0)) continue;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            T* orow = op + static_cast<size_t>(oy) * wo;
            const T* irow = xp + static_cast<size_t>(iy) * wd;
            // first/last valid ox: 0 <= ox*stride - padding + kx < wd
            int ox0 = 0;
            while (ox0 < wo && ox0 * stride - padding + kx < 0) ++ox0;
            int ox1 = wo;
            while (ox1 > ox0 && (ox1 - 1) * stride - padding + kx >= wd) --ox1;
            const T* ip = irow + (static_cast<size_t>(ox0) * stride - padding + kx);
            if (stride == 1) {
              for (int ox = ox0; ox < ox1; ++ox, ++ip) orow[ox] += wv * *ip;
            } else {
              for (int ox = ox0; ox < ox1; ++ox, ip += stride) orow[ox] += wv * *ip;
            }
          }
        }
      }
    }
  }

  auto backprop = [n, c, h, wd, f, k, stride, padding, ho, wo](Node<T>& nd) {
    auto& xn = *nd.parents[0];
    auto& wn = *nd.parents[1];
    auto& bn = *nd.parents[2];
    const T* gy = nd.grad.data();

    if (bn.requires_grad) {
      bn.ensure_grad();
      for (int fi = 0; fi < f; ++fi) {
        double acc = 0;
        for (int ni = 0; ni < n; ++ni) {
          const T* gp = gy + (static_cast<size_t>(ni) * f + fi) * ho * wo;
          for (size_t i = 0; i < static_cast<size_t>(ho) * wo; ++i) acc += gp[i];
        }
        bn.grad[fi] += static_cast<T>(acc);
      }
    }

    if (wn.requires_grad) {
      wn.ensure_grad();
      const T* xd = xn.value.data();
#pragma omp parallel for schedule(static)
      for (int fc = 0; fc < f * c; ++fc) {
        const int fi = fc / c, ci = fc % c;
        T* gw = wn.grad.data() + static_cast<size_t>(fc) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            double acc = 0;
            for (int ni = 0; ni < n; ++ni) {
              const T* xp = xd + (static_cast<size_t>(ni) * c + ci) * h * wd;
              const T* gp = gy + (static_cast<size_t>(ni) * f + fi) * ho * wo;
              for (int oy = 0; oy < ho; ++oy) {
                const int iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= h) continue;
                const T* irow = xp + static_cast<size_t>(iy) * wd;
                const T* grow = gp + static_cast<size_t>(oy) * wo;
                int ox0 = 0;
                while (ox0 < wo && ox0 * stride - padding + kx < 0) ++ox0;
                int ox1 = wo;
                while (ox1 > ox0 && (ox1 - 1) * stride - padding + kx >= wd) --ox1;
                const T* ip = irow + (static_cast<size_t>(ox0) * stride - padding + kx);
                for (int ox = ox0; ox < ox1; ++ox, ip += stride)
                  acc += static_cast<double>(grow[ox]) * static_cast<double>(*ip);
              }
            }
            gw[ky * k + kx] += static_cast<T>(acc);
          }
        }
      }
    }

    if (xn.requires_grad) {
      xn.ensure_grad();
      const T* wdta = wn.value.data();
#pragma omp parallel for schedule(static)
      for (int nc = 0; nc < n * c; ++nc) {
        const int ni = nc / c, ci = nc % c;
        T* gx = xn.grad.data() + static_cast<size_t>(nc) * h * wd;
        for (int fi = 0; fi < f; ++fi) {
          const T* gp = gy + (static_cast<size_t>(ni) * f + fi) * ho * wo;
          const T* wp = wdta + (static_cast<size_t>(fi) * c + ci) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const T wv = wp[ky * k + kx];
              if (wv == T(0)) continue;
              for (int oy = 0; oy < ho; ++oy) {
                const int iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= h) continue;
                T* xrow = gx + static_cast<size_t>(iy) * wd;
                const T* grow = gp + static_cast<size_t>(oy) * wo;
                int ox0 = 0;
                while (ox0 < wo && ox0 * stride - padding + kx < 0) ++ox0;
                int ox1 = wo;
                while (ox1 > ox0 && (ox1 - 1) * stride - padding + kx >= wd) --ox1;
                T* ip = xrow + (static_cast<size_t>(ox0) * stride - padding + kx);
                for (int ox = ox0; ox < ox1; ++ox, ip += stride) *ip += wv * grow[ox];
              }
            }
          }
        }
      }
    }
  };

  return detail::make_result<T>({n, f, ho, wo}, std::move(out), {x, w, b},
                                std::move(backprop));
}

// 2x nearest-neighbor upsample followed by a 3x3 stride-1 pad-1 convolution.
template <class T>
Tensor<T> upsample_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.dim(2) != 3 || w.dim(3) != 3)
    throw std::invalid_argument("upsample_conv: kernel must be 3x3");
  return conv2d(upsample_nearest2x(x), w, b, /*stride=*/1, /*padding=*/1);
}

// ---- instance normalization ---------------------------------------------------

// Per (n, c) plane: (x - mean) / sqrt(var + eps) * gamma[c] + beta[c].
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                        const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.shape().size() != 4) throw std::invalid_argument("instance_norm: expects NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.shape() != std::vector<int>{c} || beta.shape() != std::vector<int>{c})
    throw std::invalid_argument("instance_norm: gamma/beta must have shape [C]");
  const size_t plane = static_cast<size_t>(h) * w;
  if (plane < 2) throw std::invalid_argument("instance_norm: plane must have >= 2 elements");

  std::vector<T> out(x.size());
  auto stats = std::make_shared<std::vector<T>>(2 * static_cast<size_t>(n) * c);  // mean, inv_sigma

  const T* xd = x.data().data();
  for (int pc = 0; pc < n * c; ++pc) {
    const int ci = pc % c;
    const T* xp = xd + static_cast<size_t>(pc) * plane;
    double mean = 0;
    for (size_t i = 0; i < plane; ++i) mean += xp[i];
    mean /= static_cast<double>(plane);
    double var = 0;
    for (size_t i = 0; i < plane; ++i) {
      const double d = xp[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(plane);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    (*stats)[2 * pc] = static_cast<T>(mean);
    (*stats)[2 * pc + 1] = inv;
    const T g = gamma.data()[ci], bch = beta.data()[ci], m = static_cast<T>(mean);
    T* op = out.data() + static_cast<size_t>(pc) * plane;
    for (size_t i = 0; i < plane; ++i) op[i] = (xp[i] - m) * inv * g + bch;
  }

  auto backprop = [n, c, plane, stats](Node<T>& nd) {
    auto& xn = *nd.parents[0];
    auto& gn = *nd.parents[1];
    auto& bn = *nd.parents[2];
    const T* gy = nd.grad.data();
    const T* xd = xn.value.data();

    if (bn.requires_grad) bn.ensure_grad();
    if (gn.requires_grad) gn.ensure_grad();
    if (xn.requires_grad) xn.ensure_grad();

    for (int pc = 0; pc < n * c; ++pc) {
      const int ci = pc % c;
      const T mean = (*stats)[2 * pc], inv = (*stats)[2 * pc + 1];
      const T* xp = xd + static_cast<size_t>(pc) * plane;
      const T* gp = gy + static_cast<size_t>(pc) * plane;

      double sum_g = 0, sum_gx = 0;
      for (size_t i = 0; i < plane; ++i) {
        const double xhat = (xp[i] - mean) * inv;
        sum_g += gp[i];
        sum_gx += gp[i] * xhat;
      }
      if (bn.requires_grad) bn.grad[ci] += static_cast<T>(sum_g);
      if (gn.requires_grad) gn.grad[ci] += static_cast<T>(sum_gx);
      if (xn.requires_grad) {
        const double gscale = gn.value[ci] * inv;
        const double mg = sum_g / static_cast<double>(plane);
        const double mgx = sum_gx / static_cast<double>(plane);
        T* gx = xn.grad.data() + static_cast<size_t>(pc) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double xhat = (xp[i] - mean) * inv;
          gx[i] += static_cast<T>(gscale * (gp[i] - mg - xhat * mgx));
        }
      }
    }
  };

  return detail::make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                                std::move(backprop));
}

// ---- backward ------------------------------------------------------------------

// Ordered record of the operations feeding a root, reverse creation order.
template <class T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root) {
    if (!root.defined()) throw std::invalid_argument("Tape: undefined root");
    std::vector<std::shared_ptr<Node<T>>> stack{root.node()};
    std::vector<Node<T>*> seen;
    while (!stack.empty()) {
      auto node = stack.back();
      stack.pop_back();
      if (node->seq_mark) continue;
      node->seq_mark = true;
      seen.push_back(node.get());
      order_.push_back(node);
      for (auto& p : node->parents) stack.push_back(p);
    }
    for (auto* n : seen) n->seq_mark = false;
    std::sort(order_.begin(), order_.end(),
              [](const auto& a, const auto& b) { return a->seq > b->seq; });
  }

  size_t num_ops() const { return order_.size(); }

  // Seeds d(root)/d(root) = 1 and accumulates into every reachable
  // requires_grad leaf. Visits each node exactly once.
  void backward() {
    if (order_.empty()) return;
    order_.front()->ensure_grad();
    order_.front()->grad[0] = T(1);
    for (auto& node : order_) {
      if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
  }

 private:
  std::vector<std::shared_ptr<Node<T>>> order_;
};

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar");
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss is detached from any graph");
  if (loss.node()->backward_ran)
    throw std::logic_error("backward: already ran on this loss; rebuild the graph");
  loss.node()->backward_ran = true;
  Tape<T>(loss).backward();
}

// ---- gradient check ---------------------------------------------------------

// Central differences per coordinate; returns
// max_i |analytic_i - numeric_i| / max(1e-8, |numeric_i|).
template <class T>
double gradcheck(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                 double h = 1e-4) {
  static_assert(std::is_floating_point_v<T>);
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<T> loss = f(x);
  if (loss.size() != 1) throw std::invalid_argument("gradcheck: f must be scalar-valued");
  backward(loss);
  std::vector<T> analytic = x.has_grad() ? x.grad() : std::vector<T>(x.size(), T(0));

  double max_err = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const T orig = x.data()[i];
    double fp, fm;
    {
      NoGradGuard ng;
      x.data()[i] = orig + static_cast<T>(h);
      fp = static_cast<double>(f(x).item());
      x.data()[i] = orig - static_cast<T>(h);
      fm = static_cast<double>(f(x).item());
      x.data()[i] = orig;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(static_cast<double>(analytic[i]) - numeric) /
                       std::max(1e-8, std::abs(numeric));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace ctseg::ad
