#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nlunet/error.hpp"
#include "nlunet/rng.hpp"

namespace nlunet {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Debug-mode guard: every op checks its output for NaN/Inf when enabled.
// On by default in debug builds, off in release; tests may flip it.
inline bool& nan_guard_enabled() {
#ifndef NDEBUG
  static bool v = true;
#else
  static bool v = false;
#endif
  return v;
}

// Thread-local switch that disables tape recording (used during inference
// and for the finite-difference probe evaluations).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorImpl;

// One recorded op. `inputs` keeps the producing subgraph alive and defines
// the DAG edges for the topological sweep; `backward` reads the node's own
// output gradient and accumulates into the inputs' gradients.
template <typename T>
struct TapeNode {
  const char* op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily; same length as data once present
  bool requires_grad = false;
  std::shared_ptr<TapeNode<T>> node;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

// Dense N-d array with row-major layout (last axis fastest). Feature maps use
// [batch, D, H, W, C] with C contiguous. Copying a Tensor copies the handle,
// not the buffer.
template <typename T>
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(shape_numel(t.impl_->shape), T(0));
    return t;
  }

  // Skips the zero fill; the caller must write every element.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data.resize(shape_numel(t.impl_->shape));
    return t;
  }

  static Tensor full(Shape shape, T value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  int64_t dim(size_t i) const { return impl_->shape.at(i); }
  size_t ndim() const { return impl_->shape.size(); }

  T* data() { return impl_->data.data(); }
  const T* data() const { return impl_->data.data(); }
  std::vector<T>& data_vec() { return impl_->data; }
  const std::vector<T>& data_vec() const { return impl_->data; }

  T item() const {
    if (numel() != 1)
      throw ContractError("Tensor::item: tensor has shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<T>& grad_data() const { return impl_->grad; }
  Tensor grad_tensor() const {
    if (!has_grad()) throw ContractError("Tensor::grad_tensor: no gradient recorded");
    return Tensor::from(impl_->shape, impl_->grad);
  }
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy of the values; no tape linkage, requires_grad off.
  Tensor clone() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }
  Tensor detach() const { return clone(); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  if (!nan_guard_enabled()) return;
  for (const T& v : t.data_vec())
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string("non-finite value produced by ") + op);
}

// Attach a tape node to `out` if gradients are being tracked and any input
// participates in differentiation.
template <typename T, typename F>
inline void autograd_attach(Tensor<T>& out, const char* op,
                            std::initializer_list<Tensor<T>> inputs, F&& backward) {
  if (!grad_mode()) return;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return;
  auto node = std::make_shared<TapeNode<T>>();
  node->op = op;
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::forward<F>(backward);
  out.impl()->node = std::move(node);
  out.set_requires_grad(true);
}

template <typename T>
inline void accumulate_grad(const std::shared_ptr<TensorImpl<T>>& impl, const T* g, int64_t n) {
  if (!impl->requires_grad) return;
  impl->ensure_grad();
  T* dst = impl->grad.data();
  for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

// Reverse-mode sweep from a scalar loss. Visits each recorded node exactly
// once in reverse topological order; gradients accumulate additively, so a
// tensor used twice receives the sum of both contributions.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  TensorImpl<T>* root = loss.impl().get();

  struct Frame {
    TensorImpl<T>* impl;
    size_t next_input = 0;
  };
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<const TensorImpl<T>*> seen;
  std::vector<Frame> stack;
  stack.push_back({root});
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.impl->node && f.next_input < f.impl->node->inputs.size()) {
      TensorImpl<T>* child = f.impl->node->inputs[f.next_input++].get();
      if (child->node && seen.insert(child).second) stack.push_back({child});
    } else {
      order.push_back(f.impl);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* impl = *it;
    if (impl->node && !impl->grad.empty()) impl->node->backward(*impl);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  autograd_attach(out, "add", {a, b},
                  [ai = a.impl(), bi = b.impl(), n](TensorImpl<T>& o) {
                    accumulate_grad(ai, o.grad.data(), n);
                    accumulate_grad(bi, o.grad.data(), n);
                  });
  check_finite(out, "add");
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  autograd_attach(out, "sub", {a, b},
                  [ai = a.impl(), bi = b.impl(), n](TensorImpl<T>& o) {
                    accumulate_grad(ai, o.grad.data(), n);
                    if (bi->requires_grad) {
                      bi->ensure_grad();
                      for (int64_t i = 0; i < n; ++i) bi->grad[i] -= o.grad[i];
                    }
                  });
  check_finite(out, "sub");
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  autograd_attach(out, "mul", {a, b},
                  [ai = a.impl(), bi = b.impl(), n](TensorImpl<T>& o) {
                    if (ai->requires_grad) {
                      ai->ensure_grad();
                      for (int64_t i = 0; i < n; ++i) ai->grad[i] += o.grad[i] * bi->data[i];
                    }
                    if (bi->requires_grad) {
                      bi->ensure_grad();
                      for (int64_t i = 0; i < n; ++i) bi->grad[i] += o.grad[i] * ai->data[i];
                    }
                  });
  check_finite(out, "mul");
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  autograd_attach(out, "scale", {a}, [ai = a.impl(), s, n](TensorImpl<T>& o) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (int64_t i = 0; i < n; ++i) ai->grad[i] += o.grad[i] * s;
  });
  check_finite(out, "scale");
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  const T* pa = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  autograd_attach(out, "sum", {a}, [ai = a.impl(), n](TensorImpl<T>& o) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    const T g = o.grad[0];
    for (int64_t i = 0; i < n; ++i) ai->grad[i] += g;
  });
  check_finite(out, "sum");
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor<T> out = Tensor<T>::from(std::move(shape), a.data_vec());
  autograd_attach(out, "reshape", {a}, [ai = a.impl()](TensorImpl<T>& o) {
    accumulate_grad(ai, o.grad.data(), static_cast<int64_t>(o.grad.size()));
  });
  return out;
}

// Swap the last two axes of a 2-d or 3-d tensor.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  const Shape& s = a.shape();
  if (s.size() != 2 && s.size() != 3)
    throw ShapeError("transpose_last2: expected 2-d or 3-d, got " + shape_str(s));
  const int64_t B = s.size() == 3 ? s[0] : 1;
  const int64_t M = s[s.size() - 2];
  const int64_t N = s[s.size() - 1];
  Shape os = s;
  os[s.size() - 2] = N;
  os[s.size() - 1] = M;
  Tensor<T> out = Tensor<T>::uninitialized(os);
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t m = 0; m < M; ++m)
      for (int64_t n = 0; n < N; ++n) po[(b * N + n) * M + m] = pa[(b * M + m) * N + n];
  autograd_attach(out, "transpose_last2", {a}, [ai = a.impl(), B, M, N](TensorImpl<T>& o) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t m = 0; m < M; ++m)
        for (int64_t n = 0; n < N; ++n)
          ai->grad[(b * M + m) * N + n] += o.grad[(b * N + n) * M + m];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace detail {

// C[M,N] += A[M,K] * B[K,N], all row-major.
template <typename T>
inline void gemm_acc(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    T* crow = c + i * N;
    const T* arow = a + i * K;
    for (int64_t k = 0; k < K; ++k) {
      const T av = arow[k];
      const T* brow = b + k * N;
      for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] = A[M,K] * B[K,N]; the first k pass assigns, so C may start
// uninitialized.
template <typename T>
inline void gemm_set(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    T* crow = c + i * N;
    const T* arow = a + i * K;
    {
      const T av = arow[0];
      const T* brow = b;
      for (int64_t j = 0; j < N; ++j) crow[j] = av * brow[j];
    }
    for (int64_t k = 1; k < K; ++k) {
      const T av = arow[k];
      const T* brow = b + k * N;
      for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T  (dot products of contiguous rows).
template <typename T>
inline void gemm_nt_acc(const T* a, const T* b, T* c, int64_t M, int64_t N, int64_t K) {
  for (int64_t i = 0; i < M; ++i) {
    const T* arow = a + i * N;
    T* crow = c + i * K;
    for (int64_t k = 0; k < K; ++k) {
      const T* brow = b + k * N;
      T acc = 0;
      for (int64_t j = 0; j < N; ++j) acc += arow[j] * brow[j];
      crow[k] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N].
template <typename T>
inline void gemm_tn_acc(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m) {
    const T* arow = a + m * K;
    const T* brow = b + m * N;
    for (int64_t k = 0; k < K; ++k) {
      const T av = arow[k];
      T* crow = c + k * N;
      for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T. The nt kernel degrades to tiny dot products
// when N is small; in that regime transpose B (it is the small operand) and
// run the long-row kernel instead.
template <typename T>
inline void gemm_abt_acc(const T* a, const T* b, T* c, int64_t M, int64_t N, int64_t K) {
  if (N >= 16 || K < 16) {
    gemm_nt_acc(a, b, c, M, N, K);
    return;
  }
  std::vector<T> bt(N * K);
  for (int64_t k = 0; k < K; ++k)
    for (int64_t j = 0; j < N; ++j) bt[j * K + k] = b[k * N + j];
  gemm_acc(a, bt.data(), c, M, N, K);
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor<T> out = Tensor<T>::uninitialized({M, N});
  detail::gemm_set(a.data(), b.data(), out.data(), M, K, N);
  autograd_attach(out, "matmul", {a, b},
                  [ai = a.impl(), bi = b.impl(), M, K, N](TensorImpl<T>& o) {
                    if (ai->requires_grad) {
                      ai->ensure_grad();
                      detail::gemm_abt_acc(o.grad.data(), bi->data.data(), ai->grad.data(), M, N,
                                           K);
                    }
                    if (bi->requires_grad) {
                      bi->ensure_grad();
                      detail::gemm_tn_acc(ai->data.data(), o.grad.data(), bi->grad.data(), M, K, N);
                    }
                  });
  check_finite(out, "matmul");
  return out;
}

// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  Tensor<T> out = Tensor<T>::uninitialized({B, M, N});
  for (int64_t i = 0; i < B; ++i)
    detail::gemm_set(a.data() + i * M * K, b.data() + i * K * N, out.data() + i * M * N, M, K, N);
  autograd_attach(out, "bmm", {a, b},
                  [ai = a.impl(), bi = b.impl(), B, M, K, N](TensorImpl<T>& o) {
                    for (int64_t i = 0; i < B; ++i) {
                      if (ai->requires_grad) {
                        ai->ensure_grad();
                        detail::gemm_abt_acc(o.grad.data() + i * M * N,
                                             bi->data.data() + i * K * N,
                                             ai->grad.data() + i * M * K, M, N, K);
                      }
                      if (bi->requires_grad) {
                        bi->ensure_grad();
                        detail::gemm_tn_acc(ai->data.data() + i * M * K, o.grad.data() + i * M * N,
                                            bi->grad.data() + i * K * N, M, K, N);
                      }
                    }
                  });
  check_finite(out, "bmm");
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Softmax over the last axis with max-subtraction for stability.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.ndim() < 1 || x.shape().back() < 1)
    throw ShapeError("softmax_lastdim: need a non-empty last axis, got " + shape_str(x.shape()));
  const int64_t N = x.shape().back();
  const int64_t rows = x.numel() / N;
  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * N;
    T* or_ = po + r * N;
    T m = xr[0];
    for (int64_t j = 1; j < N; ++j) m = std::max(m, xr[j]);
    T denom = 0;
    for (int64_t j = 0; j < N; ++j) {
      or_[j] = std::exp(xr[j] - m);
      denom += or_[j];
    }
    const T inv = T(1) / denom;
    for (int64_t j = 0; j < N; ++j) or_[j] *= inv;
  }
  autograd_attach(out, "softmax_lastdim", {x}, [xi = x.impl(), rows, N](TensorImpl<T>& o) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const T* y = o.data.data() + r * N;
      const T* g = o.grad.data() + r * N;
      T* dx = xi->grad.data() + r * N;
      T dot = 0;
      for (int64_t j = 0; j < N; ++j) dot += g[j] * y[j];
      for (int64_t j = 0; j < N; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
  check_finite(out, "softmax_lastdim");
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct FdOptions {
  double eps = 1e-4;
  // When set, a coordinate whose central differences at eps and eps/2
  // disagree is excluded: the function is locally non-smooth there (a relu6
  // kink crossed by the probe), which says nothing about the backward rule.
  bool kink_filter = false;
  double kink_tol = 0.1;
};

// Max over elements of |analytic - central difference| /
// max(|analytic|, |cd|, 1e-8), with fn evaluated at x +- eps per coordinate.
// fn must map a tensor to a scalar tensor and be deterministic.
template <typename T, typename Fn>
double finite_difference_check_opts(Fn&& fn, const Tensor<T>& x0, const FdOptions& opt) {
  Tensor<T> x = x0.clone();
  x.set_requires_grad(true);
  Tensor<T> y = fn(x);
  if (y.numel() != 1)
    throw ContractError("finite_difference_check: fn must produce a scalar");
  backward(y);
  std::vector<T> analytic = x.has_grad() ? x.grad_data() : std::vector<T>(x.numel(), T(0));

  auto eval_at = [&](int64_t i, double delta) {
    NoGradGuard ng;
    Tensor<T> xp = x0.clone();
    xp.data()[i] += static_cast<T>(delta);
    return static_cast<double>(fn(xp).item());
  };

  double max_rel = 0;
  const int64_t n = x0.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double fp = eval_at(i, opt.eps);
    const double fm = eval_at(i, -opt.eps);
    const double cd = (fp - fm) / (2 * opt.eps);
    if (opt.kink_filter) {
      const double fp2 = eval_at(i, opt.eps / 2);
      const double fm2 = eval_at(i, -opt.eps / 2);
      const double cd2 = (fp2 - fm2) / opt.eps;
      const double scale = std::max({std::abs(cd), std::abs(cd2), 1.0});
      if (std::abs(cd - cd2) > opt.kink_tol * scale) continue;
    }
    const double a = static_cast<double>(analytic[i]);
    const double rel = std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

template <typename T, typename Fn>
double finite_difference_check(Fn&& fn, const Tensor<T>& x0, double eps = 1e-4) {
  FdOptions opt;
  opt.eps = eps;
  return finite_difference_check_opts(std::forward<Fn>(fn), x0, opt);
}

}  // namespace nlunet
