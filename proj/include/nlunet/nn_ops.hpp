#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "nlunet/tensor.hpp"

namespace nlunet {

enum class Mode { train, eval };

// Weights of one convolution or transposed convolution.
// weight is [k,k,k,C_in,C_out] with C_in/C_out relative to the op itself;
// bias is [C_out]. stride applies to all three spatial axes.
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;

  int64_t kernel() const { return weight.dim(0); }
  int64_t in_channels() const { return weight.dim(3); }
  int64_t out_channels() const { return weight.dim(4); }
};

// He-style init: normal with stddev sqrt(2 / fan_in), zero bias.
template <typename T>
ConvParams<T> make_conv(Rng& rng, int64_t k, int64_t cin, int64_t cout, int stride = 1) {
  ConvParams<T> p;
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(k * k * k * cin)));
  p.weight = Tensor<T>::randn({k, k, k, cin, cout}, rng, stddev);
  p.weight.set_requires_grad(true);
  p.bias = Tensor<T>::zeros({cout});
  p.bias.set_requires_grad(true);
  p.stride = stride;
  return p;
}

namespace detail {

template <typename T>
inline void check_conv_input(const Tensor<T>& x, const ConvParams<T>& p, const char* op) {
  if (x.ndim() != 5)
    throw ShapeError(std::string(op) + ": expected [B,D,H,W,C] input, got " +
                     shape_str(x.shape()));
  if (p.weight.ndim() != 5 || p.weight.dim(0) != p.weight.dim(1) ||
      p.weight.dim(0) != p.weight.dim(2))
    throw ShapeError(std::string(op) + ": expected cubic [k,k,k,Cin,Cout] weight, got " +
                     shape_str(p.weight.shape()));
  if (x.dim(4) != p.in_channels())
    throw ShapeError(std::string(op) + ": channel mismatch, input " + shape_str(x.shape()) +
                     " vs weight " + shape_str(p.weight.shape()));
  if (p.stride != 1 && p.stride != 2)
    throw ContractError(std::string(op) + ": stride must be 1 or 2");
}

}  // namespace detail

// 3-d convolution with "same" zero padding. Stride 1 preserves the spatial
// extents; stride 2 halves them exactly (even extents required). Padding
// follows the ceil-mode convention: stride 1 pads (k-1)/2 on both sides,
// stride 2 with k=3 pads only at the far edge.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvParams<T>& p) {
  detail::check_conv_input(x, p, "conv3d");
  const int64_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3), Ci = x.dim(4);
  const int64_t k = p.kernel(), Co = p.out_channels();
  const int s = p.stride;
  if (s == 2 && (D % 2 || H % 2 || W % 2))
    throw ShapeError("conv3d: stride 2 requires even spatial extents, got " +
                     shape_str(x.shape()));
  const int64_t pad = (s == 1) ? (k - 1) / 2 : 0;
  const int64_t OD = D / s, OH = H / s, OW = W / s;

  Tensor<T> out = Tensor<T>::uninitialized({B, OD, OH, OW, Co});
  const T* px = x.data();
  const T* pw = p.weight.data();
  const T* pb = p.bias.data();
  T* po = out.data();

  for (int64_t b = 0; b < B; ++b) {
    const T* xb = px + b * D * H * W * Ci;
    T* ob = po + b * OD * OH * OW * Co;
    for (int64_t od = 0; od < OD; ++od)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          T* orow = ob + ((od * OH + oh) * OW + ow) * Co;
          for (int64_t c = 0; c < Co; ++c) orow[c] = pb[c];
          for (int64_t kd = 0; kd < k; ++kd) {
            const int64_t sd = od * s + kd - pad;
            if (sd < 0 || sd >= D) continue;
            for (int64_t kh = 0; kh < k; ++kh) {
              const int64_t sh = oh * s + kh - pad;
              if (sh < 0 || sh >= H) continue;
              for (int64_t kw = 0; kw < k; ++kw) {
                const int64_t sw = ow * s + kw - pad;
                if (sw < 0 || sw >= W) continue;
                const T* xrow = xb + ((sd * H + sh) * W + sw) * Ci;
                const T* wtap = pw + ((kd * k + kh) * k + kw) * Ci * Co;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  const T xv = xrow[ci];
                  const T* wrow = wtap + ci * Co;
                  for (int64_t c = 0; c < Co; ++c) orow[c] += xv * wrow[c];
                }
              }
            }
          }
        }
  }

  autograd_attach(
      out, "conv3d", {x, p.weight, p.bias},
      [xi = x.impl(), wi = p.weight.impl(), bi = p.bias.impl(), B, D, H, W, Ci, k, Co, s, pad, OD,
       OH, OW](TensorImpl<T>& o) {
        const bool need_dx = xi->requires_grad;
        const bool need_dw = wi->requires_grad;
        const bool need_db = bi->requires_grad;
        if (need_dx) xi->ensure_grad();
        if (need_dw) wi->ensure_grad();
        if (need_db) bi->ensure_grad();
        const T* g = o.grad.data();
        for (int64_t b = 0; b < B; ++b) {
          const T* xb = xi->data.data() + b * D * H * W * Ci;
          T* dxb = need_dx ? xi->grad.data() + b * D * H * W * Ci : nullptr;
          const T* gb = g + b * OD * OH * OW * Co;
          for (int64_t od = 0; od < OD; ++od)
            for (int64_t oh = 0; oh < OH; ++oh)
              for (int64_t ow = 0; ow < OW; ++ow) {
                const T* grow = gb + ((od * OH + oh) * OW + ow) * Co;
                if (need_db) {
                  for (int64_t c = 0; c < Co; ++c) bi->grad[c] += grow[c];
                }
                for (int64_t kd = 0; kd < k; ++kd) {
                  const int64_t sd = od * s + kd - pad;
                  if (sd < 0 || sd >= D) continue;
                  for (int64_t kh = 0; kh < k; ++kh) {
                    const int64_t sh = oh * s + kh - pad;
                    if (sh < 0 || sh >= H) continue;
                    for (int64_t kw = 0; kw < k; ++kw) {
                      const int64_t sw = ow * s + kw - pad;
                      if (sw < 0 || sw >= W) continue;
                      const int64_t xoff = ((sd * H + sh) * W + sw) * Ci;
                      const T* wtap = wi->data.data() + ((kd * k + kh) * k + kw) * Ci * Co;
                      T* dwtap = need_dw ? wi->grad.data() + ((kd * k + kh) * k + kw) * Ci * Co
                                         : nullptr;
                      for (int64_t ci = 0; ci < Ci; ++ci) {
                        if (need_dx) {
                          const T* wrow = wtap + ci * Co;
                          T acc = 0;
                          for (int64_t c = 0; c < Co; ++c) acc += grow[c] * wrow[c];
                          dxb[xoff + ci] += acc;
                        }
                        if (need_dw) {
                          const T xv = xb[xoff + ci];
                          T* dwrow = dwtap + ci * Co;
                          for (int64_t c = 0; c < Co; ++c) dwrow[c] += xv * grow[c];
                        }
                      }
                    }
                  }
                }
              }
        }
      });
  check_finite(out, "conv3d");
  return out;
}

// Stride-2 transposed convolution that exactly doubles each spatial extent.
// Defined as the adjoint of the stride-2 conv3d above: output position j
// collects input taps (o, t) with 2*o + t = j per axis.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const ConvParams<T>& p) {
  detail::check_conv_input(x, p, "conv_transpose3d");
  if (p.stride != 2) throw ContractError("conv_transpose3d: only stride 2 is supported");
  const int64_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3), Ci = x.dim(4);
  const int64_t k = p.kernel(), Co = p.out_channels();
  const int64_t OD = 2 * D, OH = 2 * H, OW = 2 * W;

  Tensor<T> out = Tensor<T>::uninitialized({B, OD, OH, OW, Co});
  const T* px = x.data();
  const T* pw = p.weight.data();
  const T* pb = p.bias.data();
  T* po = out.data();

  // Per axis: valid taps t for output j are those with (j - t) even and
  // (j - t) / 2 inside the input.
  auto taps = [k](int64_t j, int64_t extent, int64_t* ts, int64_t* os) {
    int n = 0;
    for (int64_t t = 0; t < k; ++t) {
      const int64_t num = j - t;
      if (num < 0 || num % 2) continue;
      const int64_t o = num / 2;
      if (o >= extent) continue;
      ts[n] = t;
      os[n] = o;
      ++n;
    }
    return n;
  };

  for (int64_t b = 0; b < B; ++b) {
    const T* xb = px + b * D * H * W * Ci;
    T* ob = po + b * OD * OH * OW * Co;
    for (int64_t jd = 0; jd < OD; ++jd) {
      int64_t td[3], od[3];
      const int nd = taps(jd, D, td, od);
      for (int64_t jh = 0; jh < OH; ++jh) {
        int64_t th[3], oh[3];
        const int nh = taps(jh, H, th, oh);
        for (int64_t jw = 0; jw < OW; ++jw) {
          int64_t tw[3], ow[3];
          const int nw = taps(jw, W, tw, ow);
          T* orow = ob + ((jd * OH + jh) * OW + jw) * Co;
          for (int64_t c = 0; c < Co; ++c) orow[c] = pb[c];
          for (int a = 0; a < nd; ++a)
            for (int e = 0; e < nh; ++e)
              for (int f = 0; f < nw; ++f) {
                const T* xrow = xb + ((od[a] * H + oh[e]) * W + ow[f]) * Ci;
                const T* wtap = pw + ((td[a] * k + th[e]) * k + tw[f]) * Ci * Co;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  const T xv = xrow[ci];
                  const T* wrow = wtap + ci * Co;
                  for (int64_t c = 0; c < Co; ++c) orow[c] += xv * wrow[c];
                }
              }
        }
      }
    }
  }

  autograd_attach(
      out, "conv_transpose3d", {x, p.weight, p.bias},
      [xi = x.impl(), wi = p.weight.impl(), bi = p.bias.impl(), B, D, H, W, Ci, k, Co, OD, OH,
       OW](TensorImpl<T>& o) {
        const bool need_dx = xi->requires_grad;
        const bool need_dw = wi->requires_grad;
        const bool need_db = bi->requires_grad;
        if (need_dx) xi->ensure_grad();
        if (need_dw) wi->ensure_grad();
        if (need_db) bi->ensure_grad();
        const T* g = o.grad.data();
        if (need_db) {
          for (int64_t i = 0; i < B * OD * OH * OW; ++i)
            for (int64_t c = 0; c < Co; ++c) bi->grad[c] += g[i * Co + c];
        }
        if (!need_dx && !need_dw) return;
        // dx and dw gather over the scatter pattern: j = 2*o + t per axis.
        for (int64_t b = 0; b < B; ++b) {
          const T* xb = xi->data.data() + b * D * H * W * Ci;
          T* dxb = need_dx ? xi->grad.data() + b * D * H * W * Ci : nullptr;
          const T* gb = g + b * OD * OH * OW * Co;
          for (int64_t d = 0; d < D; ++d)
            for (int64_t h = 0; h < H; ++h)
              for (int64_t w = 0; w < W; ++w) {
                const int64_t xoff = ((d * H + h) * W + w) * Ci;
                for (int64_t kd = 0; kd < k; ++kd) {
                  const int64_t jd = 2 * d + kd;
                  if (jd >= OD) continue;
                  for (int64_t kh = 0; kh < k; ++kh) {
                    const int64_t jh = 2 * h + kh;
                    if (jh >= OH) continue;
                    for (int64_t kw = 0; kw < k; ++kw) {
                      const int64_t jw = 2 * w + kw;
                      if (jw >= OW) continue;
                      const T* grow = gb + ((jd * OH + jh) * OW + jw) * Co;
                      const T* wtap = wi->data.data() + ((kd * k + kh) * k + kw) * Ci * Co;
                      T* dwtap = need_dw ? wi->grad.data() + ((kd * k + kh) * k + kw) * Ci * Co
                                         : nullptr;
                      for (int64_t ci = 0; ci < Ci; ++ci) {
                        if (need_dx) {
                          const T* wrow = wtap + ci * Co;
                          T acc = 0;
                          for (int64_t c = 0; c < Co; ++c) acc += grow[c] * wrow[c];
                          dxb[xoff + ci] += acc;
                        }
                        if (need_dw) {
                          const T xv = xb[xoff + ci];
                          T* dwrow = dwtap + ci * Co;
                          for (int64_t c = 0; c < Co; ++c) dwrow[c] += xv * grow[c];
                        }
                      }
                    }
                  }
                }
              }
        }
      });
  check_finite(out, "conv_transpose3d");
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;         // [C], learned
  Tensor<T> beta;          // [C], learned
  Tensor<T> running_mean;  // [C], buffer
  Tensor<T> running_var;   // [C], buffer
  T momentum = static_cast<T>(0.9);
  T epsilon = static_cast<T>(1e-5);
};

template <typename T>
BatchNormParams<T> make_batch_norm(int64_t c, T momentum = static_cast<T>(0.9),
                                   T epsilon = static_cast<T>(1e-5)) {
  BatchNormParams<T> p;
  p.gamma = Tensor<T>::full({c}, T(1));
  p.gamma.set_requires_grad(true);
  p.beta = Tensor<T>::zeros({c});
  p.beta.set_requires_grad(true);
  p.running_mean = Tensor<T>::zeros({c});
  p.running_var = Tensor<T>::full({c}, T(1));
  return p;
}

// Per-channel normalization over all non-channel axes. Train mode uses batch
// statistics (and is differentiable through them) and updates the running
// stats; eval mode normalizes with the running stats.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormParams<T>& p, Mode mode) {
  if (x.ndim() != 5)
    throw ShapeError("batch_norm: expected [B,D,H,W,C] input, got " + shape_str(x.shape()));
  const int64_t C = x.dim(4);
  if (C != p.gamma.numel())
    throw ShapeError("batch_norm: channel mismatch, input " + shape_str(x.shape()) + " vs gamma " +
                     shape_str(p.gamma.shape()));
  const int64_t N = x.numel() / C;

  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const T* gamma = p.gamma.data();
  const T* beta = p.beta.data();

  if (mode == Mode::train) {
    if (N < 2) throw ContractError("batch_norm: train mode needs at least 2 positions per channel");
    std::vector<T> mean(C), invstd(C), var(C);
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0;
      for (int64_t i = 0; i < N; ++i) acc += static_cast<double>(px[i * C + c]);
      const double m = acc / static_cast<double>(N);
      double vacc = 0;
      for (int64_t i = 0; i < N; ++i) {
        const double d = static_cast<double>(px[i * C + c]) - m;
        vacc += d * d;
      }
      const double v = vacc / static_cast<double>(N);
      mean[c] = static_cast<T>(m);
      var[c] = static_cast<T>(v);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(p.epsilon)));
    }
    for (int64_t i = 0; i < N; ++i)
      for (int64_t c = 0; c < C; ++c) {
        const T xhat = (px[i * C + c] - mean[c]) * invstd[c];
        po[i * C + c] = gamma[c] * xhat + beta[c];
      }
    // Running stats track the unbiased batch variance.
    {
      T* rm = p.running_mean.data();
      T* rv = p.running_var.data();
      const T unbias = static_cast<T>(N) / static_cast<T>(N - 1);
      for (int64_t c = 0; c < C; ++c) {
        rm[c] = p.momentum * rm[c] + (T(1) - p.momentum) * mean[c];
        rv[c] = p.momentum * rv[c] + (T(1) - p.momentum) * var[c] * unbias;
      }
    }
    autograd_attach(out, "batch_norm", {x, p.gamma, p.beta},
                    [xi = x.impl(), gi = p.gamma.impl(), bi = p.beta.impl(), mean, invstd, N,
                     C](TensorImpl<T>& o) {
                      const T* g = o.grad.data();
                      const T* px2 = xi->data.data();
                      std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
                      for (int64_t i = 0; i < N; ++i)
                        for (int64_t c = 0; c < C; ++c) {
                          const T xhat = (px2[i * C + c] - mean[c]) * invstd[c];
                          sum_g[c] += g[i * C + c];
                          sum_gx[c] += g[i * C + c] * xhat;
                        }
                      if (bi->requires_grad) {
                        bi->ensure_grad();
                        for (int64_t c = 0; c < C; ++c) bi->grad[c] += sum_g[c];
                      }
                      if (gi->requires_grad) {
                        gi->ensure_grad();
                        for (int64_t c = 0; c < C; ++c) gi->grad[c] += sum_gx[c];
                      }
                      if (xi->requires_grad) {
                        xi->ensure_grad();
                        const T* gamma2 = gi->data.data();
                        const T invn = T(1) / static_cast<T>(N);
                        for (int64_t i = 0; i < N; ++i)
                          for (int64_t c = 0; c < C; ++c) {
                            const T xhat = (px2[i * C + c] - mean[c]) * invstd[c];
                            xi->grad[i * C + c] +=
                                gamma2[c] * invstd[c] *
                                (g[i * C + c] - invn * sum_g[c] - invn * xhat * sum_gx[c]);
                          }
                      }
                    });
  } else {
    const T* rm = p.running_mean.data();
    const T* rv = p.running_var.data();
    std::vector<T> invstd(C);
    for (int64_t c = 0; c < C; ++c)
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) +
                                                 static_cast<double>(p.epsilon)));
    std::vector<T> mean(rm, rm + C);
    for (int64_t i = 0; i < N; ++i)
      for (int64_t c = 0; c < C; ++c) {
        const T xhat = (px[i * C + c] - mean[c]) * invstd[c];
        po[i * C + c] = gamma[c] * xhat + beta[c];
      }
    autograd_attach(out, "batch_norm_eval", {x, p.gamma, p.beta},
                    [xi = x.impl(), gi = p.gamma.impl(), bi = p.beta.impl(), mean, invstd, N,
                     C](TensorImpl<T>& o) {
                      const T* g = o.grad.data();
                      const T* px2 = xi->data.data();
                      if (bi->requires_grad) {
                        bi->ensure_grad();
                        for (int64_t i = 0; i < N; ++i)
                          for (int64_t c = 0; c < C; ++c) bi->grad[c] += g[i * C + c];
                      }
                      if (gi->requires_grad) {
                        gi->ensure_grad();
                        for (int64_t i = 0; i < N; ++i)
                          for (int64_t c = 0; c < C; ++c)
                            gi->grad[c] += g[i * C + c] * (px2[i * C + c] - mean[c]) * invstd[c];
                      }
                      if (xi->requires_grad) {
                        xi->ensure_grad();
                        const T* gamma2 = gi->data.data();
                        for (int64_t i = 0; i < N; ++i)
                          for (int64_t c = 0; c < C; ++c)
                            xi->grad[i * C + c] += g[i * C + c] * gamma2[c] * invstd[c];
                      }
                    });
  }
  check_finite(out, "batch_norm");
  return out;
}

// ---------------------------------------------------------------------------
// Activations, dropout, loss
// ---------------------------------------------------------------------------

// min(max(x, 0), 6); the subgradient at both kinks is 0.
template <typename T>
Tensor<T> relu6(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = std::min(std::max(px[i], T(0)), T(6));
  autograd_attach(out, "relu6", {x}, [xi = x.impl(), n](TensorImpl<T>& o) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    const T* v = xi->data.data();
    for (int64_t i = 0; i < n; ++i)
      if (v[i] > T(0) && v[i] < T(6)) xi->grad[i] += o.grad[i];
  });
  check_finite(out, "relu6");
  return out;
}

// Inverted dropout: train mode zeroes each element with probability `rate`
// and scales survivors by 1/(1-rate); eval mode is the identity. The mask is
// drawn from the supplied stream in flat index order.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng* rng) {
  if (rate < 0 || rate >= 1)
    throw ContractError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::eval || rate == 0) return x;
  if (!rng) throw ContractError("dropout: train mode needs an rng stream");
  const int64_t n = x.numel();
  std::vector<uint8_t> keep(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < n; ++i) keep[i] = rng->uniform01() < rate ? 0 : 1;
  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = keep[i] ? px[i] * keep_scale : T(0);
  autograd_attach(out, "dropout", {x},
                  [xi = x.impl(), keep = std::move(keep), keep_scale, n](TensorImpl<T>& o) {
                    if (!xi->requires_grad) return;
                    xi->ensure_grad();
                    for (int64_t i = 0; i < n; ++i)
                      if (keep[i]) xi->grad[i] += o.grad[i] * keep_scale;
                  });
  check_finite(out, "dropout");
  return out;
}

// Mean over all voxels of -log softmax(logits)[label]. logits is [...,K],
// labels run in the same flat voxel order.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<uint8_t>& labels) {
  if (logits.ndim() < 2)
    throw ShapeError("cross_entropy: expected [...,K] logits, got " + shape_str(logits.shape()));
  const int64_t K = logits.shape().back();
  const int64_t n = logits.numel() / K;
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " voxels");
  const T* px = logits.data();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] >= K)
      throw DataError("cross_entropy: label " + std::to_string(int(labels[i])) +
                      " out of range [0," + std::to_string(K) + ") at voxel " + std::to_string(i));
    const T* row = px + i * K;
    T m = row[0];
    for (int64_t j = 1; j < K; ++j) m = std::max(m, row[j]);
    double denom = 0;
    for (int64_t j = 0; j < K; ++j) denom += std::exp(static_cast<double>(row[j] - m));
    acc += std::log(denom) + static_cast<double>(m) - static_cast<double>(row[labels[i]]);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  autograd_attach(out, "cross_entropy", {logits},
                  [xi = logits.impl(), labels, n, K](TensorImpl<T>& o) {
                    if (!xi->requires_grad) return;
                    xi->ensure_grad();
                    const T g = o.grad[0] / static_cast<T>(n);
                    const T* px2 = xi->data.data();
                    for (int64_t i = 0; i < n; ++i) {
                      const T* row = px2 + i * K;
                      T m = row[0];
                      for (int64_t j = 1; j < K; ++j) m = std::max(m, row[j]);
                      T denom = 0;
                      for (int64_t j = 0; j < K; ++j) denom += std::exp(row[j] - m);
                      const T inv = T(1) / denom;
                      T* dx = xi->grad.data() + i * K;
                      for (int64_t j = 0; j < K; ++j) {
                        const T pj = std::exp(row[j] - m) * inv;
                        dx[j] += g * (pj - (labels[i] == j ? T(1) : T(0)));
                      }
                    }
                  });
  check_finite(out, "cross_entropy");
  return out;
}

}  // namespace nlunet
