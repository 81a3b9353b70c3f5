#pragma once

// Naive reference implementations used only by tests. Each re-derives the
// semantics with the most literal loops possible and shares no code with the
// library paths it checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

// Triple-loop matrix product, row-major.
template <typename T>
std::vector<T> matmul(const std::vector<T>& a, const std::vector<T>& b, int64_t m, int64_t k,
                      int64_t n) {
  std::vector<T> c(m * n, T(0));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t l = 0; l < k; ++l) c[i * n + j] += a[i * k + l] * b[l * n + j];
  return c;
}

// Direct 7-loop "same" 3-d convolution, layout [D,H,W,C] / [k,k,k,Ci,Co].
// Padding: (k-1)/2 per side at stride 1, none at the near edge for stride 2.
template <typename T>
std::vector<T> conv3d(const std::vector<T>& x, int64_t D, int64_t H, int64_t W, int64_t Ci,
                      const std::vector<T>& w, int64_t k, int64_t Co, const std::vector<T>& bias,
                      int stride) {
  const int64_t pad = stride == 1 ? (k - 1) / 2 : 0;
  const int64_t OD = D / stride, OH = H / stride, OW = W / stride;
  std::vector<T> y(OD * OH * OW * Co);
  for (int64_t od = 0; od < OD; ++od)
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow)
        for (int64_t co = 0; co < Co; ++co) {
          T acc = bias[co];
          for (int64_t kd = 0; kd < k; ++kd)
            for (int64_t kh = 0; kh < k; ++kh)
              for (int64_t kw = 0; kw < k; ++kw) {
                const int64_t sd = od * stride + kd - pad;
                const int64_t sh = oh * stride + kh - pad;
                const int64_t sw = ow * stride + kw - pad;
                if (sd < 0 || sd >= D || sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
                for (int64_t ci = 0; ci < Ci; ++ci)
                  acc += x[((sd * H + sh) * W + sw) * Ci + ci] *
                         w[(((kd * k + kh) * k + kw) * Ci + ci) * Co + co];
              }
          y[((od * OH + oh) * OW + ow) * Co + co] = acc;
        }
  return y;
}

// Stride-2 transposed convolution by literal scatter: every input voxel o
// adds x[o] * w[t] at output position 2*o + t per axis.
template <typename T>
std::vector<T> conv_transpose3d(const std::vector<T>& x, int64_t D, int64_t H, int64_t W,
                                int64_t Ci, const std::vector<T>& w, int64_t k, int64_t Co,
                                const std::vector<T>& bias) {
  const int64_t OD = 2 * D, OH = 2 * H, OW = 2 * W;
  std::vector<T> y(OD * OH * OW * Co);
  for (int64_t i = 0; i < OD * OH * OW; ++i)
    for (int64_t co = 0; co < Co; ++co) y[i * Co + co] = bias[co];
  for (int64_t d = 0; d < D; ++d)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t ww = 0; ww < W; ++ww)
        for (int64_t kd = 0; kd < k; ++kd)
          for (int64_t kh = 0; kh < k; ++kh)
            for (int64_t kw = 0; kw < k; ++kw) {
              const int64_t jd = 2 * d + kd, jh = 2 * h + kh, jw = 2 * ww + kw;
              if (jd >= OD || jh >= OH || jw >= OW) continue;
              for (int64_t ci = 0; ci < Ci; ++ci)
                for (int64_t co = 0; co < Co; ++co)
                  y[((jd * OH + jh) * OW + jw) * Co + co] +=
                      x[((d * H + h) * W + ww) * Ci + ci] *
                      w[(((kd * k + kh) * k + kw) * Ci + ci) * Co + co];
            }
  return y;
}

// Attention for one batch item by looping over every (query, key) pair.
// q: [Nq,C], k/v: [N,C]. Returns [Nq,Cv].
template <typename T>
std::vector<T> attention(const std::vector<T>& q, const std::vector<T>& k,
                         const std::vector<T>& v, int64_t nq, int64_t n, int64_t c, int64_t cv) {
  std::vector<T> out(nq * cv, T(0));
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));
  for (int64_t i = 0; i < nq; ++i) {
    std::vector<double> logits(n);
    for (int64_t j = 0; j < n; ++j) {
      double dot = 0;
      for (int64_t l = 0; l < c; ++l)
        dot += static_cast<double>(q[i * c + l]) * static_cast<double>(k[j * c + l]);
      logits[j] = dot * scale;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0;
    for (int64_t j = 0; j < n; ++j) denom += std::exp(logits[j] - mx);
    for (int64_t j = 0; j < n; ++j) {
      const double a = std::exp(logits[j] - mx) / denom;
      for (int64_t l = 0; l < cv; ++l)
        out[i * cv + l] += static_cast<T>(a * static_cast<double>(v[j * cv + l]));
    }
  }
  return out;
}

// One Adam step on a scalar, written out term by term.
struct AdamScalar {
  double m = 0, v = 0;
  int64_t t = 0;
  double lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, wd = 0;

  double step(double theta, double grad) {
    t += 1;
    const double g = grad + wd * theta;
    m = beta1 * m + (1 - beta1) * g;
    v = beta2 * v + (1 - beta2) * g * g;
    const double mhat = m / (1 - std::pow(beta1, static_cast<double>(t)));
    const double vhat = v / (1 - std::pow(beta2, static_cast<double>(t)));
    return theta - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

// Brute-force modified Hausdorff distance between two binary maps after
// vectorizing along one axis (0=D, 1=H, 2=W). Vectors are the raw 0/1
// fibers; every transverse index pair contributes one.
inline double mhd_directional(const std::vector<uint8_t>& p, const std::vector<uint8_t>& l,
                              const std::array<int64_t, 3>& dims, int axis) {
  const int64_t D = dims[0], H = dims[1], W = dims[2];
  auto collect = [&](const std::vector<uint8_t>& bits) {
    std::vector<std::vector<double>> vecs;
    if (axis == 0) {
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          std::vector<double> v;
          for (int64_t d = 0; d < D; ++d) v.push_back(bits[(d * H + h) * W + w]);
          vecs.push_back(v);
        }
    } else if (axis == 1) {
      for (int64_t d = 0; d < D; ++d)
        for (int64_t w = 0; w < W; ++w) {
          std::vector<double> v;
          for (int64_t h = 0; h < H; ++h) v.push_back(bits[(d * H + h) * W + w]);
          vecs.push_back(v);
        }
    } else {
      for (int64_t d = 0; d < D; ++d)
        for (int64_t h = 0; h < H; ++h) {
          std::vector<double> v;
          for (int64_t w = 0; w < W; ++w) v.push_back(bits[(d * H + h) * W + w]);
          vecs.push_back(v);
        }
    }
    return vecs;
  };
  const auto va = collect(p);
  const auto vb = collect(l);
  auto dist = [](const std::vector<double>& x, const std::vector<double>& y) {
    double ss = 0;
    for (size_t i = 0; i < x.size(); ++i) ss += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(ss);
  };
  auto directed = [&](const std::vector<std::vector<double>>& from,
                      const std::vector<std::vector<double>>& to) {
    double total = 0;
    for (const auto& f : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& t : to) best = std::min(best, dist(f, t));
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  return std::max(directed(va, vb), directed(vb, va));
}

inline double mhd_3d(const std::vector<uint8_t>& p, const std::vector<uint8_t>& l,
                     const std::array<int64_t, 3>& dims) {
  return (mhd_directional(p, l, dims, 0) + mhd_directional(p, l, dims, 1) +
          mhd_directional(p, l, dims, 2)) /
         3.0;
}

}  // namespace oracle
