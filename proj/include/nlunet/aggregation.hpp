#pragma once

#include <cmath>
#include <cstdint>

#include "nlunet/nn_ops.hpp"

namespace nlunet {

// The operation producing the query matrix decides the output spatial size:
// a 1x1x1 convolution preserves it, a stride-2 3x3x3 deconvolution doubles
// it, a stride-2 3x3x3 convolution halves it.
enum class QueryKind { conv1, deconv3_s2, conv3_s2 };

inline const char* query_kind_name(QueryKind k) {
  switch (k) {
    case QueryKind::conv1: return "conv1";
    case QueryKind::deconv3_s2: return "deconv3_s2";
    case QueryKind::conv3_s2: return "conv3_s2";
  }
  return "?";
}

// Learned weights and hyper-parameters of one global aggregation block.
// key/value/out are 1x1x1 stride-1 convolutions and never change the spatial
// size. This artifact always uses C_K == C_V == C_O.
template <typename T>
struct AggregationParams {
  QueryKind query_kind = QueryKind::conv1;
  ConvParams<T> query;
  ConvParams<T> key;
  ConvParams<T> value;
  ConvParams<T> out;
  double attn_dropout = 0.5;
  // Guard on the attention matrix allocation (entries across the batch).
  int64_t max_attention_entries = int64_t(1) << 31;

  int64_t ck() const { return key.out_channels(); }
  int64_t cv() const { return value.out_channels(); }
  int64_t co() const { return out.out_channels(); }
};

template <typename T>
AggregationParams<T> make_aggregation(Rng& rng, QueryKind kind, int64_t cin, int64_t c,
                                      double attn_dropout = 0.5,
                                      int64_t max_attention_entries = int64_t(1) << 31) {
  AggregationParams<T> p;
  p.query_kind = kind;
  p.query = (kind == QueryKind::conv1) ? make_conv<T>(rng, 1, cin, c, 1)
                                       : make_conv<T>(rng, 3, cin, c, 2);
  p.key = make_conv<T>(rng, 1, cin, c, 1);
  p.value = make_conv<T>(rng, 1, cin, c, 1);
  p.out = make_conv<T>(rng, 1, c, c, 1);
  p.attn_dropout = attn_dropout;
  p.max_attention_entries = max_attention_entries;
  return p;
}

// Unfold: [B,D,H,W,C] -> [B, D*H*W, C], a pure reshape (rows in D-major
// order, then H, then W).
template <typename T>
Tensor<T> unfold(const Tensor<T>& x) {
  if (x.ndim() != 5)
    throw ShapeError("unfold: expected [B,D,H,W,C], got " + shape_str(x.shape()));
  return reshape(x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3), x.dim(4)});
}

// Fold: inverse of unfold for the given spatial extents.
template <typename T>
Tensor<T> fold(const Tensor<T>& x, int64_t d, int64_t h, int64_t w) {
  if (x.ndim() != 3 || x.dim(1) != d * h * w)
    throw ShapeError("fold: cannot fold " + shape_str(x.shape()) + " into spatial [" +
                     std::to_string(d) + "," + std::to_string(h) + "," + std::to_string(w) + "]");
  return reshape(x, {x.dim(0), d, h, w, x.dim(2)});
}

template <typename T>
struct AggregateResult {
  Tensor<T> output;     // [B, Dq, Hq, Wq, C_O]
  Tensor<T> attention;  // [B, Nq, N] after dropout, as used for the output
};

// Scaled dot-product attention over all spatial positions of one feature
// map:
//   Q = unfold(query_transform(x)), K = unfold(key(x)), V = unfold(value(x))
//   A = softmax(Q K^T / sqrt(C_K)), per batch item
//   Y = out(fold(A V))
// The output spatial size is set solely by the query transform. Dropout is
// applied to A in train mode.
template <typename T>
AggregateResult<T> global_aggregate_with_attention(const Tensor<T>& x,
                                                   const AggregationParams<T>& p, Mode mode,
                                                   Rng* rng) {
  if (x.ndim() != 5)
    throw ShapeError("global_aggregate: expected [B,D,H,W,C], got " + shape_str(x.shape()));
  for (const T& v : x.data_vec())
    if (!std::isfinite(static_cast<double>(v)))
      throw DataError("global_aggregate: non-finite input value");

  const int64_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t n_keys = D * H * W;

  Tensor<T> q_map;
  switch (p.query_kind) {
    case QueryKind::conv1:
    case QueryKind::conv3_s2:
      q_map = conv3d(x, p.query);
      break;
    case QueryKind::deconv3_s2:
      q_map = conv_transpose3d(x, p.query);
      break;
  }
  const int64_t dq = q_map.dim(1), hq = q_map.dim(2), wq = q_map.dim(3);
  const int64_t n_query = dq * hq * wq;

  if (B * n_query * n_keys > p.max_attention_entries)
    throw ResourceError("global_aggregate: attention matrix with N=" + std::to_string(n_keys) +
                        " key positions and " + std::to_string(n_query) +
                        " query positions needs " + std::to_string(B * n_query * n_keys) +
                        " entries, over the budget of " +
                        std::to_string(p.max_attention_entries));

  Tensor<T> q = unfold(q_map);                       // [B, Nq, C_K]
  Tensor<T> k = unfold(conv3d(x, p.key));            // [B, N,  C_K]
  Tensor<T> v = unfold(conv3d(x, p.value));          // [B, N,  C_V]

  // Q K^T / sqrt(C_K), with the scaling folded into Q (it is far smaller
  // than the score matrix).
  q = scale(q, static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.ck()))));
  Tensor<T> attn;
  {
    // Scoped so the raw score matrix frees before the AV product when no
    // tape holds it (inference on large inputs).
    Tensor<T> scores = bmm(q, transpose_last2(k));   // [B, Nq, N]
    attn = softmax_lastdim(scores);
  }
  attn = dropout(attn, p.attn_dropout, mode, rng);

  Tensor<T> o = bmm(attn, v);                        // [B, Nq, C_V]
  Tensor<T> y = conv3d(fold(o, dq, hq, wq), p.out);  // [B, Dq, Hq, Wq, C_O]
  return {y, attn};
}

template <typename T>
Tensor<T> global_aggregate(const Tensor<T>& x, const AggregationParams<T>& p, Mode mode,
                           Rng* rng) {
  return global_aggregate_with_attention(x, p, mode, rng).output;
}

// Per-row sums of an attention matrix [B, Nq, N] -> [B, Nq]. Test hook: rows
// sum to 1 in eval mode; train-mode dropout breaks that on purpose.
template <typename T>
Tensor<T> attention_rowsums(const Tensor<T>& a) {
  if (a.ndim() != 3)
    throw ShapeError("attention_rowsums: expected [B,Nq,N], got " + shape_str(a.shape()));
  const int64_t B = a.dim(0), M = a.dim(1), N = a.dim(2);
  Tensor<T> out = Tensor<T>::zeros({B, M});
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t r = 0; r < B * M; ++r) {
    T acc = 0;
    for (int64_t j = 0; j < N; ++j) acc += pa[r * N + j];
    po[r] = acc;
  }
  return out;
}

}  // namespace nlunet
