#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "nlunet/aggregation.hpp"

namespace nlunet {

enum class BottomKind { conv, aggregation };
enum class UpsampleKind { deconv, aggregation_deconv };

// Architecture description. Channel widths per scale are
// [base, 2*base, 4*base]; spatial extents halve at each scale.
struct NetworkConfig {
  int64_t in_channels = 2;
  int64_t num_classes = 4;
  int64_t base_width = 32;
  int64_t num_scales = 2;
  BottomKind bottom_kind = BottomKind::aggregation;
  UpsampleKind upsample_kind = UpsampleKind::aggregation_deconv;
  bool short_residuals = true;
  // Restrict the aggregation up-sampling to the first (deepest) up block.
  bool first_up_only_aggregation = false;
  double dropout_rate = 0.5;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
  int64_t attention_budget = int64_t(1) << 31;

  int64_t width(int scale) const { return base_width << scale; }

  void validate() const {
    if (in_channels < 1) throw ConfigError("config: in_channels must be >= 1");
    if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
    if (base_width < 1) throw ConfigError("config: base_width must be >= 1");
    if (num_scales != 2)
      throw ConfigError("config: this architecture uses exactly 2 down-sampling stages");
    if (dropout_rate < 0 || dropout_rate >= 1)
      throw ConfigError("config: dropout_rate must be in [0, 1)");
  }
};

// ---------------------------------------------------------------------------
// Residual blocks. All four apply the pre-activation pattern: BN -> ReLU6
// before each convolution. The shortcut takes the raw block input; when a
// block changes channels or spatial size, a learned projection replaces the
// identity.
// ---------------------------------------------------------------------------

// Size-preserving block: identity + (BN -> ReLU6 -> 3x3x3 conv) x 2.
// When in/out channels differ (the input block), the shortcut is a learned
// 1x1x1 projection instead of the identity.
template <typename T>
struct BlockA {
  BatchNormParams<T> bn1, bn2;
  ConvParams<T> conv1, conv2;
  std::optional<ConvParams<T>> proj;
  bool shortcut = true;
};

// Down-sampling block: stride-2 1x1x1 projection shortcut + stride-2 main
// path; halves spatial extents, doubles channels. Without short residuals
// (Model1) the projection is dropped and only the main path remains.
template <typename T>
struct BlockB {
  BatchNormParams<T> bn1, bn2;
  ConvParams<T> conv1;  // 3x3x3 stride 2, C -> 2C
  ConvParams<T> conv2;  // 3x3x3 stride 1
  std::optional<ConvParams<T>> proj;  // 1x1x1 stride 2
};

// Bottom block: either a plain pre-activated 1x1x1 convolution, or the
// residual global aggregation block with a size-preserving (conv1) query.
template <typename T>
struct BottomBlock {
  BatchNormParams<T> bn;
  std::optional<ConvParams<T>> conv;
  std::optional<AggregationParams<T>> agg;
};

// Up-sampling block: either a plain pre-activated stride-2 deconvolution, or
// the residual pair of a stride-2 3x3x3 deconvolution shortcut and the
// up-sampling global aggregation branch. Doubles size, halves channels.
template <typename T>
struct UpBlock {
  BatchNormParams<T> bn;
  ConvParams<T> deconv;  // 3x3x3 stride 2, 2C -> C
  std::optional<AggregationParams<T>> agg;
};

template <typename T>
BlockA<T> make_block_a(Rng& rng, int64_t cin, int64_t cout, bool shortcut,
                       const NetworkConfig& cfg) {
  BlockA<T> b;
  b.bn1 = make_batch_norm<T>(cin, static_cast<T>(cfg.bn_momentum), static_cast<T>(cfg.bn_epsilon));
  b.conv1 = make_conv<T>(rng, 3, cin, cout, 1);
  b.bn2 = make_batch_norm<T>(cout, static_cast<T>(cfg.bn_momentum), static_cast<T>(cfg.bn_epsilon));
  b.conv2 = make_conv<T>(rng, 3, cout, cout, 1);
  b.shortcut = shortcut;
  if (shortcut && cin != cout) b.proj = make_conv<T>(rng, 1, cin, cout, 1);
  return b;
}

template <typename T>
BlockB<T> make_block_b(Rng& rng, int64_t cin, bool shortcut, const NetworkConfig& cfg) {
  BlockB<T> b;
  const int64_t cout = 2 * cin;
  b.bn1 = make_batch_norm<T>(cin, static_cast<T>(cfg.bn_momentum), static_cast<T>(cfg.bn_epsilon));
  b.conv1 = make_conv<T>(rng, 3, cin, cout, 2);
  b.bn2 = make_batch_norm<T>(cout, static_cast<T>(cfg.bn_momentum), static_cast<T>(cfg.bn_epsilon));
  b.conv2 = make_conv<T>(rng, 3, cout, cout, 1);
  if (shortcut) b.proj = make_conv<T>(rng, 1, cin, cout, 2);
  return b;
}

template <typename T>
BottomBlock<T> make_bottom(Rng& rng, int64_t c, BottomKind kind, const NetworkConfig& cfg) {
  BottomBlock<T> b;
  b.bn = make_batch_norm<T>(c, static_cast<T>(cfg.bn_momentum), static_cast<T>(cfg.bn_epsilon));
  if (kind == BottomKind::conv) {
    b.conv = make_conv<T>(rng, 1, c, c, 1);
  } else {
    b.agg = make_aggregation<T>(rng, QueryKind::conv1, c, c, cfg.dropout_rate,
                                cfg.attention_budget);
  }
  return b;
}

template <typename T>
UpBlock<T> make_up(Rng& rng, int64_t cin, UpsampleKind kind, const NetworkConfig& cfg) {
  UpBlock<T> b;
  const int64_t cout = cin / 2;
  b.bn = make_batch_norm<T>(cin, static_cast<T>(cfg.bn_momentum), static_cast<T>(cfg.bn_epsilon));
  b.deconv = make_conv<T>(rng, 3, cin, cout, 2);
  if (kind == UpsampleKind::aggregation_deconv)
    b.agg = make_aggregation<T>(rng, QueryKind::deconv3_s2, cin, cout, cfg.dropout_rate,
                                cfg.attention_budget);
  return b;
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, BlockA<T>& blk, Mode mode) {
  Tensor<T> h = conv3d(relu6(batch_norm(x, blk.bn1, mode)), blk.conv1);
  h = conv3d(relu6(batch_norm(h, blk.bn2, mode)), blk.conv2);
  if (!blk.shortcut) return h;
  return add(h, blk.proj ? conv3d(x, *blk.proj) : x);
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, BlockB<T>& blk, Mode mode) {
  Tensor<T> h = conv3d(relu6(batch_norm(x, blk.bn1, mode)), blk.conv1);
  h = conv3d(relu6(batch_norm(h, blk.bn2, mode)), blk.conv2);
  if (!blk.proj) return h;
  return add(h, conv3d(x, *blk.proj));
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, BottomBlock<T>& blk, Mode mode, Rng* rng) {
  Tensor<T> a = relu6(batch_norm(x, blk.bn, mode));
  if (blk.conv) return conv3d(a, *blk.conv);
  return add(x, global_aggregate(a, *blk.agg, mode, rng));
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, UpBlock<T>& blk, Mode mode, Rng* rng) {
  Tensor<T> a = relu6(batch_norm(x, blk.bn, mode));
  if (!blk.agg) return conv_transpose3d(a, blk.deconv);
  return add(conv_transpose3d(x, blk.deconv), global_aggregate(a, *blk.agg, mode, rng));
}

// ---------------------------------------------------------------------------
// Full network (two scales): input block -> down x2 -> bottom -> up x2 with
// summation skips from the pre-down feature maps, one size-preserving block
// after each summation, and an output block followed by dropout and a 1x1x1
// convolution to the class logits.
// ---------------------------------------------------------------------------

template <typename T>
struct Network {
  NetworkConfig cfg;
  BlockA<T> input_block;  // in_channels -> W
  BlockB<T> down1;        // W -> 2W, /2
  BlockB<T> down2;        // 2W -> 4W, /4
  BottomBlock<T> bottom;  // 4W
  UpBlock<T> up1;         // 4W -> 2W, x2
  BlockA<T> post1;        // 2W
  UpBlock<T> up2;         // 2W -> W, x2
  BlockA<T> post2;        // W
  BlockA<T> out_block;    // W
  ConvParams<T> out_conv; // 1x1x1, W -> num_classes
};

template <typename T>
Network<T> build_network(const NetworkConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const int64_t w0 = cfg.width(0), w1 = cfg.width(1), w2 = cfg.width(2);
  const UpsampleKind up1_kind = cfg.upsample_kind;
  const UpsampleKind up2_kind =
      cfg.first_up_only_aggregation ? UpsampleKind::deconv : cfg.upsample_kind;

  Network<T> net;
  net.cfg = cfg;
  net.input_block = make_block_a<T>(rng, cfg.in_channels, w0, cfg.short_residuals, cfg);
  net.down1 = make_block_b<T>(rng, w0, cfg.short_residuals, cfg);
  net.down2 = make_block_b<T>(rng, w1, cfg.short_residuals, cfg);
  net.bottom = make_bottom<T>(rng, w2, cfg.bottom_kind, cfg);
  net.up1 = make_up<T>(rng, w2, up1_kind, cfg);
  net.post1 = make_block_a<T>(rng, w1, w1, cfg.short_residuals, cfg);
  net.up2 = make_up<T>(rng, w1, up2_kind, cfg);
  net.post2 = make_block_a<T>(rng, w0, w0, cfg.short_residuals, cfg);
  net.out_block = make_block_a<T>(rng, w0, w0, cfg.short_residuals, cfg);
  net.out_conv = make_conv<T>(rng, 1, w0, cfg.num_classes, 1);
  return net;
}

template <typename T>
Tensor<T> forward(Network<T>& net, const Tensor<T>& x, Mode mode, Rng* rng = nullptr) {
  if (x.ndim() != 5 || x.dim(4) != net.cfg.in_channels)
    throw ShapeError("forward: expected [B,D,H,W," + std::to_string(net.cfg.in_channels) +
                     "] input, got " + shape_str(x.shape()));
  for (int axis = 1; axis <= 3; ++axis)
    if (x.dim(axis) % 4 != 0)
      throw ShapeError("forward: spatial extents must be divisible by 4, got " +
                       shape_str(x.shape()));

  Tensor<T> x0 = block_forward(x, net.input_block, mode);
  Tensor<T> x1 = block_forward(x0, net.down1, mode);
  Tensor<T> x2 = block_forward(x1, net.down2, mode);
  Tensor<T> h = block_forward(x2, net.bottom, mode, rng);
  h = block_forward(h, net.up1, mode, rng);
  h = block_forward(add(h, x1), net.post1, mode);
  h = block_forward(h, net.up2, mode, rng);
  h = block_forward(add(h, x0), net.post2, mode);
  h = block_forward(h, net.out_block, mode);
  h = dropout(h, net.cfg.dropout_rate, mode, rng);
  return conv3d(h, net.out_conv);
}

// ---------------------------------------------------------------------------
// Parameter traversal (stable order shared by the optimizer, checkpoints and
// parameter counting).
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename F>
void visit_conv(const std::string& name, ConvParams<T>& c, F&& f) {
  f(name + ".weight", c.weight);
  f(name + ".bias", c.bias);
}

template <typename T, typename F>
void visit_bn(const std::string& name, BatchNormParams<T>& b, F&& f) {
  f(name + ".gamma", b.gamma);
  f(name + ".beta", b.beta);
}

template <typename T, typename F>
void visit_agg(const std::string& name, AggregationParams<T>& a, F&& f) {
  visit_conv(name + ".query", a.query, f);
  visit_conv(name + ".key", a.key, f);
  visit_conv(name + ".value", a.value, f);
  visit_conv(name + ".out", a.out, f);
}

template <typename T, typename F>
void visit_block(const std::string& name, BlockA<T>& b, F&& f) {
  visit_bn(name + ".bn1", b.bn1, f);
  visit_conv(name + ".conv1", b.conv1, f);
  visit_bn(name + ".bn2", b.bn2, f);
  visit_conv(name + ".conv2", b.conv2, f);
  if (b.proj) visit_conv(name + ".proj", *b.proj, f);
}

template <typename T, typename F>
void visit_block(const std::string& name, BlockB<T>& b, F&& f) {
  visit_bn(name + ".bn1", b.bn1, f);
  visit_conv(name + ".conv1", b.conv1, f);
  visit_bn(name + ".bn2", b.bn2, f);
  visit_conv(name + ".conv2", b.conv2, f);
  if (b.proj) visit_conv(name + ".proj", *b.proj, f);
}

template <typename T, typename F>
void visit_block(const std::string& name, BottomBlock<T>& b, F&& f) {
  visit_bn(name + ".bn", b.bn, f);
  if (b.conv) visit_conv(name + ".conv", *b.conv, f);
  if (b.agg) visit_agg(name + ".agg", *b.agg, f);
}

template <typename T, typename F>
void visit_block(const std::string& name, UpBlock<T>& b, F&& f) {
  visit_bn(name + ".bn", b.bn, f);
  visit_conv(name + ".deconv", b.deconv, f);
  if (b.agg) visit_agg(name + ".agg", *b.agg, f);
}

}  // namespace detail

// f(name, Tensor&) over every trainable parameter, in a fixed order.
template <typename T, typename F>
void visit_params(Network<T>& net, F&& f) {
  detail::visit_block("input", net.input_block, f);
  detail::visit_block("down1", net.down1, f);
  detail::visit_block("down2", net.down2, f);
  detail::visit_block("bottom", net.bottom, f);
  detail::visit_block("up1", net.up1, f);
  detail::visit_block("post1", net.post1, f);
  detail::visit_block("up2", net.up2, f);
  detail::visit_block("post2", net.post2, f);
  detail::visit_block("output", net.out_block, f);
  detail::visit_conv("output.final", net.out_conv, f);
}

// f(name, Tensor&) over the batch-norm running statistics.
template <typename T, typename F>
void visit_buffers(Network<T>& net, F&& f) {
  auto bn = [&](const std::string& name, BatchNormParams<T>& b) {
    f(name + ".running_mean", b.running_mean);
    f(name + ".running_var", b.running_var);
  };
  bn("input.bn1", net.input_block.bn1);
  bn("input.bn2", net.input_block.bn2);
  bn("down1.bn1", net.down1.bn1);
  bn("down1.bn2", net.down1.bn2);
  bn("down2.bn1", net.down2.bn1);
  bn("down2.bn2", net.down2.bn2);
  bn("bottom.bn", net.bottom.bn);
  bn("up1.bn", net.up1.bn);
  bn("post1.bn1", net.post1.bn1);
  bn("post1.bn2", net.post1.bn2);
  bn("up2.bn", net.up2.bn);
  bn("post2.bn1", net.post2.bn1);
  bn("post2.bn2", net.post2.bn2);
  bn("output.bn1", net.out_block.bn1);
  bn("output.bn2", net.out_block.bn2);
}

// Exact count of trainable scalars (BN gamma/beta included, running stats
// excluded).
template <typename T>
int64_t count_parameters(Network<T>& net) {
  int64_t n = 0;
  visit_params(net, [&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
void zero_all_grads(Network<T>& net) {
  visit_params(net, [](const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

// ---------------------------------------------------------------------------
// Ablation ladder
// ---------------------------------------------------------------------------

// Variant ids: "1".."5" and "full".
//   1    plain U-Net: no short residuals, stride-2 conv/deconv resampling,
//        plain convolutional bottom
//   2    1 + short-range residual connections
//   3    2 + aggregation up-sampling in the first up block
//   4    2 + aggregation up-sampling in both up blocks
//   5    2 + aggregation bottom block
//   full 5 + aggregation up-sampling in both up blocks
inline NetworkConfig make_ablation(const std::string& model_id, NetworkConfig cfg) {
  cfg.short_residuals = true;
  cfg.bottom_kind = BottomKind::conv;
  cfg.upsample_kind = UpsampleKind::deconv;
  cfg.first_up_only_aggregation = false;
  if (model_id == "1" || model_id == "model1") {
    cfg.short_residuals = false;
  } else if (model_id == "2" || model_id == "model2") {
  } else if (model_id == "3" || model_id == "model3") {
    cfg.upsample_kind = UpsampleKind::aggregation_deconv;
    cfg.first_up_only_aggregation = true;
  } else if (model_id == "4" || model_id == "model4") {
    cfg.upsample_kind = UpsampleKind::aggregation_deconv;
  } else if (model_id == "5" || model_id == "model5") {
    cfg.bottom_kind = BottomKind::aggregation;
  } else if (model_id == "full") {
    cfg.bottom_kind = BottomKind::aggregation;
    cfg.upsample_kind = UpsampleKind::aggregation_deconv;
  } else {
    throw ConfigError("unknown model id '" + model_id + "' (expected 1..5 or full)");
  }
  return cfg;
}

}  // namespace nlunet
