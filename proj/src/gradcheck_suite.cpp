#include "nlunet/gradcheck_suite.hpp"

#include <cmath>
#include <functional>

namespace nlunet {

namespace {

using DTensor = Tensor<double>;

// Fixed random weighting turns any output into a non-degenerate scalar.
DTensor weighted_sum(const DTensor& y, Rng& rng) {
  DTensor w = DTensor::randn(y.shape(), rng);
  return sum(mul(y, w));
}

// Push values away from the relu6 kinks so the probe never crosses one.
void clear_kinks(DTensor& x, double margin = 0.05) {
  for (auto& v : x.data_vec()) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
    if (std::abs(v - 6.0) < margin) v = v < 6.0 ? 6.0 - margin : 6.0 + margin;
  }
}

struct Scenario {
  std::string name;
  double tolerance;
  std::function<double(uint64_t)> run;  // seed -> max relative error
};

double check_conv(uint64_t seed, int stride) {
  Rng rng(seed);
  DTensor x = DTensor::randn({1, 4, 4, 4, 2}, rng);
  ConvParams<double> p = make_conv<double>(rng, 3, 2, 3, stride);
  Rng wrng(seed ^ 0xabcd);
  double err = finite_difference_check(
      [&](const DTensor& t) {
        Rng r(wrng);
        return weighted_sum(conv3d(t, p), r);
      },
      x);
  err = std::max(err, finite_difference_check(
                          [&](const DTensor& w) {
                            ConvParams<double> q{w, p.bias, p.stride};
                            Rng r(wrng);
                            return weighted_sum(conv3d(x, q), r);
                          },
                          p.weight));
  err = std::max(err, finite_difference_check(
                          [&](const DTensor& b) {
                            ConvParams<double> q{p.weight, b, p.stride};
                            Rng r(wrng);
                            return weighted_sum(conv3d(x, q), r);
                          },
                          p.bias));
  return err;
}

double check_deconv(uint64_t seed) {
  Rng rng(seed);
  DTensor x = DTensor::randn({1, 2, 2, 2, 2}, rng);
  ConvParams<double> p = make_conv<double>(rng, 3, 2, 2, 2);
  Rng wrng(seed ^ 0xabcd);
  double err = finite_difference_check(
      [&](const DTensor& t) {
        Rng r(wrng);
        return weighted_sum(conv_transpose3d(t, p), r);
      },
      x);
  err = std::max(err, finite_difference_check(
                          [&](const DTensor& w) {
                            ConvParams<double> q{w, p.bias, p.stride};
                            Rng r(wrng);
                            return weighted_sum(conv_transpose3d(x, q), r);
                          },
                          p.weight));
  return err;
}

double check_batch_norm(uint64_t seed, Mode mode) {
  Rng rng(seed);
  DTensor x = DTensor::randn({2, 2, 2, 2, 3}, rng);
  BatchNormParams<double> p = make_batch_norm<double>(3);
  // Non-trivial affine part and (for eval) non-trivial running stats.
  p.gamma = DTensor::randn({3}, rng).set_requires_grad(true);
  p.beta = DTensor::randn({3}, rng).set_requires_grad(true);
  for (auto& v : p.running_var.data_vec()) v = 0.5 + rng.uniform01();
  for (auto& v : p.running_mean.data_vec()) v = rng.normal() * 0.3;
  Rng wrng(seed ^ 0xabcd);
  double err = finite_difference_check(
      [&](const DTensor& t) {
        Rng r(wrng);
        BatchNormParams<double> q = p;  // running-stat updates stay local
        return weighted_sum(batch_norm(t, q, mode), r);
      },
      x);
  err = std::max(err, finite_difference_check(
                          [&](const DTensor& g) {
                            Rng r(wrng);
                            BatchNormParams<double> q = p;
                            q.gamma = g;
                            return weighted_sum(batch_norm(x, q, mode), r);
                          },
                          p.gamma));
  err = std::max(err, finite_difference_check(
                          [&](const DTensor& b) {
                            Rng r(wrng);
                            BatchNormParams<double> q = p;
                            q.beta = b;
                            return weighted_sum(batch_norm(x, q, mode), r);
                          },
                          p.beta));
  return err;
}

double check_aggregate(uint64_t seed, QueryKind kind) {
  Rng rng(seed);
  DTensor x = DTensor::randn({1, 2, 2, 2, 2}, rng);
  AggregationParams<double> p = make_aggregation<double>(rng, kind, 2, 2, 0.5);
  Rng wrng(seed ^ 0xabcd);
  auto loss = [&](const DTensor& t, const AggregationParams<double>& q) {
    Rng r(wrng);
    return weighted_sum(global_aggregate(t, q, Mode::eval, nullptr), r);
  };
  double err = finite_difference_check([&](const DTensor& t) { return loss(t, p); }, x);
  auto check_weight = [&](Tensor<double>& w) {
    return finite_difference_check(
        [&](const DTensor& cand) {
          AggregationParams<double> q = p;
          // Rebind whichever projection owns this weight.
          if (w.impl() == p.query.weight.impl()) q.query.weight = cand;
          if (w.impl() == p.key.weight.impl()) q.key.weight = cand;
          if (w.impl() == p.value.weight.impl()) q.value.weight = cand;
          if (w.impl() == p.out.weight.impl()) q.out.weight = cand;
          return loss(x, q);
        },
        w);
  };
  err = std::max(err, check_weight(p.query.weight));
  err = std::max(err, check_weight(p.key.weight));
  err = std::max(err, check_weight(p.value.weight));
  err = std::max(err, check_weight(p.out.weight));
  return err;
}

// Blocks and the full network contain relu6, so the probe can step across a
// kink; those checks use a smaller step plus the kink filter.
const FdOptions kBlockFd{1e-5, true, 0.1};

double check_block_a(uint64_t seed, int64_t cin, int64_t cout) {
  Rng rng(seed);
  NetworkConfig cfg;
  DTensor x = DTensor::randn({1, 4, 4, 4, cin}, rng);
  BlockA<double> blk = make_block_a<double>(rng, cin, cout, true, cfg);
  Rng wrng(seed ^ 0xabcd);
  return finite_difference_check_opts(
      [&](const DTensor& t) {
        Rng r(wrng);
        return weighted_sum(block_forward(t, blk, Mode::train), r);
      },
      x, kBlockFd);
}

double check_block_b(uint64_t seed) {
  Rng rng(seed);
  NetworkConfig cfg;
  DTensor x = DTensor::randn({1, 4, 4, 4, 2}, rng);
  BlockB<double> blk = make_block_b<double>(rng, 2, true, cfg);
  Rng wrng(seed ^ 0xabcd);
  return finite_difference_check_opts(
      [&](const DTensor& t) {
        Rng r(wrng);
        return weighted_sum(block_forward(t, blk, Mode::train), r);
      },
      x, kBlockFd);
}

double check_block_c(uint64_t seed) {
  Rng rng(seed);
  NetworkConfig cfg;
  cfg.dropout_rate = 0.0;  // keep the fd probe deterministic in train mode
  DTensor x = DTensor::randn({1, 2, 2, 2, 4}, rng);
  BottomBlock<double> blk = make_bottom<double>(rng, 4, BottomKind::aggregation, cfg);
  Rng wrng(seed ^ 0xabcd);
  return finite_difference_check_opts(
      [&](const DTensor& t) {
        Rng r(wrng);
        return weighted_sum(block_forward(t, blk, Mode::train, nullptr), r);
      },
      x, kBlockFd);
}

double check_block_d(uint64_t seed) {
  Rng rng(seed);
  NetworkConfig cfg;
  cfg.dropout_rate = 0.0;
  DTensor x = DTensor::randn({1, 2, 2, 2, 4}, rng);
  UpBlock<double> blk = make_up<double>(rng, 4, UpsampleKind::aggregation_deconv, cfg);
  Rng wrng(seed ^ 0xabcd);
  return finite_difference_check_opts(
      [&](const DTensor& t) {
        Rng r(wrng);
        return weighted_sum(block_forward(t, blk, Mode::train, nullptr), r);
      },
      x, kBlockFd);
}

double check_network(uint64_t seed) {
  Rng rng(seed);
  NetworkConfig cfg;
  cfg.base_width = 2;
  cfg.dropout_rate = 0.0;
  Network<double> net = build_network<double>(cfg, seed);
  DTensor x = DTensor::randn({1, 4, 4, 4, 2}, rng);
  Rng wrng(seed ^ 0xabcd);
  return finite_difference_check_opts(
      [&](const DTensor& t) {
        Rng r(wrng);
        return weighted_sum(forward(net, t, Mode::eval), r);
      },
      x, kBlockFd);
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, int seeds_per_op) {
  std::vector<Scenario> scenarios;
  auto add = [&](std::string name, double tol, std::function<double(uint64_t)> run) {
    scenarios.push_back({std::move(name), tol, std::move(run)});
  };

  add("matmul", 1e-4, [](uint64_t s) {
    Rng rng(s);
    DTensor a = DTensor::randn({3, 4}, rng);
    DTensor b = DTensor::randn({4, 2}, rng);
    Rng wrng(s ^ 0xabcd);
    double err = finite_difference_check(
        [&](const DTensor& t) {
          Rng r(wrng);
          return weighted_sum(matmul(t, b), r);
        },
        a);
    return std::max(err, finite_difference_check(
                             [&](const DTensor& t) {
                               Rng r(wrng);
                               return weighted_sum(matmul(a, t), r);
                             },
                             b));
  });
  add("softmax_lastdim", 1e-4, [](uint64_t s) {
    Rng rng(s);
    DTensor x = DTensor::randn({3, 5}, rng);
    Rng wrng(s ^ 0xabcd);
    return finite_difference_check(
        [&](const DTensor& t) {
          Rng r(wrng);
          return weighted_sum(softmax_lastdim(t), r);
        },
        x);
  });
  add("conv3d", 1e-4, [](uint64_t s) { return check_conv(s, 1); });
  add("conv3d_stride2", 1e-4, [](uint64_t s) { return check_conv(s, 2); });
  add("conv_transpose3d", 1e-4, [](uint64_t s) { return check_deconv(s); });
  add("batch_norm_train", 1e-4, [](uint64_t s) { return check_batch_norm(s, Mode::train); });
  add("batch_norm_eval", 1e-4, [](uint64_t s) { return check_batch_norm(s, Mode::eval); });
  add("relu6", 1e-4, [](uint64_t s) {
    Rng rng(s);
    DTensor x = DTensor::randn({4, 4, 4}, rng, 3.0);
    clear_kinks(x);
    Rng wrng(s ^ 0xabcd);
    return finite_difference_check(
        [&](const DTensor& t) {
          Rng r(wrng);
          return weighted_sum(relu6(t), r);
        },
        x);
  });
  add("dropout_eval", 1e-4, [](uint64_t s) {
    Rng rng(s);
    DTensor x = DTensor::randn({4, 8}, rng);
    Rng wrng(s ^ 0xabcd);
    return finite_difference_check(
        [&](const DTensor& t) {
          Rng r(wrng);
          return weighted_sum(dropout(t, 0.5, Mode::eval, nullptr), r);
        },
        x);
  });
  add("cross_entropy", 1e-4, [](uint64_t s) {
    Rng rng(s);
    DTensor x = DTensor::randn({2, 2, 2, 2, 4}, rng);
    std::vector<uint8_t> labels(16);
    for (auto& l : labels) l = static_cast<uint8_t>(rng.uniform_int(4));
    return finite_difference_check(
        [&](const DTensor& t) { return cross_entropy(t, labels); }, x);
  });
  add("global_aggregate_conv1", 1e-4,
      [](uint64_t s) { return check_aggregate(s, QueryKind::conv1); });
  add("global_aggregate_deconv", 1e-4,
      [](uint64_t s) { return check_aggregate(s, QueryKind::deconv3_s2); });
  add("global_aggregate_conv3s2", 1e-4,
      [](uint64_t s) { return check_aggregate(s, QueryKind::conv3_s2); });
  add("block_a", 1e-4, [](uint64_t s) { return check_block_a(s, 3, 3); });
  add("block_a_projection", 1e-4, [](uint64_t s) { return check_block_a(s, 2, 4); });
  add("block_b", 1e-4, [](uint64_t s) { return check_block_b(s); });
  add("block_c", 1e-4, [](uint64_t s) { return check_block_c(s); });
  add("block_d", 1e-4, [](uint64_t s) { return check_block_d(s); });
  add("network", 1e-3, [](uint64_t s) { return check_network(s); });

  std::vector<GradCheckResult> results;
  for (const Scenario& sc : scenarios) {
    GradCheckResult r;
    r.name = sc.name;
    r.tolerance = sc.tolerance;
    for (int i = 0; i < seeds_per_op; ++i)
      r.max_rel_err = std::max(r.max_rel_err, sc.run(seed + static_cast<uint64_t>(i)));
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace nlunet
