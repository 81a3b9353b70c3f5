#include <doctest.h>

#include <cmath>
#include <limits>

#include "nlunet/aggregation.hpp"
#include "oracles.hpp"

using namespace nlunet;

TEST_CASE("unfold: values, shape law and fold round trip") {
  std::vector<float> vals(8);
  for (int i = 0; i < 8; ++i) vals[i] = static_cast<float>(i + 1);
  auto x = Tensor<float>::from({1, 2, 2, 2, 1}, vals);
  auto u = unfold(x);
  CHECK(u.shape() == Shape{1, 8, 1});
  for (int i = 0; i < 8; ++i) CHECK(u.data()[i] == vals[i]);

  auto back = fold(u, 2, 2, 2);
  for (int i = 0; i < 8; ++i) CHECK(back.data()[i] == x.data()[i]);

  Rng rng(2);
  auto big = Tensor<float>::randn({2, 3, 4, 5, 7}, rng);
  CHECK(unfold(big).shape() == Shape{2, 60, 7});
}

TEST_CASE("global_aggregate: single position attends only to itself") {
  Rng rng(5);
  auto x = Tensor<float>::randn({1, 1, 1, 1, 3}, rng);
  auto p = make_aggregation<float>(rng, QueryKind::conv1, 3, 3, 0.0);
  auto r = global_aggregate_with_attention(x, p, Mode::eval, nullptr);
  CHECK(r.attention.shape() == Shape{1, 1, 1});
  CHECK(r.attention.item() == doctest::Approx(1.0));
  // With A == [[1]] the output reduces to out(value(x)).
  auto direct = conv3d(conv3d(x, p.value), p.out);
  for (int64_t i = 0; i < direct.numel(); ++i)
    CHECK(r.output.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-6));
}

TEST_CASE("global_aggregate: zero keys make attention uniform") {
  Rng rng(6);
  auto x = Tensor<float>::randn({1, 2, 2, 2, 2}, rng);
  auto p = make_aggregation<float>(rng, QueryKind::conv1, 2, 2, 0.0);
  for (auto& v : p.key.weight.data_vec()) v = 0.f;
  for (auto& v : p.key.bias.data_vec()) v = 0.f;
  auto r = global_aggregate_with_attention(x, p, Mode::eval, nullptr);
  const int64_t n = 8;
  for (int64_t i = 0; i < r.attention.numel(); ++i)
    CHECK(r.attention.data()[i] == doctest::Approx(1.0 / n).epsilon(1e-6));
  // Every query position receives out(mean value vector).
  auto v = unfold(conv3d(x, p.value));
  std::vector<float> mean(2, 0.f);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < 2; ++c) mean[c] += v.data()[i * 2 + c] / n;
  auto mean_map = Tensor<float>::from({1, 1, 1, 1, 2}, mean);
  auto expected = conv3d(mean_map, p.out);
  for (int64_t pos = 0; pos < n; ++pos)
    for (int64_t c = 0; c < 2; ++c)
      CHECK(r.output.data()[pos * 2 + c] ==
            doctest::Approx(expected.data()[c]).epsilon(1e-5));
}

TEST_CASE("global_aggregate: matches the explicit double-loop oracle") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto x = Tensor<float>::randn({1, 2, 2, 2, 2}, rng);
    auto p = make_aggregation<float>(rng, QueryKind::conv1, 2, 2, 0.5);
    auto y = global_aggregate(x, p, Mode::eval, nullptr);

    auto q = unfold(conv3d(x, p.query));
    auto k = unfold(conv3d(x, p.key));
    auto v = unfold(conv3d(x, p.value));
    auto o = oracle::attention(q.data_vec(), k.data_vec(), v.data_vec(), 8, 8, 2, 2);
    auto folded = Tensor<float>::from({1, 2, 2, 2, 2}, o);
    auto expected = conv3d(folded, p.out);
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(y.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-5));
  }
}

TEST_CASE("global_aggregate: output size follows the query transform") {
  Rng rng(9);
  auto x = Tensor<float>::randn({2, 4, 4, 4, 2}, rng);
  auto same = make_aggregation<float>(rng, QueryKind::conv1, 2, 3, 0.0);
  CHECK(global_aggregate(x, same, Mode::eval, nullptr).shape() == Shape{2, 4, 4, 4, 3});
  auto up = make_aggregation<float>(rng, QueryKind::deconv3_s2, 2, 3, 0.0);
  CHECK(global_aggregate(x, up, Mode::eval, nullptr).shape() == Shape{2, 8, 8, 8, 3});
  auto down = make_aggregation<float>(rng, QueryKind::conv3_s2, 2, 3, 0.0);
  CHECK(global_aggregate(x, down, Mode::eval, nullptr).shape() == Shape{2, 2, 2, 2, 3});
}

TEST_CASE("attention rows: eval sums to one, train dropout breaks it") {
  Rng rng(10);
  auto x = Tensor<float>::randn({1, 2, 2, 2, 2}, rng);
  auto p = make_aggregation<float>(rng, QueryKind::conv1, 2, 2, 0.5);
  auto eval = global_aggregate_with_attention(x, p, Mode::eval, nullptr);
  auto sums = attention_rowsums(eval.attention);
  CHECK(sums.shape() == Shape{1, 8});
  for (int64_t i = 0; i < sums.numel(); ++i)
    CHECK(sums.data()[i] == doctest::Approx(1.0).epsilon(1e-6));

  Rng stream(77);
  auto train = global_aggregate_with_attention(x, p, Mode::train, &stream);
  auto tsums = attention_rowsums(train.attention);
  bool any_off = false;
  for (int64_t i = 0; i < tsums.numel(); ++i) {
    CHECK(std::isfinite(tsums.data()[i]));
    any_off = any_off || std::abs(tsums.data()[i] - 1.f) > 1e-4f;
  }
  CHECK(any_off);
}

TEST_CASE("global_aggregate: permuting query rows permutes output rows") {
  Rng rng(11);
  auto x = Tensor<double>::randn({1, 2, 2, 2, 2}, rng);
  auto p = make_aggregation<double>(rng, QueryKind::conv1, 2, 2, 0.0);

  auto q = unfold(conv3d(x, p.query));
  auto k = unfold(conv3d(x, p.key));
  auto v = unfold(conv3d(x, p.value));
  auto run = [&](const Tensor<double>& qm) {
    auto a = softmax_lastdim(
        scale(bmm(qm, transpose_last2(k)), 1.0 / std::sqrt(2.0)));
    return bmm(a, v);
  };
  auto base = run(q);
  // Reverse the 8 query rows.
  auto qp = Tensor<double>::zeros(q.shape());
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t c = 0; c < 2; ++c) qp.data()[(7 - i) * 2 + c] = q.data()[i * 2 + c];
  auto perm = run(qp);
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t c = 0; c < 2; ++c)
      CHECK(perm.data()[(7 - i) * 2 + c] == doctest::Approx(base.data()[i * 2 + c]));
}

TEST_CASE("global_aggregate: gradient check of the whole block") {
  Rng rng(12);
  auto x = Tensor<double>::randn({1, 2, 2, 2, 2}, rng);
  auto p = make_aggregation<double>(rng, QueryKind::conv1, 2, 2, 0.0);
  auto w = Tensor<double>::randn({1, 2, 2, 2, 2}, rng);
  const double err = finite_difference_check(
      [&](const Tensor<double>& t) {
        return sum(mul(global_aggregate(t, p, Mode::eval, nullptr), w));
      },
      x);
  CHECK(err < 1e-4);
}

TEST_CASE("global_aggregate: rejects non-finite input and oversized attention") {
  Rng rng(13);
  auto p = make_aggregation<float>(rng, QueryKind::conv1, 1, 1, 0.0);
  auto bad = Tensor<float>::zeros({1, 2, 2, 2, 1});
  bad.data()[3] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(global_aggregate(bad, p, Mode::eval, nullptr), DataError);

  auto small_budget = make_aggregation<float>(rng, QueryKind::conv1, 1, 1, 0.0, 16);
  auto x = Tensor<float>::zeros({1, 4, 4, 4, 1});  // needs 64*64 entries
  CHECK_THROWS_WITH_AS(global_aggregate(x, small_budget, Mode::eval, nullptr),
                       doctest::Contains("N=64"), ResourceError);
}
