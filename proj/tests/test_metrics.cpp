#include <doctest.h>

#include "nlunet/metrics.hpp"
#include "nlunet/rng.hpp"
#include "oracles.hpp"

using namespace nlunet;

namespace {

LabelVolume random_labels(uint64_t seed, const Dims3& dims, int num_classes) {
  Rng rng(seed);
  LabelVolume v;
  v.dims = dims;
  v.labels.resize(dims_numel(dims));
  for (auto& l : v.labels) l = static_cast<uint8_t>(rng.uniform_int(num_classes));
  return v;
}

BinaryMap map_from(const Dims3& dims, std::vector<uint8_t> bits) {
  return BinaryMap{dims, std::move(bits)};
}

}  // namespace

TEST_CASE("binarize: equality test against one class id") {
  LabelVolume v = random_labels(3, {2, 2, 2}, 4);
  for (int cls = 0; cls < 4; ++cls) {
    BinaryMap m = binarize(v, cls);
    for (int64_t i = 0; i < 8; ++i) CHECK(m.bits[i] == (v.labels[i] == cls ? 1 : 0));
  }
  // The per-class maps partition the voxels.
  int64_t total = 0;
  for (int cls = 0; cls < 4; ++cls) total += binarize(v, cls).count();
  CHECK(total == 8);

  LabelVolume all2;
  all2.dims = {2, 2, 2};
  all2.labels.assign(8, 2);
  CHECK(binarize(all2, 2).count() == 8);
}

TEST_CASE("dice_ratio: identical, disjoint and the 2/3 case") {
  Dims3 d{2, 2, 2};
  auto p = map_from(d, {1, 1, 0, 0, 0, 0, 0, 0});
  CHECK(dice_ratio(p, p) == doctest::Approx(1.0));

  auto q = map_from(d, {0, 0, 1, 1, 0, 0, 0, 0});
  CHECK(dice_ratio(p, q) == doctest::Approx(0.0));

  auto l = map_from(d, {1, 1, 1, 1, 0, 0, 0, 0});  // |P|=2, |L|=4, overlap 2
  CHECK(dice_ratio(p, l) == doctest::Approx(2.0 / 3));
  CHECK(dice_ratio(l, p) == doctest::Approx(2.0 / 3));  // symmetric
}

TEST_CASE("dice_ratio: both empty is an error, not a sentinel") {
  Dims3 d{2, 2, 2};
  auto e = map_from(d, std::vector<uint8_t>(8, 0));
  CHECK_THROWS_AS(dice_ratio(e, e), DataError);
}

TEST_CASE("mhd on vector sets: hand-computed scalar case") {
  // A = {(0)}, B = {(3),(4)}: d(A,B) = 3, d(B,A) = (3+4)/2 = 3.5.
  std::vector<std::vector<double>> a = {{0.0}};
  std::vector<std::vector<double>> b = {{3.0}, {4.0}};
  CHECK(mhd_vector_sets(a, b) == doctest::Approx(3.5));
  CHECK_THROWS_AS(mhd_vector_sets({}, b), DataError);
}

TEST_CASE("mhd_directional: zero on identical maps, matches brute force") {
  Dims3 d{4, 4, 4};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 7 + 1);
    std::vector<uint8_t> pa(64), pb(64);
    for (auto& b : pa) b = rng.bernoulli(0.4) ? 1 : 0;
    for (auto& b : pb) b = rng.bernoulli(0.4) ? 1 : 0;
    auto p = map_from(d, pa);
    auto l = map_from(d, pb);
    CHECK(mhd_directional(p, p, Axis::D) == 0.0);
    for (int axis = 0; axis < 3; ++axis) {
      const double got = mhd_directional(p, l, static_cast<Axis>(axis));
      const double want = oracle::mhd_directional(pa, pb, {4, 4, 4}, axis);
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
      CHECK(got >= 0.0);
    }
    const double got3 = mhd_3d(p, l);
    CHECK(got3 == doctest::Approx(oracle::mhd_3d(pa, pb, {4, 4, 4})).epsilon(1e-12));
    CHECK(got3 == doctest::Approx(mhd_3d(l, p)));  // symmetric
  }
}

TEST_CASE("mhd_3d: invariant under a simultaneous axis permutation") {
  Rng rng(17);
  Dims3 d{3, 4, 5};
  std::vector<uint8_t> pa(60), pb(60);
  for (auto& b : pa) b = rng.bernoulli(0.5) ? 1 : 0;
  for (auto& b : pb) b = rng.bernoulli(0.5) ? 1 : 0;
  auto p = map_from(d, pa);
  auto l = map_from(d, pb);

  // Transpose D<->W on both maps.
  Dims3 dt{5, 4, 3};
  std::vector<uint8_t> ta(60), tb(60);
  for (int64_t a = 0; a < 3; ++a)
    for (int64_t h = 0; h < 4; ++h)
      for (int64_t w = 0; w < 5; ++w) {
        ta[(w * 4 + h) * 3 + a] = pa[(a * 4 + h) * 5 + w];
        tb[(w * 4 + h) * 3 + a] = pb[(a * 4 + h) * 5 + w];
      }
  CHECK(mhd_3d(map_from(dt, ta), map_from(dt, tb)) == doctest::Approx(mhd_3d(p, l)));
}

TEST_CASE("evaluate: identical volumes give perfect scores") {
  LabelVolume v = random_labels(5, {4, 4, 4}, 4);
  auto report = evaluate(v, v, {1, 2, 3});
  REQUIRE(report.classes.size() == 3);
  for (const auto& cm : report.classes) {
    CHECK(cm.defined);
    CHECK(cm.dice == doctest::Approx(1.0));
    CHECK(cm.mhd3d == doctest::Approx(0.0));
  }
  CHECK(report.average_dice == doctest::Approx(1.0));
  CHECK(report.average_mhd3d == doctest::Approx(0.0));
}

TEST_CASE("evaluate: lists the requested classes in order, flags undefined ones") {
  LabelVolume truth;
  truth.dims = {2, 2, 2};
  truth.labels = {0, 0, 1, 1, 2, 2, 0, 0};  // class 3 absent
  LabelVolume pred = truth;
  auto report = evaluate(pred, truth, {3, 1, 2});
  REQUIRE(report.classes.size() == 3);
  CHECK(report.classes[0].class_id == 3);
  CHECK_FALSE(report.classes[0].defined);
  CHECK(report.classes[1].class_id == 1);
  CHECK(report.classes[2].class_id == 2);
  CHECK(report.defined_classes == 2);
  CHECK(report.average_dice == doctest::Approx(1.0));
}

TEST_CASE("evaluate: dimension mismatch names both shapes") {
  LabelVolume a = random_labels(1, {2, 2, 2}, 4);
  LabelVolume b = random_labels(1, {2, 2, 4}, 4);
  CHECK_THROWS_WITH_AS(evaluate(a, b, {1}), doctest::Contains("[2,2,4]"), DataError);
}

TEST_CASE("report_to_text: deterministic rendering") {
  LabelVolume v = random_labels(9, {4, 4, 4}, 4);
  LabelVolume w = random_labels(10, {4, 4, 4}, 4);
  const std::string a = report_to_text(evaluate(v, w, {1, 2, 3}));
  const std::string b = report_to_text(evaluate(v, w, {1, 2, 3}));
  CHECK(a == b);
  CHECK(a.find("class.1.dice") != std::string::npos);
  CHECK(a.find("average.mhd3d") != std::string::npos);
}
