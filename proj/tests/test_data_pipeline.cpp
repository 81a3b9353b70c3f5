#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "nlunet/patches.hpp"
#include "nlunet/phantom.hpp"
#include "nlunet/volume.hpp"

using namespace nlunet;

TEST_CASE("generate_phantom: bit-identical for the same seed") {
  auto [v1, l1] = generate_phantom(42, {16, 16, 16});
  auto [v2, l2] = generate_phantom(42, {16, 16, 16});
  CHECK(v1.data == v2.data);
  CHECK(l1.labels == l2.labels);
  auto [v3, l3] = generate_phantom(43, {16, 16, 16});
  CHECK(v1.data != v3.data);
}

TEST_CASE("generate_phantom: class-conditional means at zero noise") {
  auto [vol, labels] = generate_phantom(7, {32, 32, 32}, 4, 0.0);
  const PhantomIntensityModel model;
  for (int ch = 0; ch < 2; ++ch) {
    double mean[4] = {0, 0, 0, 0};
    int64_t count[4] = {0, 0, 0, 0};
    for (int64_t i = 0; i < labels.numel(); ++i) {
      mean[labels.labels[i]] += vol.data[i * 2 + ch];
      ++count[labels.labels[i]];
    }
    for (int cls = 0; cls < 4; ++cls) {
      REQUIRE(count[cls] > 0);
      mean[cls] /= count[cls];
      // The smooth bias field can shift a class mean by its amplitude.
      CHECK(std::abs(mean[cls] - model.mean[ch][cls]) < 0.05);
    }
    // Adjacent classes stay separated in each channel.
    for (int cls = 0; cls + 1 < 4; ++cls)
      CHECK(std::abs(mean[cls + 1] - mean[cls]) > 0.05);
  }
}

TEST_CASE("generate_phantom: seed-0 64^3 class histogram (frozen regression)") {
  auto [vol, labels] = generate_phantom(0, {64, 64, 64});
  int64_t hist[4] = {0, 0, 0, 0};
  for (uint8_t l : labels.labels) ++hist[l];
  const int64_t total = labels.numel();
  for (int cls = 0; cls < 4; ++cls) CHECK(hist[cls] * 100 >= total);
  // Frozen from the reference run; guards the generator against drift.
  CHECK(hist[0] == 186774);
  CHECK(hist[1] == 34124);
  CHECK(hist[2] == 26133);
  CHECK(hist[3] == 15113);
}

TEST_CASE("generate_phantom: rejects bad configurations") {
  CHECK_THROWS_AS(generate_phantom(0, {4, 16, 16}), ConfigError);
  CHECK_THROWS_AS(generate_phantom(0, {16, 16, 16}, 3), ConfigError);
}

TEST_CASE("normalize_volume: per-channel zero mean and unit variance") {
  auto [vol, labels] = generate_phantom(3, {16, 16, 16});
  normalize_volume(vol);
  const int64_t n = dims_numel(vol.dims);
  for (int64_t c = 0; c < vol.channels; ++c) {
    double mean = 0, var = 0;
    for (int64_t i = 0; i < n; ++i) mean += vol.data[i * vol.channels + c];
    mean /= n;
    for (int64_t i = 0; i < n; ++i) {
      const double d = vol.data[i * vol.channels + c] - mean;
      var += d * d;
    }
    var /= n;
    CHECK(std::abs(mean) < 1e-4);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(vol.channel_std[c] > 0.f);
  }
}

TEST_CASE("sliding_positions: worked examples") {
  auto p = sliding_positions({64, 64, 64}, 32, 8);
  CHECK(p.size() == 125);  // {0,8,16,24,32} per axis
  std::set<int64_t> d_offsets;
  for (const auto& c : p) d_offsets.insert(c[0]);
  CHECK(d_offsets == std::set<int64_t>{0, 8, 16, 24, 32});

  auto clamped = sliding_positions({33, 33, 33}, 32, 8);
  CHECK(clamped.size() == 8);  // {0,1} per axis
  std::set<int64_t> offs;
  for (const auto& c : clamped) offs.insert(c[0]);
  CHECK(offs == std::set<int64_t>{0, 1});

  auto tiled = sliding_positions({64, 64, 64}, 32, 32);
  CHECK(tiled.size() == 8);  // exact tiling
}

TEST_CASE("sliding_positions: rejects invalid specs") {
  CHECK_THROWS_AS(sliding_positions({16, 16, 16}, 32, 8), ConfigError);
  CHECK_THROWS_AS(sliding_positions({16, 16, 16}, 8, 16), ConfigError);
  CHECK_THROWS_AS(sliding_positions({16, 16, 16}, 8, 0), ConfigError);
}

TEST_CASE("sliding_positions: coverage and count law over randomized triples") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Dims3 dims;
    for (int a = 0; a < 3; ++a) dims[a] = 8 + rng.uniform_int(121);  // up to 128
    const int64_t min_dim = std::min({dims[0], dims[1], dims[2]});
    const int64_t s = 1 + rng.uniform_int(min_dim);
    const int64_t t = 1 + rng.uniform_int(s);
    auto corners = sliding_positions(dims, s, t);

    // Per-axis count law: ceil((dim - s) / t) + 1.
    int64_t expected = 1;
    for (int a = 0; a < 3; ++a) expected *= (dims[a] - s + t - 1) / t + 1;
    CHECK(static_cast<int64_t>(corners.size()) == expected);

    // Union of windows covers every voxel (per-axis coverage suffices).
    for (int a = 0; a < 3; ++a) {
      std::vector<char> covered(dims[a], 0);
      for (const auto& c : corners)
        for (int64_t i = 0; i < s; ++i) covered[c[a] + i] = 1;
      for (int64_t i = 0; i < dims[a]; ++i) CHECK(covered[i] == 1);
    }
  }
}

TEST_CASE("sample_patches: bounds, alignment and the whole-volume case") {
  auto [vol, labels] = generate_phantom(5, {16, 12, 20});
  Rng rng(1);
  auto patches = sample_patches(vol, labels, 25, 8, rng);
  REQUIRE(patches.size() == 25);
  for (const auto& p : patches) {
    for (int a = 0; a < 3; ++a) {
      CHECK(p.corner[a] >= 0);
      CHECK(p.corner[a] <= vol.dims[a] - 8);
    }
    // Aligned crops: spot-check the first voxel.
    CHECK(p.intensities[0] == vol.at(p.corner[0], p.corner[1], p.corner[2], 0));
    CHECK(p.labels[0] == labels.at(p.corner[0], p.corner[1], p.corner[2]));
  }

  auto whole = sample_patches(vol, labels, 3, 12, rng);
  for (const auto& p : whole) CHECK(p.corner[1] == 0);  // only one valid H offset
  CHECK_THROWS_AS(sample_patches(vol, labels, 1, 32, rng), ConfigError);
}

TEST_CASE("sample_patches: corner distribution is uniform (chi-square, 1% level)") {
  auto [vol, labels] = generate_phantom(6, {16, 16, 16});
  Rng rng(2024);
  auto patches = sample_patches(vol, labels, 10000, 8, rng);
  // 9 possible offsets per axis; chi-square critical value at df=8, 1% level.
  const double critical = 20.09;
  for (int a = 0; a < 3; ++a) {
    int64_t counts[9] = {0};
    for (const auto& p : patches) ++counts[p.corner[a]];
    const double expected = 10000.0 / 9.0;
    double chi2 = 0;
    for (int i = 0; i < 9; ++i) {
      const double d = counts[i] - expected;
      chi2 += d * d / expected;
    }
    CHECK(chi2 < critical);
  }
}

TEST_CASE("stitch: constant predictions pass through and rows stay normalized") {
  const Dims3 dims{16, 16, 16};
  auto corners = sliding_positions(dims, 8, 4);
  std::vector<ProbPatch> patches;
  for (const auto& c : corners) {
    ProbPatch p;
    p.corner = c;
    p.size = 8;
    p.probs.resize(8 * 8 * 8 * 4);
    for (int64_t i = 0; i < 8 * 8 * 8; ++i) {
      p.probs[i * 4 + 0] = 0.1f;
      p.probs[i * 4 + 1] = 0.2f;
      p.probs[i * 4 + 2] = 0.3f;
      p.probs[i * 4 + 3] = 0.4f;
    }
    patches.push_back(std::move(p));
  }
  Volume probs = stitch(patches, dims, 4);
  for (int64_t i = 0; i < dims_numel(dims); ++i) {
    CHECK(probs.data[i * 4 + 0] == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(probs.data[i * 4 + 3] == doctest::Approx(0.4).epsilon(1e-6));
    double s = 0;
    for (int k = 0; k < 4; ++k) s += probs.data[i * 4 + k];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("stitch: coverage counts for (64, 32, 8) range from 1 to 64") {
  const Dims3 dims{64, 64, 64};
  auto corners = sliding_positions(dims, 32, 8);
  std::vector<int> cover(dims_numel(dims), 0);
  for (const auto& c : corners)
    for (int64_t d = 0; d < 32; ++d)
      for (int64_t h = 0; h < 32; ++h)
        for (int64_t w = 0; w < 32; ++w)
          ++cover[((c[0] + d) * 64 + c[1] + h) * 64 + c[2] + w];
  int mn = cover[0], mx = cover[0];
  for (int v : cover) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  CHECK(mn == 1);
  CHECK(mx == 64);
}

TEST_CASE("argmax_labels: one-hot rows and the lowest-index tie rule") {
  Volume probs;
  probs.dims = {1, 1, 2};
  probs.channels = 4;
  probs.data = {0.f, 0.f, 1.f, 0.f,      // voxel 0: class 2
                0.5f, 0.5f, 0.f, 0.f};   // voxel 1: tie -> class 0
  auto labels = argmax_labels(probs);
  CHECK(labels.labels[0] == 2);
  CHECK(labels.labels[1] == 0);
}

TEST_CASE("volume io: round trip is bit-identical, corruption is caught") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "nlunet_vol_test").string();
  fs::create_directories(dir);

  auto [vol, labels] = generate_phantom(11, {9, 10, 11});
  normalize_volume(vol);
  write_volume(vol, dir + "/a.vol");
  Volume back = read_volume(dir + "/a.vol");
  CHECK(back.dims == vol.dims);
  CHECK(back.channels == vol.channels);
  CHECK(back.data == vol.data);
  CHECK(back.channel_mean == vol.channel_mean);
  CHECK(back.channel_std == vol.channel_std);

  write_labels(labels, dir + "/a.labels");
  LabelVolume lback = read_labels(dir + "/a.labels");
  CHECK(lback.labels == labels.labels);

  // Payload size is dims * channels * 4 bytes for f32.
  CHECK(fs::file_size(dir + "/a.vol.raw") == 9 * 10 * 11 * 2 * 4);

  // Truncated payload.
  fs::resize_file(dir + "/a.vol.raw", 100);
  CHECK_THROWS_WITH_AS(read_volume(dir + "/a.vol"), doctest::Contains("100"), DataError);

  // Malformed header.
  std::ofstream f(dir + "/bad.vol");
  f << "format nlvol-v1\nkind intensity\ndims 4 x 4\n";
  f.close();
  CHECK_THROWS_AS(read_volume(dir + "/bad.vol"), DataError);
  fs::remove_all(dir);
}
