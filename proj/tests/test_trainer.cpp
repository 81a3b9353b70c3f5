#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nlunet/checkpoint.hpp"
#include "nlunet/phantom.hpp"
#include "nlunet/trainer.hpp"
#include "oracles.hpp"

using namespace nlunet;

namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  const std::string dir = (fs::temp_directory_path() / name).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("adam_step: first step moves by about -lr * sign(g)") {
  auto theta = Tensor<float>::from({1}, {0.f});
  theta.set_requires_grad(true);
  theta.impl()->grad = {10.f};  // |g| >> epsilon
  std::vector<std::pair<std::string, Tensor<float>*>> params = {{"theta", &theta}};
  AdamState state;
  state.cfg.weight_decay = 0;
  adam_step(params, state);
  CHECK(theta.data()[0] == doctest::Approx(-0.001).epsilon(1e-4));
}

TEST_CASE("adam_step: zero gradient and zero decay is a no-op") {
  auto theta = Tensor<float>::from({3}, {1.f, -2.f, 0.5f});
  theta.set_requires_grad(true);
  theta.impl()->grad = {0.f, 0.f, 0.f};
  std::vector<std::pair<std::string, Tensor<float>*>> params = {{"theta", &theta}};
  AdamState state;
  state.cfg.weight_decay = 0;
  adam_step(params, state);
  adam_step(params, state);
  CHECK(theta.data()[0] == 1.f);
  CHECK(theta.data()[1] == -2.f);
  CHECK(theta.data()[2] == 0.5f);
}

TEST_CASE("adam_step: missing gradient names the parameter") {
  auto theta = Tensor<float>::from({1}, {1.f});
  std::vector<std::pair<std::string, Tensor<float>*>> params = {{"down1.conv1.weight", &theta}};
  AdamState state;
  CHECK_THROWS_WITH_AS(adam_step(params, state), doctest::Contains("down1.conv1.weight"),
                       ContractError);
}

TEST_CASE("adam_step: trajectory on a scalar quadratic matches the hand-rolled oracle") {
  // loss = theta^2 / 2, grad = theta; run 10 steps in double via the oracle
  // and in float via adam_step, compare at float precision per step.
  auto theta = Tensor<float>::from({1}, {1.f});
  theta.set_requires_grad(true);
  std::vector<std::pair<std::string, Tensor<float>*>> params = {{"theta", &theta}};
  AdamState state;
  state.cfg.weight_decay = 0;

  oracle::AdamScalar ref;
  double ref_theta = 1.0;
  for (int step = 0; step < 10; ++step) {
    theta.impl()->grad = {theta.data()[0]};
    adam_step(params, state);
    ref_theta = ref.step(ref_theta, ref_theta);
    CHECK(static_cast<double>(theta.data()[0]) == doctest::Approx(ref_theta).epsilon(1e-6));
  }

  // The same trajectory computed in double-precision arithmetic end to end
  // agrees with the oracle to 1e-12.
  oracle::AdamScalar a, b;
  double ta = 1.0, tb = 1.0;
  for (int step = 0; step < 10; ++step) {
    ta = a.step(ta, ta);
    tb = b.step(tb, tb);
    CHECK(ta == doctest::Approx(tb).epsilon(1e-12));
  }
}

TEST_CASE("train: smoke run lowers the loss and is reproducible") {
  auto [vol, labels] = generate_phantom(0, {24, 24, 24});
  TrainConfig cfg;
  cfg.model = "full";
  cfg.base_width = 4;
  cfg.patch_size = 8;
  cfg.batch_size = 2;
  cfg.steps = 60;
  cfg.seed = 0;
  cfg.log_every = 5;
  cfg.out_dir = temp_dir("nlunet_train_smoke");

  TrainResult r1 = train(cfg, vol, labels);
  CHECK(r1.final_loss < r1.initial_loss);
  const std::string log1 = slurp(r1.log_path);

  cfg.out_dir = temp_dir("nlunet_train_smoke2");
  TrainResult r2 = train(cfg, vol, labels);
  CHECK(slurp(r2.log_path) == log1);
  CHECK(r2.final_loss == r1.final_loss);

  // Checkpoints from the two runs are byte-identical.
  CHECK(slurp(r1.checkpoint_path + ".bin") == slurp(r2.checkpoint_path + ".bin"));

  fs::remove_all(cfg.out_dir);
  fs::remove_all(temp_dir("nlunet_train_smoke"));
}

TEST_CASE("train: validates its configuration") {
  auto [vol, labels] = generate_phantom(0, {16, 16, 16});
  TrainConfig cfg;
  cfg.patch_size = 17;
  CHECK_THROWS_AS(train(cfg, vol, labels), ConfigError);
  cfg.patch_size = 32;  // larger than the volume
  cfg.steps = 1;
  CHECK_THROWS_AS(train(cfg, vol, labels), ConfigError);
}

TEST_CASE("infer: tiling equals independent per-tile prediction") {
  auto [vol, labels] = generate_phantom(1, {16, 16, 16});
  NetworkConfig nc;
  nc.base_width = 4;
  nc.dropout_rate = 0.0;
  auto net = build_network<float>(nc, 5);

  InferResult tiled = infer(net, vol, {8, 8});

  Volume nvol = vol;
  normalize_volume(nvol);
  for (const auto& corner : sliding_positions(nvol.dims, 8, 8)) {
    NoGradGuard ng;
    auto x = Tensor<float>::zeros({1, 8, 8, 8, 2});
    extract_intensities(nvol, corner, 8, x.data());
    auto probs = softmax_lastdim(forward(net, x, Mode::eval));
    for (int64_t d = 0; d < 8; ++d)
      for (int64_t h = 0; h < 8; ++h)
        for (int64_t w = 0; w < 8; ++w)
          for (int64_t k = 0; k < 4; ++k)
            CHECK(tiled.probabilities.at(corner[0] + d, corner[1] + h, corner[2] + w, k) ==
                  doctest::Approx(probs.data()[(((d * 8) + h) * 8 + w) * 4 + k])
                      .epsilon(1e-6));
  }
}

TEST_CASE("infer: parallel run is bit-identical to the serial one") {
  auto [vol, labels] = generate_phantom(2, {16, 16, 16});
  NetworkConfig nc;
  nc.base_width = 4;
  auto net = build_network<float>(nc, 9);
  InferResult serial = infer(net, vol, {8, 4}, 1);
  InferResult parallel = infer(net, vol, {8, 4}, 4);
  CHECK(serial.probabilities.data == parallel.probabilities.data);
  CHECK(serial.labels.labels == parallel.labels.labels);
}

TEST_CASE("sweep_overlap: patch counts, recorded failures, ensemble direction") {
  auto [vol, labels] = generate_phantom(3, {24, 24, 24});
  TrainConfig cfg;
  cfg.model = "full";
  cfg.base_width = 4;
  cfg.patch_size = 8;
  cfg.batch_size = 4;
  cfg.steps = 200;
  cfg.seed = 0;
  cfg.out_dir = temp_dir("nlunet_sweep_overlap");
  train(cfg, vol, labels);
  Network<float> net = load_checkpoint(cfg.out_dir + "/checkpoint.json");

  auto rows = sweep_overlap(net, vol, labels, {4, 8, 16, 32}, 8, {1, 2, 3});
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].ok);
  CHECK(rows[1].ok);
  CHECK_FALSE(rows[2].ok);  // step 16 > patch 8 is recorded, not thrown
  CHECK_FALSE(rows[3].ok);
  CHECK(rows[2].error.find("overlap_step") != std::string::npos);
  CHECK(rows[0].patch_count >= rows[1].patch_count);

  // Denser overlap means more ensemble averaging; allow slack of 0.02.
  CHECK(rows[0].report.average_dice >= rows[1].report.average_dice - 0.02);

  const std::string table = cfg.out_dir + "/sweep_overlap.tsv";
  const std::string plot = cfg.out_dir + "/sweep_overlap.dat";
  write_sweep_table(rows, {1, 2, 3}, table, plot);
  const std::string text = slurp(table);
  CHECK(text.find("dice_average") != std::string::npos);
  CHECK(text.find("overlap_step") != std::string::npos);  // the failed rows carry the error
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("sweep_patch_size: rejects a size that is not a multiple of 4") {
  auto [vol, labels] = generate_phantom(4, {16, 16, 16});
  TrainConfig cfg;
  cfg.base_width = 4;
  cfg.batch_size = 1;
  cfg.steps = 2;
  cfg.out_dir = temp_dir("nlunet_sweep_patch");
  auto rows = sweep_patch_size(cfg, vol, labels, vol, labels, {8, 17}, {1, 2, 3});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].ok);
  CHECK_FALSE(rows[1].ok);
  CHECK(rows[1].error.find("multiple of 4") != std::string::npos);
  fs::remove_all(cfg.out_dir);
}
