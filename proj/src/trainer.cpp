#include "nlunet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "nlunet/checkpoint.hpp"

namespace nlunet {

void adam_step(Network<float>& net, AdamState& state) {
  std::vector<std::pair<std::string, Tensor<float>*>> params;
  visit_params(net, [&](const std::string& name, Tensor<float>& t) {
    params.emplace_back(name, &t);
  });
  adam_step(params, state);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (patch_size < 4 || patch_size % 4 != 0)
    throw ConfigError("train: patch_size must be a positive multiple of 4, got " +
                      std::to_string(patch_size));
  if (steps < 1) throw ConfigError("train: steps must be >= 1");
  if (lr <= 0) throw ConfigError("train: lr must be positive");
  if (dropout < 0 || dropout >= 1) throw ConfigError("train: dropout must be in [0, 1)");
}

NetworkConfig TrainConfig::network_config() const {
  NetworkConfig base;
  base.base_width = base_width;
  base.dropout_rate = dropout;
  base.attention_budget = attention_budget;
  return make_ablation(model, base);
}

namespace {

// Batch tensor [B,s,s,s,C] + labels from sampled corners.
void fill_batch(const Volume& vol, const LabelVolume& labels, const std::vector<Dims3>& corners,
                int64_t s, Tensor<float>& x, std::vector<uint8_t>& y) {
  const int64_t voxels = s * s * s;
  for (size_t b = 0; b < corners.size(); ++b) {
    extract_intensities(vol, corners[b], s, x.data() + b * voxels * vol.channels);
    extract_labels(labels, corners[b], s, y.data() + b * voxels);
  }
}

double validation_dice(Network<float>& net, const Volume& vol, const LabelVolume& truth,
                       const PatchSpec& spec) {
  InferResult r = infer(net, vol, spec);
  SegmentationReport rep = evaluate(r.labels, truth, {1, 2, 3});
  return rep.average_dice;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Volume& train_vol, const LabelVolume& train_labels,
                  const Volume* val_vol, const LabelVolume* val_labels) {
  cfg.validate();
  if (train_vol.dims != train_labels.dims)
    throw DataError("train: volume " + dims_str(train_vol.dims) + " vs labels " +
                    dims_str(train_labels.dims));
  for (int a = 0; a < 3; ++a)
    if (cfg.patch_size > train_vol.dims[a])
      throw ConfigError("train: patch_size " + std::to_string(cfg.patch_size) +
                        " exceeds volume dims " + dims_str(train_vol.dims));

  Volume vol = train_vol;
  normalize_volume(vol);
  Volume vvol;
  if (val_vol) {
    vvol = *val_vol;
    normalize_volume(vvol);
  }

  NetworkConfig net_cfg = cfg.network_config();
  net_cfg.in_channels = vol.channels;
  Network<float> net = build_network<float>(net_cfg, cfg.seed);

  AdamState adam;
  adam.cfg.lr = cfg.lr;
  adam.cfg.weight_decay = cfg.weight_decay;

  // Distinct streams for patch sampling and dropout, both derived from the
  // config seed, so the log is a pure function of (config, seed).
  Rng sample_rng(cfg.seed ^ 0x736c6964696e67ull);
  Rng dropout_rng(cfg.seed ^ 0x64726f706f7574ull);

  std::filesystem::create_directories(cfg.out_dir);
  const std::string log_path = cfg.out_dir + "/loss.log";
  const std::string ckpt_path = cfg.out_dir + "/checkpoint.json";
  std::ofstream log(log_path);
  if (!log) throw DataError("cannot open '" + log_path + "' for writing");

  TrainResult result;
  result.checkpoint_path = ckpt_path;
  result.log_path = log_path;

  const int64_t s = cfg.patch_size;
  const int64_t voxels = s * s * s;
  char line[160];

  for (int64_t step = 1; step <= cfg.steps; ++step) {
    std::vector<Dims3> corners(cfg.batch_size);
    for (auto& c : corners)
      for (int a = 0; a < 3; ++a) c[a] = sample_rng.uniform_int(vol.dims[a] - s + 1);

    Tensor<float> x = Tensor<float>::zeros({cfg.batch_size, s, s, s, vol.channels});
    std::vector<uint8_t> y(cfg.batch_size * voxels);
    fill_batch(vol, train_labels, corners, s, x, y);

    Tensor<float> logits = forward(net, x, Mode::train, &dropout_rng);
    Tensor<float> loss = cross_entropy(logits, y);
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) {
      log.flush();
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         "; last checkpoint kept at " + ckpt_path);
    }
    backward(loss);
    adam_step(net, adam);
    zero_all_grads(net);

    if (step == 1) result.initial_loss = loss_value;
    result.final_loss = loss_value;

    const bool log_this = step == 1 || step % cfg.log_every == 0 || step == cfg.steps;
    const bool val_this = cfg.val_every > 0 && val_vol && step % cfg.val_every == 0;
    if (log_this || val_this) {
      result.losses.emplace_back(step, loss_value);
      if (val_this) {
        const double vd =
            validation_dice(net, vvol, *val_labels, {cfg.patch_size, cfg.val_overlap_step});
        std::snprintf(line, sizeof line, "%lld\t%.9g\t%.9g\n",
                      static_cast<long long>(step), loss_value, vd);
      } else {
        std::snprintf(line, sizeof line, "%lld\t%.9g\n", static_cast<long long>(step),
                      loss_value);
      }
      log << line;
      log.flush();
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      save_checkpoint(net, ckpt_path);
  }
  save_checkpoint(net, ckpt_path);
  return result;
}

InferResult infer(Network<float>& net, const Volume& vol, const PatchSpec& spec, int threads) {
  if (vol.channels != net.cfg.in_channels)
    throw DataError("infer: volume has " + std::to_string(vol.channels) +
                    " channels, network expects " + std::to_string(net.cfg.in_channels));
  Volume nvol = vol;
  normalize_volume(nvol);

  const int64_t s = spec.patch_size;
  const int64_t K = net.cfg.num_classes;
  const std::vector<Dims3> corners = sliding_positions(nvol.dims, s, spec.overlap_step);

  std::vector<ProbPatch> patches(corners.size());
  auto run_range = [&](size_t begin, size_t end) {
    NoGradGuard ng;
    for (size_t i = begin; i < end; ++i) {
      Tensor<float> x = Tensor<float>::zeros({1, s, s, s, nvol.channels});
      extract_intensities(nvol, corners[i], s, x.data());
      Tensor<float> probs = softmax_lastdim(forward(net, x, Mode::eval));
      patches[i].corner = corners[i];
      patches[i].size = s;
      patches[i].probs = probs.data_vec();
    }
  };

  if (threads <= 1) {
    run_range(0, patches.size());
  } else {
    // Eval-mode forward never mutates the network, so worker threads share
    // it read-only; results land in per-patch slots and stitching below
    // consumes them in index order.
    std::vector<std::thread> pool;
    const size_t n = patches.size();
    const size_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const size_t begin = std::min(n, static_cast<size_t>(t) * chunk);
      const size_t end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(run_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  InferResult result;
  result.probabilities = stitch(patches, nvol.dims, K);
  result.labels = argmax_labels(result.probabilities);
  return result;
}

std::vector<SweepRow> sweep_overlap(Network<float>& net, const Volume& vol,
                                    const LabelVolume& truth, const std::vector<int64_t>& values,
                                    int64_t patch_size, const std::vector<int>& class_ids) {
  std::vector<SweepRow> rows;
  for (int64_t t : values) {
    SweepRow row;
    row.value = t;
    try {
      const auto corners = sliding_positions(vol.dims, patch_size, t);
      row.patch_count = static_cast<int64_t>(corners.size());
      InferResult r = infer(net, vol, {patch_size, t});
      row.report = evaluate(r.labels, truth, class_ids);
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> sweep_patch_size(const TrainConfig& cfg, const Volume& train_vol,
                                       const LabelVolume& train_labels, const Volume& val_vol,
                                       const LabelVolume& val_labels,
                                       const std::vector<int64_t>& values,
                                       const std::vector<int>& class_ids) {
  std::vector<SweepRow> rows;
  for (int64_t s : values) {
    SweepRow row;
    row.value = s;
    try {
      TrainConfig run = cfg;
      run.patch_size = s;
      run.out_dir = cfg.out_dir + "/patch" + std::to_string(s);
      train(run, train_vol, train_labels);
      Network<float> net = load_checkpoint(run.out_dir + "/checkpoint.json");
      const int64_t t = std::min<int64_t>(cfg.val_overlap_step, s);
      row.patch_count =
          static_cast<int64_t>(sliding_positions(val_vol.dims, s, t).size());
      InferResult r = infer(net, val_vol, {s, t});
      row.report = evaluate(r.labels, val_labels, class_ids);
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_table(const std::vector<SweepRow>& rows, const std::vector<int>& class_ids,
                       const std::string& table_path, const std::string& plot_path) {
  std::ofstream table(table_path);
  if (!table) throw DataError("cannot open '" + table_path + "' for writing");
  std::ofstream plot(plot_path);
  if (!plot) throw DataError("cannot open '" + plot_path + "' for writing");

  table << "value\tpatch_count";
  for (int id : class_ids) table << "\tdice_class" << id;
  table << "\tdice_average\terror\n";
  plot << "# value\tdice_average\n";

  char buf[64];
  for (const SweepRow& row : rows) {
    table << row.value << '\t' << row.patch_count;
    if (row.ok) {
      for (const ClassMetrics& cm : row.report.classes) {
        std::snprintf(buf, sizeof buf, "\t%.9g", cm.defined ? cm.dice : 0.0);
        table << buf;
      }
      std::snprintf(buf, sizeof buf, "\t%.9g", row.report.average_dice);
      table << buf << "\t-\n";
      std::snprintf(buf, sizeof buf, "%lld\t%.9g\n", static_cast<long long>(row.value),
                    row.report.average_dice);
      plot << buf;
    } else {
      for (size_t i = 0; i < class_ids.size() + 1; ++i) table << "\t-";
      table << '\t' << row.error << '\n';
    }
  }
}

}  // namespace nlunet
