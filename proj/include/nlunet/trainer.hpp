#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nlunet/metrics.hpp"
#include "nlunet/network.hpp"
#include "nlunet/patches.hpp"
#include "nlunet/volume.hpp"

namespace nlunet {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 2e-6;
};

// First/second moment buffers mirror the parameter list by index; t counts
// completed steps and drives the bias correction.
template <typename T>
struct AdamStateT {
  AdamConfig cfg;
  int64_t t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};
using AdamState = AdamStateT<float>;

// One Adam update with classic L2 coupling: g' = g + weight_decay * theta
// enters both moments. Every parameter must have a gradient.
template <typename T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>*>>& params,
               AdamStateT<T>& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].second->numel(), T(0));
      state.v[i].assign(params[i].second->numel(), T(0));
    }
  }
  if (state.m.size() != params.size())
    throw ContractError("adam_step: parameter list changed size");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(state.cfg.beta1);
  const T b2 = static_cast<T>(state.cfg.beta2);
  const T wd = static_cast<T>(state.cfg.weight_decay);

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].second;
    if (!p.has_grad())
      throw ContractError("adam_step: parameter '" + params[i].first + "' has no gradient");
    const int64_t n = p.numel();
    T* theta = p.data();
    const T* g0 = p.grad_data().data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (int64_t j = 0; j < n; ++j) {
      const T g = g0[j] + wd * theta[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] -= static_cast<T>(state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.epsilon));
    }
  }
}

void adam_step(Network<float>& net, AdamState& state);

struct TrainConfig {
  std::string model = "full";  // 1..5 or full
  int64_t base_width = 32;
  int64_t batch_size = 5;
  int64_t patch_size = 32;
  int64_t steps = 1000;
  uint64_t seed = 0;
  double lr = 0.001;
  double weight_decay = 2e-6;
  double dropout = 0.5;
  int64_t log_every = 10;
  int64_t checkpoint_every = 0;  // 0: only at the end
  int64_t val_every = 0;         // 0: no validation during training
  int64_t val_overlap_step = 16;
  int64_t attention_budget = int64_t(1) << 31;
  std::string out_dir = ".";

  void validate() const;
  NetworkConfig network_config() const;
};

struct TrainResult {
  double initial_loss = 0;
  double final_loss = 0;
  std::string checkpoint_path;
  std::string log_path;
  std::vector<std::pair<int64_t, double>> losses;  // every logged (step, loss)
};

// Sampled-patch training loop: sample batch -> forward (train mode) ->
// cross-entropy -> backward -> adam. Writes an append-only loss log
// ("step<TAB>loss[<TAB>val_DR]") and a checkpoint. A non-finite loss aborts
// with the step index; the last written checkpoint stays on disk.
TrainResult train(const TrainConfig& cfg, const Volume& train_vol, const LabelVolume& train_labels,
                  const Volume* val_vol = nullptr, const LabelVolume* val_labels = nullptr);

struct InferResult {
  Volume probabilities;  // [D,H,W,K], voxel rows on the simplex
  LabelVolume labels;
};

// Eval-mode forward over every sliding window, probability averaging over
// overlaps, then argmax. With threads > 1 the patch forwards run in
// parallel; accumulation happens in patch order either way, so the stitched
// output is bitwise independent of the thread count.
InferResult infer(Network<float>& net, const Volume& vol, const PatchSpec& spec, int threads = 1);

struct SweepRow {
  int64_t value = 0;
  bool ok = false;
  std::string error;
  int64_t patch_count = 0;
  SegmentationReport report;
};

// Evaluation per overlap step on a fixed trained network.
std::vector<SweepRow> sweep_overlap(Network<float>& net, const Volume& vol,
                                    const LabelVolume& truth, const std::vector<int64_t>& values,
                                    int64_t patch_size, const std::vector<int>& class_ids);

// Train + evaluate per patch size. Each run uses cfg with the patch size
// substituted; failures (e.g. a size not divisible by 4) are recorded and
// the sweep continues.
std::vector<SweepRow> sweep_patch_size(const TrainConfig& cfg, const Volume& train_vol,
                                       const LabelVolume& train_labels, const Volume& val_vol,
                                       const LabelVolume& val_labels,
                                       const std::vector<int64_t>& values,
                                       const std::vector<int>& class_ids);

// Tab-separated table plus a plot-ready two-column file (value, average DR).
void write_sweep_table(const std::vector<SweepRow>& rows, const std::vector<int>& class_ids,
                       const std::string& table_path, const std::string& plot_path);

}  // namespace nlunet
