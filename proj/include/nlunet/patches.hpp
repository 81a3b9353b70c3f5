#pragma once

#include <cstdint>
#include <vector>

#include "nlunet/rng.hpp"
#include "nlunet/volume.hpp"

namespace nlunet {

// Sliding-window parameters: cubic patch of extent `patch_size`, window
// stride `overlap_step` with 1 <= overlap_step <= patch_size.
struct PatchSpec {
  int64_t patch_size = 32;
  int64_t overlap_step = 8;
};

// Window corners covering the whole volume: per axis 0, t, 2t, ... plus a
// final window clamped to dim - s when the stride does not land there.
// Corners come out in D-major order.
std::vector<Dims3> sliding_positions(const Dims3& dims, int64_t patch_size, int64_t overlap_step);

// One aligned (intensity, label) training crop.
struct Patch {
  Dims3 corner{0, 0, 0};
  int64_t size = 0;
  std::vector<float> intensities;  // [s,s,s,C]
  std::vector<uint8_t> labels;     // [s,s,s]
};

// n crops at uniform-random corners fully inside the volume.
std::vector<Patch> sample_patches(const Volume& vol, const LabelVolume& labels, int64_t n,
                                  int64_t patch_size, Rng& rng);

// Copy helpers used by both training and inference.
void extract_intensities(const Volume& vol, const Dims3& corner, int64_t size, float* dst);
void extract_labels(const LabelVolume& vol, const Dims3& corner, int64_t size, uint8_t* dst);

// Per-patch class probabilities aligned at `corner`.
struct ProbPatch {
  Dims3 corner{0, 0, 0};
  int64_t size = 0;
  std::vector<float> probs;  // [s,s,s,K]
};

// Voxelwise mean of all patch probability vectors covering each position.
// Every voxel must be covered by at least one patch. The result is a
// K-channel volume whose rows stay on the probability simplex.
Volume stitch(const std::vector<ProbPatch>& patches, const Dims3& dims, int64_t num_classes);

// Per-voxel argmax; ties break toward the lowest class index.
LabelVolume argmax_labels(const Volume& probs);

}  // namespace nlunet
