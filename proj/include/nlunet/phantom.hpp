#pragma once

#include <cstdint>
#include <utility>

#include "nlunet/volume.hpp"

namespace nlunet {

// Class-conditional intensity means per channel. The two channels order the
// tissue classes differently, and the two inner classes sit close together
// in both, so no single channel separates everything.
struct PhantomIntensityModel {
  // index: [channel][class], classes = {background, rim, band, core}
  double mean[2][4] = {{0.10, 0.30, 0.65, 0.80},
                       {0.10, 0.85, 0.60, 0.45}};
};

// Deterministic labeled test volume: nested smooth blobs (background shell,
// rim, band, core) with two intensity channels, a smooth bias field and
// Gaussian noise. Every class occupies at least 1% of the voxels.
std::pair<Volume, LabelVolume> generate_phantom(uint64_t seed, const Dims3& dims,
                                                int num_classes = 4, double noise_level = 0.05);

}  // namespace nlunet
