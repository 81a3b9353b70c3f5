#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace nlunet {

using Dims3 = std::array<int64_t, 3>;  // D, H, W

inline int64_t dims_numel(const Dims3& d) { return d[0] * d[1] * d[2]; }
inline std::string dims_str(const Dims3& d) {
  return "[" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + "]";
}

// Multi-channel intensity volume, layout [D,H,W,C] with C fastest.
struct Volume {
  Dims3 dims{0, 0, 0};
  int64_t channels = 1;
  std::vector<float> data;
  // Per-channel stats recorded by normalize(); empty before that.
  std::vector<float> channel_mean;
  std::vector<float> channel_std;

  int64_t numel() const { return dims_numel(dims) * channels; }
  float& at(int64_t d, int64_t h, int64_t w, int64_t c) {
    return data[((d * dims[1] + h) * dims[2] + w) * channels + c];
  }
  float at(int64_t d, int64_t h, int64_t w, int64_t c) const {
    return data[((d * dims[1] + h) * dims[2] + w) * channels + c];
  }
};

// Per-voxel class labels in {0..K-1}.
struct LabelVolume {
  Dims3 dims{0, 0, 0};
  std::vector<uint8_t> labels;

  int64_t numel() const { return dims_numel(dims); }
  uint8_t& at(int64_t d, int64_t h, int64_t w) {
    return labels[(d * dims[1] + h) * dims[2] + w];
  }
  uint8_t at(int64_t d, int64_t h, int64_t w) const {
    return labels[(d * dims[1] + h) * dims[2] + w];
  }
};

// Per-volume, per-channel z-score; records the stats on the volume.
void normalize_volume(Volume& vol);

// Text header at `path` plus raw little-endian payload at `path + ".raw"`.
void write_volume(const Volume& vol, const std::string& path);
Volume read_volume(const std::string& path);
void write_labels(const LabelVolume& vol, const std::string& path);
LabelVolume read_labels(const std::string& path);

}  // namespace nlunet
