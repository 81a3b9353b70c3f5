#include "nlunet/patches.hpp"

#include <cmath>

#include "nlunet/error.hpp"

namespace nlunet {

std::vector<Dims3> sliding_positions(const Dims3& dims, int64_t patch_size, int64_t overlap_step) {
  if (overlap_step < 1 || overlap_step > patch_size)
    throw ConfigError("sliding_positions: need 1 <= overlap_step <= patch_size, got step " +
                      std::to_string(overlap_step) + " and patch " + std::to_string(patch_size));
  for (int a = 0; a < 3; ++a)
    if (patch_size > dims[a])
      throw ConfigError("sliding_positions: patch " + std::to_string(patch_size) +
                        " exceeds volume dims " + dims_str(dims));

  std::array<std::vector<int64_t>, 3> offsets;
  for (int a = 0; a < 3; ++a) {
    const int64_t last = dims[a] - patch_size;
    for (int64_t o = 0; o <= last; o += overlap_step) offsets[a].push_back(o);
    if (offsets[a].back() != last) offsets[a].push_back(last);
  }
  std::vector<Dims3> corners;
  corners.reserve(offsets[0].size() * offsets[1].size() * offsets[2].size());
  for (int64_t d : offsets[0])
    for (int64_t h : offsets[1])
      for (int64_t w : offsets[2]) corners.push_back({d, h, w});
  return corners;
}

void extract_intensities(const Volume& vol, const Dims3& corner, int64_t size, float* dst) {
  const int64_t C = vol.channels;
  for (int64_t d = 0; d < size; ++d)
    for (int64_t h = 0; h < size; ++h) {
      const float* src = &vol.data[(((corner[0] + d) * vol.dims[1] + corner[1] + h) * vol.dims[2] +
                                    corner[2]) *
                                   C];
      float* out = dst + ((d * size + h) * size) * C;
      for (int64_t i = 0; i < size * C; ++i) out[i] = src[i];
    }
}

void extract_labels(const LabelVolume& vol, const Dims3& corner, int64_t size, uint8_t* dst) {
  for (int64_t d = 0; d < size; ++d)
    for (int64_t h = 0; h < size; ++h) {
      const uint8_t* src = &vol.labels[((corner[0] + d) * vol.dims[1] + corner[1] + h) *
                                           vol.dims[2] +
                                       corner[2]];
      uint8_t* out = dst + (d * size + h) * size;
      for (int64_t i = 0; i < size; ++i) out[i] = src[i];
    }
}

std::vector<Patch> sample_patches(const Volume& vol, const LabelVolume& labels, int64_t n,
                                  int64_t patch_size, Rng& rng) {
  if (vol.dims != labels.dims)
    throw DataError("sample_patches: volume " + dims_str(vol.dims) + " vs labels " +
                    dims_str(labels.dims));
  for (int a = 0; a < 3; ++a)
    if (patch_size > vol.dims[a])
      throw ConfigError("sample_patches: patch " + std::to_string(patch_size) +
                        " exceeds volume dims " + dims_str(vol.dims));
  std::vector<Patch> out;
  out.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    Patch p;
    p.size = patch_size;
    for (int a = 0; a < 3; ++a) p.corner[a] = rng.uniform_int(vol.dims[a] - patch_size + 1);
    p.intensities.resize(patch_size * patch_size * patch_size * vol.channels);
    p.labels.resize(patch_size * patch_size * patch_size);
    extract_intensities(vol, p.corner, patch_size, p.intensities.data());
    extract_labels(labels, p.corner, patch_size, p.labels.data());
    out.push_back(std::move(p));
  }
  return out;
}

Volume stitch(const std::vector<ProbPatch>& patches, const Dims3& dims, int64_t num_classes) {
  Volume out;
  out.dims = dims;
  out.channels = num_classes;
  out.data.assign(out.numel(), 0.f);
  std::vector<int32_t> cover(dims_numel(dims), 0);

  for (const ProbPatch& p : patches) {
    const int64_t s = p.size;
    for (int a = 0; a < 3; ++a)
      if (p.corner[a] < 0 || p.corner[a] + s > dims[a])
        throw ContractError("stitch: patch at " + dims_str(p.corner) + " size " +
                            std::to_string(s) + " runs outside " + dims_str(dims));
    for (int64_t d = 0; d < s; ++d)
      for (int64_t h = 0; h < s; ++h)
        for (int64_t w = 0; w < s; ++w) {
          const int64_t vox =
              ((p.corner[0] + d) * dims[1] + p.corner[1] + h) * dims[2] + p.corner[2] + w;
          const float* src = &p.probs[((d * s + h) * s + w) * num_classes];
          float* dst = &out.data[vox * num_classes];
          for (int64_t k = 0; k < num_classes; ++k) dst[k] += src[k];
          ++cover[vox];
        }
  }

  for (int64_t vox = 0; vox < dims_numel(dims); ++vox) {
    if (cover[vox] == 0)
      throw ContractError("stitch: voxel " + std::to_string(vox) +
                          " is not covered by any patch");
    const float inv = 1.f / static_cast<float>(cover[vox]);
    for (int64_t k = 0; k < num_classes; ++k) out.data[vox * num_classes + k] *= inv;
  }
  return out;
}

LabelVolume argmax_labels(const Volume& probs) {
  LabelVolume out;
  out.dims = probs.dims;
  out.labels.resize(dims_numel(probs.dims));
  const int64_t K = probs.channels;
  for (int64_t vox = 0; vox < out.numel(); ++vox) {
    const float* row = &probs.data[vox * K];
    int best = 0;
    for (int64_t k = 1; k < K; ++k)
      if (row[k] > row[best]) best = static_cast<int>(k);
    out.labels[vox] = static_cast<uint8_t>(best);
  }
  return out;
}

}  // namespace nlunet
