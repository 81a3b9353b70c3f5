#include "nlunet/phantom.hpp"

#include <cmath>

#include "nlunet/error.hpp"
#include "nlunet/rng.hpp"

namespace nlunet {

namespace {

// Coarse grid of normal draws, trilinearly upsampled: a cheap smooth field.
struct SmoothField {
  Dims3 dims;
  int64_t coarse;
  std::vector<double> grid;  // [coarse+1]^3

  SmoothField(Rng& rng, const Dims3& d, int64_t coarse_n, double amplitude)
      : dims(d), coarse(coarse_n), grid((coarse_n + 1) * (coarse_n + 1) * (coarse_n + 1)) {
    for (auto& v : grid) v = rng.normal() * amplitude;
  }

  double at(int64_t d, int64_t h, int64_t w) const {
    auto axis = [&](int64_t i, int64_t extent, int64_t* lo, double* frac) {
      const double t = extent > 1
                           ? static_cast<double>(i) / static_cast<double>(extent - 1) *
                                 static_cast<double>(coarse)
                           : 0.0;
      *lo = std::min(static_cast<int64_t>(t), coarse - 1);
      *frac = t - static_cast<double>(*lo);
    };
    int64_t d0, h0, w0;
    double fd, fh, fw;
    axis(d, dims[0], &d0, &fd);
    axis(h, dims[1], &h0, &fh);
    axis(w, dims[2], &w0, &fw);
    const int64_t n = coarse + 1;
    auto g = [&](int64_t a, int64_t b, int64_t c) { return grid[(a * n + b) * n + c]; };
    auto lerp = [](double x, double y, double t) { return x + (y - x) * t; };
    const double c00 = lerp(g(d0, h0, w0), g(d0, h0, w0 + 1), fw);
    const double c01 = lerp(g(d0, h0 + 1, w0), g(d0, h0 + 1, w0 + 1), fw);
    const double c10 = lerp(g(d0 + 1, h0, w0), g(d0 + 1, h0, w0 + 1), fw);
    const double c11 = lerp(g(d0 + 1, h0 + 1, w0), g(d0 + 1, h0 + 1, w0 + 1), fw);
    return lerp(lerp(c00, c01, fh), lerp(c10, c11, fh), fd);
  }
};

}  // namespace

std::pair<Volume, LabelVolume> generate_phantom(uint64_t seed, const Dims3& dims, int num_classes,
                                                double noise_level) {
  if (num_classes != 4)
    throw ConfigError("generate_phantom: this generator produces exactly 4 classes");
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 8)
      throw ConfigError("generate_phantom: dims must be at least 8 per axis, got " +
                        dims_str(dims));
  if (noise_level < 0) throw ConfigError("generate_phantom: noise_level must be >= 0");

  Rng rng(seed);

  // Ellipsoid radii with a little per-axis jitter, plus a smooth warp of the
  // normalized radius so the class shells are blobs rather than spheres.
  double radius[3];
  for (int a = 0; a < 3; ++a)
    radius[a] = 0.46 * static_cast<double>(dims[a]) * rng.uniform(0.9, 1.0);
  SmoothField warp(rng, dims, 4, 0.06);
  SmoothField bias0(rng, dims, 4, 0.04);
  SmoothField bias1(rng, dims, 4, 0.04);

  // Normalized-radius thresholds for core / band / rim / background.
  const double t_core = 0.55, t_band = 0.78, t_rim = 0.95;

  const int64_t D = dims[0], H = dims[1], W = dims[2];
  const double cd = 0.5 * static_cast<double>(D - 1);
  const double ch = 0.5 * static_cast<double>(H - 1);
  const double cw = 0.5 * static_cast<double>(W - 1);

  LabelVolume labels;
  labels.dims = dims;
  labels.labels.resize(dims_numel(dims));
  for (int64_t d = 0; d < D; ++d)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        const double rd = (static_cast<double>(d) - cd) / radius[0];
        const double rh = (static_cast<double>(h) - ch) / radius[1];
        const double rw = (static_cast<double>(w) - cw) / radius[2];
        const double rho = std::sqrt(rd * rd + rh * rh + rw * rw) + warp.at(d, h, w);
        uint8_t cls = 0;
        if (rho < t_core)
          cls = 3;
        else if (rho < t_band)
          cls = 2;
        else if (rho < t_rim)
          cls = 1;
        labels.at(d, h, w) = cls;
      }

  const PhantomIntensityModel model;
  Volume vol;
  vol.dims = dims;
  vol.channels = 2;
  vol.data.resize(dims_numel(dims) * 2);
  for (int64_t d = 0; d < D; ++d)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        const uint8_t cls = labels.at(d, h, w);
        const double b0 = bias0.at(d, h, w);
        const double b1 = bias1.at(d, h, w);
        vol.at(d, h, w, 0) =
            static_cast<float>(model.mean[0][cls] + b0 + noise_level * rng.normal());
        vol.at(d, h, w, 1) =
            static_cast<float>(model.mean[1][cls] + b1 + noise_level * rng.normal());
      }

  // Geometry sanity: every class must cover at least 1% of the voxels.
  int64_t hist[4] = {0, 0, 0, 0};
  for (uint8_t l : labels.labels) ++hist[l];
  for (int c = 0; c < 4; ++c)
    if (hist[c] * 100 < labels.numel())
      throw ConfigError("generate_phantom: class " + std::to_string(c) + " covers only " +
                        std::to_string(hist[c]) + "/" + std::to_string(labels.numel()) +
                        " voxels; dims " + dims_str(dims) + " are too small");

  return {std::move(vol), std::move(labels)};
}

}  // namespace nlunet
