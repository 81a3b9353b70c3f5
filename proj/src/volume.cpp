#include "nlunet/volume.hpp"

#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nlunet/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "volume payloads are little-endian; big-endian hosts are not supported");

namespace nlunet {

void normalize_volume(Volume& vol) {
  const int64_t n = dims_numel(vol.dims);
  if (n == 0) throw DataError("normalize_volume: empty volume");
  vol.channel_mean.assign(vol.channels, 0.f);
  vol.channel_std.assign(vol.channels, 0.f);
  for (int64_t c = 0; c < vol.channels; ++c) {
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += vol.data[i * vol.channels + c];
    const double mean = acc / static_cast<double>(n);
    double vacc = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = vol.data[i * vol.channels + c] - mean;
      vacc += d * d;
    }
    const double std = std::sqrt(vacc / static_cast<double>(n));
    const double inv = std > 0 ? 1.0 / std : 1.0;
    for (int64_t i = 0; i < n; ++i)
      vol.data[i * vol.channels + c] =
          static_cast<float>((vol.data[i * vol.channels + c] - mean) * inv);
    vol.channel_mean[c] = static_cast<float>(mean);
    vol.channel_std[c] = static_cast<float>(std);
  }
}

namespace {

constexpr const char* kFormat = "nlvol-v1";

void write_payload(const std::string& path, const void* data, size_t bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw DataError("short write to '" + path + "'");
}

std::vector<char> read_payload(const std::string& path, size_t expected_bytes) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("cannot open payload '" + path + "'");
  const auto actual = static_cast<size_t>(f.tellg());
  if (actual != expected_bytes)
    throw DataError("payload '" + path + "' has " + std::to_string(actual) +
                    " bytes, header declares " + std::to_string(expected_bytes));
  f.seekg(0);
  std::vector<char> buf(expected_bytes);
  f.read(buf.data(), static_cast<std::streamsize>(expected_bytes));
  if (!f) throw DataError("short read from '" + path + "'");
  return buf;
}

struct Header {
  std::string kind;
  Dims3 dims{0, 0, 0};
  int64_t channels = 1;
  std::string dtype;
  std::vector<float> channel_mean, channel_std;
};

Header read_header(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open volume header '" + path + "'");
  Header h;
  bool saw_format = false, saw_dims = false, saw_dtype = false;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string v;
      ls >> v;
      if (v != kFormat)
        throw DataError("'" + path + "': unsupported format '" + v + "'");
      saw_format = true;
    } else if (key == "kind") {
      ls >> h.kind;
    } else if (key == "dims") {
      if (!(ls >> h.dims[0] >> h.dims[1] >> h.dims[2]) || h.dims[0] <= 0 || h.dims[1] <= 0 ||
          h.dims[2] <= 0)
        throw DataError("'" + path + "': malformed dims line '" + line + "'");
      saw_dims = true;
    } else if (key == "channels") {
      if (!(ls >> h.channels) || h.channels <= 0)
        throw DataError("'" + path + "': malformed channels line '" + line + "'");
    } else if (key == "dtype") {
      ls >> h.dtype;
      saw_dtype = true;
    } else if (key == "order") {
      std::string v;
      ls >> v;
      if (v != "d-major") throw DataError("'" + path + "': unsupported order '" + v + "'");
    } else if (key == "channel_mean" || key == "channel_std") {
      auto& dst = key == "channel_mean" ? h.channel_mean : h.channel_std;
      float v;
      while (ls >> v) dst.push_back(v);
    } else {
      throw DataError("'" + path + "': unknown header key '" + key + "'");
    }
  }
  if (!saw_format) throw DataError("'" + path + "': missing format line");
  if (!saw_dims) throw DataError("'" + path + "': missing dims line");
  if (!saw_dtype) throw DataError("'" + path + "': missing dtype line");
  return h;
}

// 9 significant digits round-trip a float exactly through decimal text.
std::string float_list(const std::vector<float>& v) {
  std::string s;
  char buf[64];
  for (float x : v) {
    std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(x));
    s += buf;
  }
  return s;
}

}  // namespace

void write_volume(const Volume& vol, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << "format " << kFormat << "\n"
    << "kind intensity\n"
    << "dims " << vol.dims[0] << ' ' << vol.dims[1] << ' ' << vol.dims[2] << "\n"
    << "channels " << vol.channels << "\n"
    << "dtype f32\n"
    << "order d-major\n";
  if (!vol.channel_mean.empty()) f << "channel_mean" << float_list(vol.channel_mean) << "\n";
  if (!vol.channel_std.empty()) f << "channel_std" << float_list(vol.channel_std) << "\n";
  f.close();
  write_payload(path + ".raw", vol.data.data(), vol.data.size() * sizeof(float));
}

Volume read_volume(const std::string& path) {
  Header h = read_header(path);
  if (h.kind != "intensity")
    throw DataError("'" + path + "': expected kind intensity, got '" + h.kind + "'");
  if (h.dtype != "f32") throw DataError("'" + path + "': expected dtype f32, got '" + h.dtype + "'");
  Volume vol;
  vol.dims = h.dims;
  vol.channels = h.channels;
  vol.channel_mean = h.channel_mean;
  vol.channel_std = h.channel_std;
  const size_t n = static_cast<size_t>(vol.numel());
  auto buf = read_payload(path + ".raw", n * sizeof(float));
  vol.data.resize(n);
  std::memcpy(vol.data.data(), buf.data(), buf.size());
  return vol;
}

void write_labels(const LabelVolume& vol, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << "format " << kFormat << "\n"
    << "kind labels\n"
    << "dims " << vol.dims[0] << ' ' << vol.dims[1] << ' ' << vol.dims[2] << "\n"
    << "channels 1\n"
    << "dtype u8\n"
    << "order d-major\n";
  f.close();
  write_payload(path + ".raw", vol.labels.data(), vol.labels.size());
}

LabelVolume read_labels(const std::string& path) {
  Header h = read_header(path);
  if (h.kind != "labels")
    throw DataError("'" + path + "': expected kind labels, got '" + h.kind + "'");
  if (h.dtype != "u8") throw DataError("'" + path + "': expected dtype u8, got '" + h.dtype + "'");
  if (h.channels != 1) throw DataError("'" + path + "': label volumes have 1 channel");
  LabelVolume vol;
  vol.dims = h.dims;
  const size_t n = static_cast<size_t>(vol.numel());
  auto buf = read_payload(path + ".raw", n);
  vol.labels.resize(n);
  std::memcpy(vol.labels.data(), buf.data(), n);
  return vol;
}

}  // namespace nlunet
