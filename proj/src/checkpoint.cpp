#include "nlunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are not supported");

namespace nlunet {

using nlohmann::json;

namespace {

json config_to_json(const NetworkConfig& cfg) {
  return json{
      {"in_channels", cfg.in_channels},
      {"num_classes", cfg.num_classes},
      {"base_width", cfg.base_width},
      {"num_scales", cfg.num_scales},
      {"bottom_kind", cfg.bottom_kind == BottomKind::conv ? "conv" : "aggregation"},
      {"upsample_kind",
       cfg.upsample_kind == UpsampleKind::deconv ? "deconv" : "aggregation-deconv"},
      {"short_residuals", cfg.short_residuals},
      {"first_up_only_aggregation", cfg.first_up_only_aggregation},
      {"dropout_rate", cfg.dropout_rate},
      {"bn_momentum", cfg.bn_momentum},
      {"bn_epsilon", cfg.bn_epsilon},
      {"attention_budget", cfg.attention_budget},
  };
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig cfg;
  cfg.in_channels = j.at("in_channels").get<int64_t>();
  cfg.num_classes = j.at("num_classes").get<int64_t>();
  cfg.base_width = j.at("base_width").get<int64_t>();
  cfg.num_scales = j.at("num_scales").get<int64_t>();
  const std::string bottom = j.at("bottom_kind").get<std::string>();
  if (bottom == "conv")
    cfg.bottom_kind = BottomKind::conv;
  else if (bottom == "aggregation")
    cfg.bottom_kind = BottomKind::aggregation;
  else
    throw DataError("checkpoint: unknown bottom_kind '" + bottom + "'");
  const std::string up = j.at("upsample_kind").get<std::string>();
  if (up == "deconv")
    cfg.upsample_kind = UpsampleKind::deconv;
  else if (up == "aggregation-deconv")
    cfg.upsample_kind = UpsampleKind::aggregation_deconv;
  else
    throw DataError("checkpoint: unknown upsample_kind '" + up + "'");
  cfg.short_residuals = j.at("short_residuals").get<bool>();
  cfg.first_up_only_aggregation = j.at("first_up_only_aggregation").get<bool>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  cfg.bn_momentum = j.at("bn_momentum").get<double>();
  cfg.bn_epsilon = j.at("bn_epsilon").get<double>();
  cfg.attention_budget = j.at("attention_budget").get<int64_t>();
  return cfg;
}

struct Entry {
  std::string name;
  std::string kind;
  Tensor<float>* tensor;
};

std::vector<Entry> all_entries(Network<float>& net) {
  std::vector<Entry> entries;
  visit_params(net, [&](const std::string& name, Tensor<float>& t) {
    entries.push_back({name, "param", &t});
  });
  visit_buffers(net, [&](const std::string& name, Tensor<float>& t) {
    entries.push_back({name, "buffer", &t});
  });
  return entries;
}

}  // namespace

std::string config_to_json_text(const NetworkConfig& cfg) { return config_to_json(cfg).dump(2); }

NetworkConfig config_from_json_text(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("config: invalid JSON: ") + e.what());
  }
}

void save_checkpoint(Network<float>& net, const std::string& path) {
  auto entries = all_entries(net);
  json manifest;
  manifest["format"] = "nlunet-checkpoint-v1";
  manifest["config"] = config_to_json(net.cfg);
  json tensors = json::array();
  int64_t offset = 0;
  for (const Entry& e : entries) {
    tensors.push_back(json{{"name", e.name},
                           {"kind", e.kind},
                           {"shape", e.tensor->shape()},
                           {"dtype", "f32"},
                           {"offset", offset}});
    offset += e.tensor->numel() * static_cast<int64_t>(sizeof(float));
  }
  manifest["tensors"] = tensors;
  manifest["payload_bytes"] = offset;

  std::ofstream mf(path);
  if (!mf) throw DataError("cannot open '" + path + "' for writing");
  mf << manifest.dump(2) << "\n";
  mf.close();

  std::ofstream bf(path + ".bin", std::ios::binary);
  if (!bf) throw DataError("cannot open '" + path + ".bin' for writing");
  for (const Entry& e : entries)
    bf.write(reinterpret_cast<const char*>(e.tensor->data()),
             static_cast<std::streamsize>(e.tensor->numel() * sizeof(float)));
  if (!bf) throw DataError("short write to '" + path + ".bin'");
}

Network<float> load_checkpoint(const std::string& path) {
  std::ifstream mf(path);
  if (!mf) throw DataError("cannot open checkpoint '" + path + "'");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw DataError("checkpoint '" + path + "': invalid JSON: " + e.what());
  }
  if (manifest.value("format", "") != "nlunet-checkpoint-v1")
    throw DataError("checkpoint '" + path + "': unsupported format");

  Network<float> net = build_network<float>(config_from_json(manifest.at("config")), 0);
  auto entries = all_entries(net);
  std::map<std::string, Entry*> by_name;
  for (Entry& e : entries) by_name[e.name] = &e;

  std::ifstream bf(path + ".bin", std::ios::binary | std::ios::ate);
  if (!bf) throw DataError("cannot open checkpoint payload '" + path + ".bin'");
  const int64_t payload_bytes = static_cast<int64_t>(bf.tellg());
  if (payload_bytes != manifest.at("payload_bytes").get<int64_t>())
    throw DataError("checkpoint '" + path + "': payload has " + std::to_string(payload_bytes) +
                    " bytes, manifest declares " +
                    std::to_string(manifest.at("payload_bytes").get<int64_t>()));
  bf.seekg(0);

  size_t matched = 0;
  for (const json& tj : manifest.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError("checkpoint '" + path + "': unknown tensor '" + name + "'");
    Tensor<float>* t = it->second->tensor;
    const Shape shape = tj.at("shape").get<Shape>();
    if (shape != t->shape())
      throw DataError("checkpoint '" + path + "': tensor '" + name + "' has shape " +
                      shape_str(shape) + ", network expects " + shape_str(t->shape()));
    if (tj.at("dtype").get<std::string>() != "f32")
      throw DataError("checkpoint '" + path + "': tensor '" + name + "' is not f32");
    bf.seekg(tj.at("offset").get<int64_t>());
    bf.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(t->numel() * sizeof(float)));
    if (!bf)
      throw DataError("checkpoint '" + path + "': short read for tensor '" + name + "'");
    ++matched;
  }
  if (matched != entries.size())
    throw DataError("checkpoint '" + path + "': has " + std::to_string(matched) +
                    " tensors, network expects " + std::to_string(entries.size()));
  return net;
}

}  // namespace nlunet
