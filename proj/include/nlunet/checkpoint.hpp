#pragma once

#include <string>

#include "nlunet/network.hpp"

namespace nlunet {

// Checkpoint = JSON manifest at `path` (config + name/shape/dtype/offset per
// tensor) and a raw little-endian f32 blob at `path + ".bin"`. Parameters
// and batch-norm running stats are both stored. Loading rebuilds the network
// from the embedded config and fails loudly on any name or shape mismatch.
void save_checkpoint(Network<float>& net, const std::string& path);
Network<float> load_checkpoint(const std::string& path);

std::string config_to_json_text(const NetworkConfig& cfg);
NetworkConfig config_from_json_text(const std::string& text);

}  // namespace nlunet
