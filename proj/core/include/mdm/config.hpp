#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "mdm/features.hpp"
#include "mdm/pretrain.hpp"
#include "mdm/seghead.hpp"
#include "mdm/unet.hpp"

namespace mdm::cfg {

struct DataConfig {
  std::string manifest;
  std::int64_t channels = 1;  // 0 = keep file channels, 1 or 3 to coerce
};

struct EvalConfig {
  std::int64_t window = 256;
  bool average_logits = false;
};

// One experiment, fully described. JSON sections: seed, data, model,
// pretrain, features, head, eval. Every section is schema-checked and
// unknown keys are rejected, so typos fail instead of silently using a
// default.
struct RunConfig {
  train::PretrainConfig pretrain;  // .model carries the "model" section
  feat::FeatureConfig features;
  seg::SegHeadConfig head;
  DataConfig data;
  EvalConfig eval;
  std::uint64_t seed = 0;
};

nlohmann::json unet_to_json(const unet::UNetConfig& c);
unet::UNetConfig unet_from_json(const nlohmann::json& j);

nlohmann::json pretrain_to_json(const train::PretrainConfig& c);
train::PretrainConfig pretrain_from_json(const nlohmann::json& j);

nlohmann::json features_to_json(const feat::FeatureConfig& c);
feat::FeatureConfig features_from_json(const nlohmann::json& j);

// Head serialization includes the runtime-resolved fields (input_dim,
// num_classes) so a saved head can be rebuilt exactly.
nlohmann::json head_to_json(const seg::SegHeadConfig& c);
seg::SegHeadConfig head_from_json(const nlohmann::json& j);

nlohmann::json run_to_json(const RunConfig& c);
RunConfig run_from_json(const nlohmann::json& j);

// Reads and parses a JSON run config; ConfigError with path context on
// parse or schema failure.
nlohmann::json load_json(const std::filesystem::path& path);
RunConfig load_run_config(const std::filesystem::path& path);

// Applies one "section.key=value" command-line override onto raw JSON.
// The value is parsed as JSON when possible (numbers, bools, arrays) and
// taken as a string otherwise. Unknown sections/keys are caught by the
// subsequent schema pass.
void apply_set_override(nlohmann::json& j, const std::string& assignment);

}  // namespace mdm::cfg
