#include "mdm/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

#include "mdm/errors.hpp"

namespace mdm::cfg {

namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& section) {
  if (!j.is_object()) {
    throw ConfigError("config section '" + section + "' must be an object");
  }
}

void reject_unknown(const json& j, const std::string& section,
                    std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      std::string keys;
      for (const char* a : allowed) keys += std::string(" ") + a;
      throw ConfigError("unknown key '" + key + "' in section '" + section +
                        "'; allowed:" + keys);
    }
  }
}

template <typename T>
T take(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json unet_to_json(const unet::UNetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"out_channels", c.out_channels},
          {"input_size", c.input_size},
          {"base_width", c.base_width},
          {"channel_mults", c.channel_mults},
          {"attention_resolutions", c.attention_resolutions},
          {"num_res_blocks", c.num_res_blocks},
          {"time_embed_dim", c.time_embed_dim},
          {"num_heads", c.num_heads}};
}

unet::UNetConfig unet_from_json(const json& j) {
  require_object(j, "model");
  reject_unknown(j, "model",
                 {"in_channels", "out_channels", "input_size", "base_width",
                  "channel_mults", "attention_resolutions", "num_res_blocks",
                  "time_embed_dim", "num_heads"});
  unet::UNetConfig c;
  c.in_channels = take(j, "in_channels", c.in_channels);
  c.out_channels = take(j, "out_channels", c.out_channels);
  c.input_size = take(j, "input_size", c.input_size);
  c.base_width = take(j, "base_width", c.base_width);
  c.channel_mults = take(j, "channel_mults", c.channel_mults);
  if (j.contains("attention_resolutions")) {
    auto v = take<std::vector<std::int64_t>>(j, "attention_resolutions", {});
    c.attention_resolutions = std::set<std::int64_t>(v.begin(), v.end());
  }
  c.num_res_blocks = take(j, "num_res_blocks", c.num_res_blocks);
  c.time_embed_dim = take(j, "time_embed_dim", c.time_embed_dim);
  c.num_heads = take(j, "num_heads", c.num_heads);
  return c;
}

json pretrain_to_json(const train::PretrainConfig& c) {
  return {{"method", c.method},
          {"loss", losses::loss_kind_name(c.loss)},
          {"target", c.target},
          {"t_max", c.t_max},
          {"patch", c.patch},
          {"fixed_t", c.fixed_t},
          {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"flip_augment", c.flip_augment},
          {"checkpoint_every", c.checkpoint_every}};
}

train::PretrainConfig pretrain_from_json(const json& j) {
  require_object(j, "pretrain");
  reject_unknown(j, "pretrain",
                 {"method", "loss", "target", "t_max", "patch", "fixed_t",
                  "beta_start", "beta_end", "iterations", "batch_size", "lr",
                  "flip_augment", "checkpoint_every"});
  train::PretrainConfig c;
  c.method = take<std::string>(j, "method", c.method);
  c.loss = losses::parse_loss_kind(
      take<std::string>(j, "loss", losses::loss_kind_name(c.loss)));
  c.target = take<std::string>(j, "target", c.target);
  c.t_max = take(j, "t_max", c.t_max);
  c.patch = take(j, "patch", c.patch);
  c.fixed_t = take(j, "fixed_t", c.fixed_t);
  c.beta_start = take(j, "beta_start", c.beta_start);
  c.beta_end = take(j, "beta_end", c.beta_end);
  c.iterations = take(j, "iterations", c.iterations);
  c.batch_size = take(j, "batch_size", c.batch_size);
  c.lr = take(j, "lr", c.lr);
  c.flip_augment = take(j, "flip_augment", c.flip_augment);
  c.checkpoint_every = take(j, "checkpoint_every", c.checkpoint_every);
  return c;
}

feat::FeatureConfig features_from_json(const json& j) {
  require_object(j, "features");
  reject_unknown(j, "features", {"ts", "blocks", "clean_input", "upsample"});
  feat::FeatureConfig c;
  c.ts = take(j, "ts", c.ts);
  c.blocks = take(j, "blocks", c.blocks);
  c.clean_input = take(j, "clean_input", c.clean_input);
  c.upsample = take<std::string>(j, "upsample", c.upsample);
  return c;
}

json features_to_json(const feat::FeatureConfig& c) {
  return {{"ts", c.ts},
          {"blocks", c.blocks},
          {"clean_input", c.clean_input},
          {"upsample", c.upsample}};
}

seg::SegHeadConfig head_from_json(const json& j) {
  require_object(j, "head");
  reject_unknown(j, "head",
                 {"hidden", "lr", "pixel_batch", "patience", "max_steps",
                  "smooth_window", "input_dim", "num_classes"});
  seg::SegHeadConfig c;
  c.hidden = take(j, "hidden", c.hidden);
  c.lr = take(j, "lr", c.lr);
  c.pixel_batch = take(j, "pixel_batch", c.pixel_batch);
  c.patience = take(j, "patience", c.patience);
  c.max_steps = take(j, "max_steps", c.max_steps);
  c.smooth_window = take(j, "smooth_window", c.smooth_window);
  c.input_dim = take(j, "input_dim", c.input_dim);
  c.num_classes = take(j, "num_classes", c.num_classes);
  return c;
}

json head_to_json(const seg::SegHeadConfig& c) {
  return {{"hidden", c.hidden},
          {"lr", c.lr},
          {"pixel_batch", c.pixel_batch},
          {"patience", c.patience},
          {"max_steps", c.max_steps},
          {"smooth_window", c.smooth_window},
          {"input_dim", c.input_dim},
          {"num_classes", c.num_classes}};
}

json run_to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"data", {{"manifest", c.data.manifest}, {"channels", c.data.channels}}},
          {"model", unet_to_json(c.pretrain.model)},
          {"pretrain", pretrain_to_json(c.pretrain)},
          {"features", features_to_json(c.features)},
          {"head", head_to_json(c.head)},
          {"eval",
           {{"window", c.eval.window},
            {"average_logits", c.eval.average_logits}}}};
}

RunConfig run_from_json(const json& j) {
  require_object(j, "<top level>");
  reject_unknown(j, "<top level>",
                 {"seed", "data", "model", "pretrain", "features", "head",
                  "eval"});
  RunConfig c;
  c.seed = take<std::uint64_t>(j, "seed", c.seed);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    require_object(d, "data");
    reject_unknown(d, "data", {"manifest", "channels"});
    c.data.manifest = take<std::string>(d, "manifest", c.data.manifest);
    c.data.channels = take(d, "channels", c.data.channels);
  }
  if (j.contains("model")) c.pretrain.model = unet_from_json(j.at("model"));
  if (j.contains("pretrain")) {
    auto model = c.pretrain.model;
    c.pretrain = pretrain_from_json(j.at("pretrain"));
    c.pretrain.model = model;
  }
  if (j.contains("features")) c.features = features_from_json(j.at("features"));
  if (j.contains("head")) c.head = head_from_json(j.at("head"));
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    require_object(e, "eval");
    reject_unknown(e, "eval", {"window", "average_logits"});
    c.eval.window = take(e, "window", c.eval.window);
    c.eval.average_logits = take(e, "average_logits", c.eval.average_logits);
  }
  c.pretrain.seed = c.seed;
  return c;
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config: " + path.string());
  }
  try {
    return json::parse(in, nullptr, /*allow_exceptions=*/true,
                       /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " +
                      e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_from_json(load_json(path));
}

void apply_set_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like section.key=value, got '" +
                      assignment + "'");
  }
  const std::string dotted = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings arrive as-is
  }

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) {
      throw ConfigError("override has an empty key segment: '" + dotted +
                        "'");
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace mdm::cfg
