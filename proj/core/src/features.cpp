#include "mdm/features.hpp"

#include <algorithm>
#include <cstdint>
#include <set>
#include <sstream>

#include "mdm/corruption.hpp"
#include "mdm/errors.hpp"

namespace mdm::feat {

namespace F = torch::nn::functional;

void FeatureConfig::validate() const {
  if (ts.empty()) {
    throw ConfigError("feature extraction needs at least one timestep");
  }
  for (std::int64_t t : ts) {
    if (t < 0) {
      throw RangeError("feature timestep must be non-negative, got " +
                       std::to_string(t));
    }
  }
  for (std::int64_t b : blocks) {
    if (b < 0) {
      throw RangeError("decoder block index must be non-negative, got " +
                       std::to_string(b));
    }
  }
  if (upsample != "bilinear" && upsample != "nearest") {
    throw ConfigError("unknown upsample mode '" + upsample +
                      "' (supported: bilinear, nearest)");
  }
}

namespace {

// Resolve the requested block list against the model's actual decoder taps:
// empty means "all blocks"; otherwise indices are validated, deduplicated and
// sorted so channels always concatenate in ascending block order.
std::vector<std::int64_t> resolve_blocks(const FeatureConfig& cfg,
                                         std::size_t num_taps) {
  std::vector<std::int64_t> out;
  if (cfg.blocks.empty()) {
    out.resize(num_taps);
    for (std::size_t i = 0; i < num_taps; ++i) {
      out[i] = static_cast<std::int64_t>(i);
    }
    return out;
  }
  std::set<std::int64_t> uniq;
  for (std::int64_t b : cfg.blocks) {
    if (b < 0 || b >= static_cast<std::int64_t>(num_taps)) {
      std::ostringstream msg;
      msg << "decoder block index " << b << " out of range (model has "
          << num_taps << " tapped blocks)";
      throw RangeError(msg.str());
    }
    uniq.insert(b);
  }
  out.assign(uniq.begin(), uniq.end());
  return out;
}

// Deterministic per-(image, timestep) corruption seed so that repeated
// extractions of the same image at the same timestep see the same mask /
// noise draw.
std::uint64_t extraction_seed(const torch::Tensor& image, std::int64_t t) {
  std::uint64_t h = mdm::hash_tensor(image);
  h = hash_bytes(&t, sizeof(t), h);
  return derive_seed(h, "extract");
}

torch::Tensor corrupt_for_extraction(const train::PretrainedModel& model,
                                     const torch::Tensor& image,
                                     std::int64_t t,
                                     const FeatureConfig& cfg) {
  if (cfg.clean_input || t == 0) {
    return image;
  }
  Rng rng(extraction_seed(image, t));
  if (model.cfg.is_mdm()) {
    return corruption::mask_image(image, t, model.cfg.t_max, model.cfg.patch,
                                  rng)
        .first;
  }
  return corruption::diffuse(image, t, model.schedule, rng).first;
}

}  // namespace

std::int64_t feature_dim(const train::PretrainedModel& model,
                         const FeatureConfig& cfg) {
  cfg.validate();
  const auto& taps = model.net->decoder_taps();
  auto blocks = resolve_blocks(cfg, taps.size());
  std::int64_t per_t = 0;
  for (std::int64_t b : blocks) {
    per_t += taps[static_cast<std::size_t>(b)].channels;
  }
  return per_t * static_cast<std::int64_t>(cfg.ts.size());
}

FeatureStack extract_features(train::PretrainedModel& model,
                              const torch::Tensor& image, std::int64_t t,
                              const FeatureConfig& cfg) {
  cfg.validate();
  if (image.dim() != 3) {
    throw DimensionError("extract_features expects a [C,H,W] image, got " +
                         std::to_string(image.dim()) + " dims");
  }
  if (t < 0 || t > model.cfg.t_max) {
    std::ostringstream msg;
    msg << "timestep " << t << " out of range [0, " << model.cfg.t_max << "]";
    throw RangeError(msg.str());
  }
  const auto& taps = model.net->decoder_taps();
  auto blocks = resolve_blocks(cfg, taps.size());

  torch::NoGradGuard no_grad;
  model.net->eval();

  torch::Tensor input = corrupt_for_extraction(model, image, t, cfg);
  std::set<std::int64_t> wanted(blocks.begin(), blocks.end());
  auto [out, acts] =
      model.net->forward_with_activations(input.unsqueeze(0),
                                          torch::tensor(t), wanted);
  (void)out;

  const std::int64_t H = image.size(1);
  const std::int64_t W = image.size(2);
  std::vector<torch::Tensor> parts;
  parts.reserve(blocks.size());
  for (std::int64_t b : blocks) {
    torch::Tensor a = acts.at(b);
    if (a.size(2) != H || a.size(3) != W) {
      auto opts = F::InterpolateFuncOptions().size(
          std::vector<std::int64_t>{H, W});
      if (cfg.upsample == "bilinear") {
        opts = opts.mode(torch::kBilinear).align_corners(false);
      } else {
        opts = opts.mode(torch::kNearest);
      }
      a = F::interpolate(a, opts);
    }
    parts.push_back(a);
  }
  torch::Tensor data = torch::cat(parts, /*dim=*/1).squeeze(0).contiguous();

  FeatureStack stack;
  stack.data = data;
  stack.ts = {t};
  stack.blocks = blocks;
  stack.model_id = model.content_id;
  return stack;
}

FeatureStack extract_features_multi(train::PretrainedModel& model,
                                    const torch::Tensor& image,
                                    const FeatureConfig& cfg) {
  cfg.validate();
  std::vector<torch::Tensor> parts;
  parts.reserve(cfg.ts.size());
  FeatureStack stack;
  for (std::int64_t t : cfg.ts) {
    FeatureStack one = extract_features(model, image, t, cfg);
    parts.push_back(one.data);
    stack.blocks = one.blocks;
  }
  stack.data = torch::cat(parts, /*dim=*/0);
  stack.ts = cfg.ts;
  stack.model_id = model.content_id;
  return stack;
}

}  // namespace mdm::feat
