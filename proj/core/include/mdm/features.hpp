#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include <torch/torch.h>

#include "mdm/pretrain.hpp"
#include "mdm/rng.hpp"

namespace mdm::feat {

// Where and how to tap the frozen model for per-pixel features.
struct FeatureConfig {
  std::vector<std::int64_t> ts = {5};     // extraction timesteps, in order
  std::vector<std::int64_t> blocks = {};  // decoder tap indices; empty = all
  bool clean_input = false;  // feed the clean image instead of corrupting
  std::string upsample = "bilinear";  // "bilinear" | "nearest"

  void validate() const;
};

// Per-pixel feature volume with its provenance.
struct FeatureStack {
  torch::Tensor data;  // [C_f, H, W] float32
  std::vector<std::int64_t> ts;
  std::vector<std::int64_t> blocks;  // resolved, ascending
  std::uint64_t model_id = 0;

  std::int64_t dim() const { return data.size(0); }
};

// Channel count the given extraction would produce — the sum of tapped
// block widths times the number of timesteps.
std::int64_t feature_dim(const train::PretrainedModel& model,
                         const FeatureConfig& cfg);

// Corrupts the image with the model's native corruption at t (masking or
// noising; t = 0 and clean_input feed the clean image), runs the forward
// pass, bilinearly upsamples each tapped decoder activation to the image
// size, and concatenates along channels in ascending block order. The
// corruption draw is seeded from (image content, t), so repeated
// extractions of the same image agree exactly.
FeatureStack extract_features(train::PretrainedModel& model,
                              const torch::Tensor& image, std::int64_t t,
                              const FeatureConfig& cfg);

// Concatenation of per-t stacks over cfg.ts, in the given order.
FeatureStack extract_features_multi(train::PretrainedModel& model,
                                    const torch::Tensor& image,
                                    const FeatureConfig& cfg);

// Lloyd's algorithm with k-means++ seeding, several restarts, best
// inertia kept. points [N,D] float; returns (assignments [N] int64,
// centers [k,D], inertia). DegenerateInputError when there are fewer
// distinct points than clusters.
std::tuple<torch::Tensor, torch::Tensor, double> kmeans(
    const torch::Tensor& points, std::int64_t k, Rng& rng,
    std::int64_t restarts = 10);

// Per-pixel cluster ids [H,W] from k-means over the stack's pixel
// feature vectors.
torch::Tensor kmeans_feature_clusters(const FeatureStack& stack,
                                      std::int64_t k, Rng& rng);

}  // namespace mdm::feat
