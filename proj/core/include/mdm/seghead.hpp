#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

#include "mdm/features.hpp"
#include "mdm/pretrain.hpp"
#include "mdm/rng.hpp"

namespace mdm::seg {

struct SegHeadConfig {
  std::int64_t input_dim = 0;  // C_f; filled in when training starts
  std::vector<std::int64_t> hidden = {128, 128};
  std::int64_t num_classes = 0;  // K; filled from the dataset
  double lr = 1e-3;
  std::int64_t pixel_batch = 64;
  std::int64_t patience = 1000;  // steps without a new smoothed-loss low
  std::int64_t max_steps = 20000;
  std::int64_t smooth_window = 50;

  void validate() const;
};

// Pixel-wise MLP classifier over frozen features.
class SegHeadImpl : public torch::nn::Module {
 public:
  explicit SegHeadImpl(SegHeadConfig cfg);
  torch::Tensor forward(const torch::Tensor& x);  // [N,C_f] -> [N,K]
  const SegHeadConfig& config() const { return cfg_; }

 private:
  SegHeadConfig cfg_;
  std::vector<torch::nn::Linear> layers_;
};
TORCH_MODULE(SegHead);

SegHead build_seg_head(const SegHeadConfig& cfg, std::uint64_t seed);

struct TrainHeadResult {
  SegHead head{nullptr};
  std::vector<double> losses;  // per-step raw training loss
  std::int64_t steps = 0;
  std::vector<std::int64_t> absent_classes;  // warned, kept in output space
};

// Trains on per-pixel (feature, label) samples drawn one batch at a time
// until the smoothed loss stops improving for `patience` steps (or
// max_steps). Labels must be spatially aligned with the stacks.
TrainHeadResult train_head(const std::vector<feat::FeatureStack>& stacks,
                           const std::vector<torch::Tensor>& labels,
                           SegHeadConfig cfg, Rng& rng);

// Per-pixel argmax (ties toward the smaller class index) -> [H,W] int64.
torch::Tensor predict(SegHead& head, const feat::FeatureStack& stack);
torch::Tensor logits_map(SegHead& head,
                         const feat::FeatureStack& stack);  // [K,H,W]

// Tiles the image with window x window crops (stride = window, final
// row/column right/bottom-aligned), extracts features per window with
// the model's extraction config, predicts, and stitches. Overlap from
// the aligned final windows takes the later window's answer; with
// average_logits the overlaps average logits instead.
torch::Tensor predict_sliding(train::PretrainedModel& model, SegHead& head,
                              const torch::Tensor& image,
                              const feat::FeatureConfig& fcfg,
                              std::int64_t window = 256,
                              bool average_logits = false);

// Head checkpoint: weights + config + the feature spec it was trained
// against (model content id, ts, blocks), so mismatched artifacts fail
// loudly instead of silently degrading.
struct HeadArtifact {
  SegHead head{nullptr};
  feat::FeatureConfig features;
  std::uint64_t model_id = 0;
};

void save_head(const std::filesystem::path& path, const SegHead& head,
               const feat::FeatureConfig& features, std::uint64_t model_id);
HeadArtifact load_head(const std::filesystem::path& path);

}  // namespace mdm::seg
