#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mdm/adam.hpp"
#include "mdm/corruption.hpp"
#include "mdm/losses.hpp"
#include "mdm/rng.hpp"
#include "mdm/unet.hpp"

namespace mdm::train {

// Self-supervised pre-training recipe. Two corruption methods share the
// backbone: "mdm" masks patches and reconstructs the image; "ddpm" adds
// scheduled Gaussian noise and predicts either the noise or the image.
struct PretrainConfig {
  unet::UNetConfig model;
  std::string method = "mdm";  // "mdm" | "ddpm"
  losses::LossKind loss = losses::LossKind::kSsim;
  std::string target = "image";  // "image" | "noise" (noise: ddpm only)
  std::int64_t t_max = 100;
  std::int64_t patch = 8;      // masked-patch side, mdm only
  std::int64_t fixed_t = 0;    // 0 = sample t uniformly from {1..t_max}
  double beta_start = 1e-4;    // ddpm variance schedule (linear)
  double beta_end = 2e-2;
  std::int64_t iterations = 2000;
  std::int64_t batch_size = 8;
  double lr = 1e-4;
  bool flip_augment = true;
  std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::uint64_t seed = 0;

  bool is_mdm() const { return method == "mdm"; }
  void validate() const;
};

// [batch] int64, i.i.d. uniform on {1..t_max}, or constant fixed_t
// when fixed_t > 0. RangeError when fixed_t > t_max.
torch::Tensor sample_timesteps(std::int64_t batch, std::int64_t t_max,
                               Rng& rng, std::int64_t fixed_t = 0);

// A trained (or freshly initialized) model plus everything needed to
// reproduce its corruption process downstream.
struct PretrainedModel {
  unet::UNet net{nullptr};
  PretrainConfig cfg;
  corruption::DiffusionSchedule schedule;  // populated for ddpm
  std::uint64_t content_id = 0;  // hash of parameters, for provenance
};

// One optimization step on one [B,C,H,W] batch in [-1,1]; returns the
// scalar loss. Timesteps come from ts_rng, corruption draws from
// corrupt_rng, so the two streams stay independently replayable.
double train_step_mdm(unet::UNet& net, opt::Adam& adam,
                      const torch::Tensor& batch, const PretrainConfig& cfg,
                      Rng& ts_rng, Rng& corrupt_rng);
double train_step_ddpm(unet::UNet& net, opt::Adam& adam,
                       const torch::Tensor& batch,
                       const corruption::DiffusionSchedule& sched,
                       const PretrainConfig& cfg, Rng& ts_rng,
                       Rng& corrupt_rng);

struct PretrainResult {
  std::filesystem::path checkpoint;
  std::vector<double> losses;  // one entry per iteration
};

// Full training loop. Writes loss.csv (iteration, loss, wall_time) and
// checkpoints into run_dir; returns the final checkpoint path. `resume`
// (optional) continues bitwise from an earlier checkpoint of the same
// config. Augmentation is random horizontal flip only; images larger
// than the model input are randomly cropped. Aborts with
// DivergenceError after 10 consecutive non-finite losses. The masking
// method never touches the Gaussian path and vice versa; this is
// asserted via the corruption call counters.
PretrainResult pretrain(const PretrainConfig& cfg,
                        const std::vector<torch::Tensor>& images,
                        const std::filesystem::path& run_dir,
                        const std::filesystem::path& resume = {});

// Reads a training checkpoint back into a frozen, eval-mode model.
PretrainedModel load_model(const std::filesystem::path& checkpoint);

// Builds the model a pretraining run would start from (iteration 0).
// The random-features baseline and unit tests share this entry point.
PretrainedModel init_model(const PretrainConfig& cfg);

// Corrupts `image` at timestep t with the model's native corruption and
// runs one forward pass. Returns (corrupted, reconstruction). For the
// noise-predicting variant the reconstruction is the recovered image.
std::pair<torch::Tensor, torch::Tensor> reconstruct(PretrainedModel& model,
                                                    const torch::Tensor& image,
                                                    std::int64_t t, Rng& rng);

}  // namespace mdm::train
