#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "mdm/rng.hpp"

namespace mdm::corruption {

// Regular partition of an image into square patches.
struct PatchGrid {
  std::int64_t h = 0;  // pixels
  std::int64_t w = 0;
  std::int64_t p = 0;  // patch side

  std::int64_t patches_y() const { return h / p; }
  std::int64_t patches_x() const { return w / p; }
  std::int64_t count() const { return patches_y() * patches_x(); }

  // Throws DimensionError unless p divides both h and w.
  static PatchGrid from(std::int64_t h, std::int64_t w, std::int64_t p);
  static PatchGrid from(const torch::Tensor& image, std::int64_t p);
};

// Which patches of a grid were masked at timestep t.
struct PatchMask {
  std::vector<bool> flags;  // length PatchGrid::count(), true = masked
  std::int64_t t = 0;
  std::int64_t t_max = 0;

  std::int64_t masked_count() const;
};

// Variance schedule for the Gaussian forward process. betas are 1-indexed
// by timestep: betas[t-1] is the variance at step t.
struct DiffusionSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // prod_{s<=t} alpha_s, strictly decreasing

  std::int64_t t_max() const { return static_cast<std::int64_t>(betas.size()); }
  double alpha_bar(std::int64_t t) const;  // t in [1, t_max]
};

// Images are CHW float tensors. A clean image lives in [-1, 1]; noised
// variants may leave that range.

// [C,H,W] -> [N, P*P*C] in raster order over the patch grid; each patch is
// the channel-major flattening of its [C,P,P] slab.
torch::Tensor patchify(const torch::Tensor& image, std::int64_t p);

// Exact inverse of patchify.
torch::Tensor unpatchify(const torch::Tensor& patches, std::int64_t h,
                         std::int64_t w, std::int64_t p);

// R_m = t / (T + 1). Throws RangeError for t outside [0, T].
double mask_ratio(std::int64_t t, std::int64_t t_max);

// Zeroes floor(R_m * N) patches chosen by shuffling the patch index list
// and taking the tail. Unmasked pixels are bit-identical to the input;
// patch order is unchanged. t = 0 is a no-op (clean input).
std::pair<torch::Tensor, PatchMask> mask_image(const torch::Tensor& image,
                                               std::int64_t t,
                                               std::int64_t t_max,
                                               std::int64_t p, Rng& rng);

// Builds the variance schedule. kind: "linear". Endpoints are inclusive;
// alpha_bars are accumulated in double precision.
DiffusionSchedule make_beta_schedule(std::int64_t t_max, std::string_view kind,
                                     double beta_start = 1e-4,
                                     double beta_end = 2e-2);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, eps ~ N(0, I) drawn from
// rng in the image's dtype. Returns (x_t, eps). t in [1, T].
std::pair<torch::Tensor, torch::Tensor> diffuse(const torch::Tensor& image,
                                                std::int64_t t,
                                                const DiffusionSchedule& sched,
                                                Rng& rng);
// Same closed form with a caller-supplied eps (zero-noise tests, replay).
torch::Tensor diffuse_with_eps(const torch::Tensor& image, std::int64_t t,
                               const DiffusionSchedule& sched,
                               const torch::Tensor& eps);

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
// Throws NumericError when abar_t < abar_floor.
torch::Tensor recover_x0(const torch::Tensor& x_t,
                         const torch::Tensor& eps_hat, std::int64_t t,
                         const DiffusionSchedule& sched,
                         double abar_floor = 1e-12);

// Call counters for the two corruption paths. The training loops for the
// masking model and the denoising baseline must each touch exactly one of
// them; tests assert on these.
std::int64_t mask_image_calls();
std::int64_t diffuse_calls();
void reset_call_counters();

}  // namespace mdm::corruption
