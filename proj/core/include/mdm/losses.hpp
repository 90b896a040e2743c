#pragma once

#include <cstdint>
#include <optional>

#include <torch/torch.h>

namespace mdm::losses {

// Windowed SSIM settings. c1 = (k1*L)^2 and c2 = (k2*L)^2 stabilize the
// luminance and contrast ratios; the window is a normalized Gaussian.
struct SsimParams {
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;  // L
  std::int64_t window_size = 11;  // odd; clamped down for tiny images
  double window_sigma = 1.5;

  void validate() const;  // throws ConfigError
};

// Mean local SSIM index over every pixel position (reflect padding) and
// over channels, each channel windowed independently. Accepts [C,H,W] or
// [B,C,H,W]; returns a 0-dim tensor in [-1, 1], differentiable.
torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y,
                   const SsimParams& params = {});

// (1 - ssim(x, y)) / 2, in [0, 1]. Zero iff the images match structurally.
torch::Tensor ssim_loss(const torch::Tensor& x, const torch::Tensor& y,
                        const SsimParams& params = {});

// Mean squared elementwise difference, 0-dim.
torch::Tensor mse_loss(const torch::Tensor& a, const torch::Tensor& b);

// Mean of -log softmax(logits)[label] over pixels whose label is not
// ignore_label. logits [N,K], labels [N] integer. Labels outside [0,K)
// that are not the ignore value raise DataError.
torch::Tensor cross_entropy(const torch::Tensor& logits,
                            const torch::Tensor& labels,
                            std::optional<std::int64_t> ignore_label = {});

enum class LossKind { kSsim, kMse };

LossKind parse_loss_kind(const std::string& name);  // "ssim" | "mse"
const char* loss_kind_name(LossKind kind);

// Reconstruction objective used by the pre-training loops. For kSsim the
// pair is affinely remapped from [-1,1] to [0,1] first (remap_signed on,
// the default for image-space targets) so the stabilizers keep their
// standard scale; noise-space targets pass remap_signed = false. kMse uses
// raw values either way.
torch::Tensor recon_loss(const torch::Tensor& pred,
                         const torch::Tensor& target, LossKind kind,
                         const SsimParams& params = {},
                         bool remap_signed = true);

}  // namespace mdm::losses
