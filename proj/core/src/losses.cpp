#include "mdm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mdm/errors.hpp"

namespace mdm::losses {

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b,
                      const char* who) {
  if (!a.sizes().equals(b.sizes())) {
    throw DimensionError(std::string(who) + ": shape mismatch " +
                         c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
  if (!a.is_floating_point() || !b.is_floating_point()) {
    throw DimensionError(std::string(who) + ": expected float tensors");
  }
}

// Normalized 2-D Gaussian window as a [C,1,w,w] depthwise conv weight.
torch::Tensor gaussian_window(std::int64_t w, double sigma, std::int64_t c,
                              torch::ScalarType dtype) {
  auto coords =
      torch::arange(w, torch::kDouble) - static_cast<double>(w - 1) / 2.0;
  auto g = torch::exp(-coords.square() / (2.0 * sigma * sigma));
  g /= g.sum();
  auto win = torch::outer(g, g).to(dtype);
  return win.reshape({1, 1, w, w}).expand({c, 1, w, w}).contiguous();
}

}  // namespace

void SsimParams::validate() const {
  if (!(k1 > 0.0) || !(k2 > 0.0)) throw ConfigError("ssim: k1, k2 must be > 0");
  if (!(dynamic_range > 0.0)) throw ConfigError("ssim: L must be > 0");
  if (window_size < 1 || window_size % 2 == 0) {
    throw ConfigError("ssim: window size must be odd and positive");
  }
  if (!(window_sigma > 0.0)) throw ConfigError("ssim: window sigma must be > 0");
}

torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y,
                   const SsimParams& params) {
  params.validate();
  check_same_shape(x, y, "ssim");
  if (x.dim() != 3 && x.dim() != 4) {
    throw DimensionError("ssim: expected [C,H,W] or [B,C,H,W]");
  }

  auto a = x.dim() == 3 ? x.unsqueeze(0) : x;
  auto b = y.dim() == 3 ? y.unsqueeze(0) : y;
  const auto c = a.size(1);
  const auto h = a.size(2);
  const auto w_img = a.size(3);

  // Shrink the window for images it would not fit; reflect padding needs
  // pad <= dim - 1, so a side of m supports windows up to 2m - 1.
  auto w = params.window_size;
  const auto cap = 2 * std::min(h, w_img) - 1;
  if (w > cap) w = cap;
  const auto pad = w / 2;

  const double c1 = params.k1 * params.dynamic_range;
  const double c2 = params.k2 * params.dynamic_range;
  const double c1sq = c1 * c1;
  const double c2sq = c2 * c2;

  auto win = gaussian_window(w, params.window_sigma, c, a.scalar_type());
  namespace F = torch::nn::functional;
  auto blur = [&](const torch::Tensor& t) {
    auto padded = torch::reflection_pad2d(t, {pad, pad, pad, pad});
    return F::conv2d(padded, win, F::Conv2dFuncOptions().groups(c));
  };

  auto mu_a = blur(a);
  auto mu_b = blur(b);
  auto mu_aa = mu_a * mu_a;
  auto mu_bb = mu_b * mu_b;
  auto mu_ab = mu_a * mu_b;
  auto var_a = blur(a * a) - mu_aa;
  auto var_b = blur(b * b) - mu_bb;
  auto cov = blur(a * b) - mu_ab;

  auto num = (2.0 * mu_ab + c1sq) * (2.0 * cov + c2sq);
  auto den = (mu_aa + mu_bb + c1sq) * (var_a + var_b + c2sq);
  return (num / den).mean();
}

torch::Tensor ssim_loss(const torch::Tensor& x, const torch::Tensor& y,
                        const SsimParams& params) {
  return (1.0 - ssim(x, y, params)) / 2.0;
}

torch::Tensor mse_loss(const torch::Tensor& a, const torch::Tensor& b) {
  check_same_shape(a, b, "mse_loss");
  return (a - b).square().mean();
}

torch::Tensor cross_entropy(const torch::Tensor& logits,
                            const torch::Tensor& labels,
                            std::optional<std::int64_t> ignore_label) {
  if (logits.dim() != 2) throw DimensionError("cross_entropy: logits [N,K]");
  if (labels.dim() != 1 || labels.size(0) != logits.size(0)) {
    throw DimensionError("cross_entropy: labels [N] aligned with logits");
  }
  const auto k = logits.size(1);
  auto lab = labels.to(torch::kLong);

  auto valid = ignore_label ? lab.ne(*ignore_label)
                            : torch::ones_like(lab, torch::kBool);
  auto checked = lab.masked_select(valid);
  if (checked.numel() > 0) {
    const auto lo = checked.min().item<std::int64_t>();
    const auto hi = checked.max().item<std::int64_t>();
    if (lo < 0 || hi >= k) {
      throw DataError("cross_entropy: label " +
                      std::to_string(lo < 0 ? lo : hi) + " outside [0, " +
                      std::to_string(k) + ")");
    }
  } else {
    throw DataError("cross_entropy: no labeled pixels");
  }

  auto logp = torch::log_softmax(logits.index({valid}), 1);
  auto picked = logp.gather(1, lab.masked_select(valid).unsqueeze(1));
  return -picked.mean();
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "ssim") return LossKind::kSsim;
  if (name == "mse") return LossKind::kMse;
  throw ConfigError("unknown loss '" + name + "' (want ssim or mse)");
}

const char* loss_kind_name(LossKind kind) {
  return kind == LossKind::kSsim ? "ssim" : "mse";
}

torch::Tensor recon_loss(const torch::Tensor& pred,
                         const torch::Tensor& target, LossKind kind,
                         const SsimParams& params, bool remap_signed) {
  if (kind == LossKind::kMse) return mdm::losses::mse_loss(pred, target);
  if (remap_signed) {
    return ssim_loss((pred + 1.0) / 2.0, (target + 1.0) / 2.0, params);
  }
  return ssim_loss(pred, target, params);
}

}  // namespace mdm::losses
