#include "mdm/corruption.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <string>

#include "mdm/errors.hpp"

namespace mdm::corruption {

namespace {
std::atomic<std::int64_t> g_mask_calls{0};
std::atomic<std::int64_t> g_diffuse_calls{0};

void check_chw(const torch::Tensor& image, const char* who) {
  if (image.dim() != 3) {
    throw DimensionError(std::string(who) + ": expected [C,H,W], got " +
                         std::to_string(image.dim()) + " dims");
  }
  if (!image.is_floating_point()) {
    throw DimensionError(std::string(who) + ": expected a float tensor");
  }
}
}  // namespace

PatchGrid PatchGrid::from(std::int64_t h, std::int64_t w, std::int64_t p) {
  if (p <= 0) throw DimensionError("patch size must be positive");
  if (h % p != 0 || w % p != 0) {
    throw DimensionError("patch size " + std::to_string(p) +
                         " does not divide image " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  return PatchGrid{h, w, p};
}

PatchGrid PatchGrid::from(const torch::Tensor& image, std::int64_t p) {
  check_chw(image, "PatchGrid");
  return from(image.size(1), image.size(2), p);
}

std::int64_t PatchMask::masked_count() const {
  return std::count(flags.begin(), flags.end(), true);
}

double DiffusionSchedule::alpha_bar(std::int64_t t) const {
  if (t < 1 || t > t_max()) {
    throw RangeError("alpha_bar: t=" + std::to_string(t) +
                     " outside [1, " + std::to_string(t_max()) + "]");
  }
  return alpha_bars[static_cast<std::size_t>(t - 1)];
}

torch::Tensor patchify(const torch::Tensor& image, std::int64_t p) {
  auto grid = PatchGrid::from(image, p);
  auto c = image.size(0);
  // [C, gy, p, gx, p] -> [gy, gx, C, p, p] -> [N, C*p*p]
  auto x = image.reshape({c, grid.patches_y(), p, grid.patches_x(), p});
  x = x.permute({1, 3, 0, 2, 4});
  return x.reshape({grid.count(), c * p * p}).contiguous();
}

torch::Tensor unpatchify(const torch::Tensor& patches, std::int64_t h,
                         std::int64_t w, std::int64_t p) {
  auto grid = PatchGrid::from(h, w, p);
  if (patches.dim() != 2 || patches.size(0) != grid.count()) {
    throw DimensionError("unpatchify: expected [" +
                         std::to_string(grid.count()) + ", C*p*p] patches");
  }
  if (patches.size(1) % (p * p) != 0) {
    throw DimensionError("unpatchify: patch length not divisible by p*p");
  }
  auto c = patches.size(1) / (p * p);
  auto x = patches.reshape({grid.patches_y(), grid.patches_x(), c, p, p});
  x = x.permute({2, 0, 3, 1, 4});
  return x.reshape({c, h, w}).contiguous();
}

double mask_ratio(std::int64_t t, std::int64_t t_max) {
  if (t_max < 1) throw RangeError("mask_ratio: T must be >= 1");
  if (t < 0 || t > t_max) {
    throw RangeError("mask_ratio: t=" + std::to_string(t) + " outside [0, " +
                     std::to_string(t_max) + "]");
  }
  return static_cast<double>(t) / static_cast<double>(t_max + 1);
}

std::pair<torch::Tensor, PatchMask> mask_image(const torch::Tensor& image,
                                               std::int64_t t,
                                               std::int64_t t_max,
                                               std::int64_t p, Rng& rng) {
  check_chw(image, "mask_image");
  auto grid = PatchGrid::from(image, p);
  const auto n = grid.count();
  const auto k = static_cast<std::int64_t>(
      std::floor(mask_ratio(t, t_max) * static_cast<double>(n)));

  g_mask_calls.fetch_add(1, std::memory_order_relaxed);

  PatchMask mask;
  mask.flags.assign(static_cast<std::size_t>(n), false);
  mask.t = t;
  mask.t_max = t_max;

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (std::int64_t i = n - k; i < n; ++i) {
    mask.flags[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
        true;
  }

  auto out = image.clone();
  if (k > 0) {
    const auto gx = grid.patches_x();
    for (std::int64_t idx = 0; idx < n; ++idx) {
      if (!mask.flags[static_cast<std::size_t>(idx)]) continue;
      const auto py = idx / gx;
      const auto px = idx % gx;
      out.index_put_({torch::indexing::Slice(),
                      torch::indexing::Slice(py * p, (py + 1) * p),
                      torch::indexing::Slice(px * p, (px + 1) * p)},
                     0.0);
    }
  }
  return {out, std::move(mask)};
}

DiffusionSchedule make_beta_schedule(std::int64_t t_max, std::string_view kind,
                                     double beta_start, double beta_end) {
  if (t_max < 1) throw ConfigError("beta schedule: T must be >= 1");
  if (kind != "linear") {
    throw ConfigError("beta schedule: unknown kind '" + std::string(kind) +
                      "'");
  }
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end)) {
    throw ConfigError("beta schedule: need 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.betas.resize(static_cast<std::size_t>(t_max));
  s.alphas.resize(static_cast<std::size_t>(t_max));
  s.alpha_bars.resize(static_cast<std::size_t>(t_max));
  double abar = 1.0;
  for (std::int64_t i = 0; i < t_max; ++i) {
    const double frac =
        t_max == 1 ? 0.0
                   : static_cast<double>(i) / static_cast<double>(t_max - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    const double alpha = 1.0 - beta;
    abar *= alpha;
    s.betas[static_cast<std::size_t>(i)] = beta;
    s.alphas[static_cast<std::size_t>(i)] = alpha;
    s.alpha_bars[static_cast<std::size_t>(i)] = abar;
  }
  return s;
}

torch::Tensor diffuse_with_eps(const torch::Tensor& image, std::int64_t t,
                               const DiffusionSchedule& sched,
                               const torch::Tensor& eps) {
  check_chw(image, "diffuse");
  if (!eps.sizes().equals(image.sizes())) {
    throw DimensionError("diffuse: eps shape does not match image");
  }
  const double abar = sched.alpha_bar(t);
  return image * std::sqrt(abar) + eps * std::sqrt(1.0 - abar);
}

std::pair<torch::Tensor, torch::Tensor> diffuse(const torch::Tensor& image,
                                                std::int64_t t,
                                                const DiffusionSchedule& sched,
                                                Rng& rng) {
  check_chw(image, "diffuse");
  g_diffuse_calls.fetch_add(1, std::memory_order_relaxed);
  auto eps = rng.normal_tensor(image.sizes().vec(), image.scalar_type());
  return {diffuse_with_eps(image, t, sched, eps), eps};
}

torch::Tensor recover_x0(const torch::Tensor& x_t,
                         const torch::Tensor& eps_hat, std::int64_t t,
                         const DiffusionSchedule& sched, double abar_floor) {
  if (!eps_hat.sizes().equals(x_t.sizes())) {
    throw DimensionError("recover_x0: eps_hat shape does not match x_t");
  }
  const double abar = sched.alpha_bar(t);
  if (abar < abar_floor) {
    throw NumericError("recover_x0: alpha_bar(" + std::to_string(t) +
                       ") below floor, division unstable");
  }
  return (x_t - eps_hat * std::sqrt(1.0 - abar)) / std::sqrt(abar);
}

std::int64_t mask_image_calls() {
  return g_mask_calls.load(std::memory_order_relaxed);
}
std::int64_t diffuse_calls() {
  return g_diffuse_calls.load(std::memory_order_relaxed);
}
void reset_call_counters() {
  g_mask_calls.store(0, std::memory_order_relaxed);
  g_diffuse_calls.store(0, std::memory_order_relaxed);
}

}  // namespace mdm::corruption
