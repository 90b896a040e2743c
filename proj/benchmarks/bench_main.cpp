// Microbenchmarks for the hot paths: patch masking, the windowed
// structural-similarity loss, a U-Net forward pass, feature k-means and
// the instance-level evaluation metric.

#include <benchmark/benchmark.h>

#include <cstdint>

#include <torch/torch.h>

#include "mdm/corruption.hpp"
#include "mdm/features.hpp"
#include "mdm/losses.hpp"
#include "mdm/metrics.hpp"
#include "mdm/pretrain.hpp"
#include "mdm/rng.hpp"
#include "mdm/unet.hpp"

namespace {

void BM_MaskImage(benchmark::State& state) {
  const std::int64_t size = state.range(0);
  mdm::Rng rng(1);
  auto image = rng.uniform_tensor({1, size, size});
  for (auto _ : state) {
    auto [masked, mask] = mdm::corruption::mask_image(image, 50, 100, 8, rng);
    benchmark::DoNotOptimize(masked.data_ptr());
  }
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_MaskImage)->Arg(64)->Arg(128)->Arg(256);

void BM_Diffuse(benchmark::State& state) {
  const std::int64_t size = state.range(0);
  mdm::Rng rng(1);
  auto image = rng.uniform_tensor({1, size, size});
  const auto sched = mdm::corruption::make_beta_schedule(100, "linear");
  for (auto _ : state) {
    auto [xt, eps] = mdm::corruption::diffuse(image, 50, sched, rng);
    benchmark::DoNotOptimize(xt.data_ptr());
  }
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_Diffuse)->Arg(64)->Arg(256);

void BM_SsimLoss(benchmark::State& state) {
  const std::int64_t size = state.range(0);
  mdm::Rng rng(2);
  auto x = rng.uniform_tensor({4, 1, size, size});
  auto y = rng.uniform_tensor({4, 1, size, size});
  for (auto _ : state) {
    auto loss = mdm::losses::ssim_loss(x, y);
    benchmark::DoNotOptimize(loss.item<float>());
  }
}
BENCHMARK(BM_SsimLoss)->Arg(64)->Arg(128);

mdm::unet::UNetConfig desk_unet() {
  mdm::unet::UNetConfig cfg;
  cfg.in_channels = 1;
  cfg.out_channels = 1;
  cfg.input_size = 64;
  cfg.base_width = 8;
  cfg.channel_mults = {1, 2};
  cfg.attention_resolutions = {16};
  cfg.num_res_blocks = 1;
  return cfg;
}

void BM_UnetForward(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  torch::manual_seed(3);
  mdm::unet::UNet net(desk_unet());
  net->eval();
  auto x = torch::randn({static_cast<std::int64_t>(state.range(0)), 1, 64, 64});
  for (auto _ : state) {
    auto y = net->forward(x, 50);
    benchmark::DoNotOptimize(y.data_ptr());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_UnetForward)->Arg(1)->Arg(4);

void BM_TrainStep(benchmark::State& state) {
  torch::manual_seed(4);
  mdm::train::PretrainConfig cfg;
  cfg.model = desk_unet();
  cfg.t_max = 100;
  cfg.patch = 8;
  mdm::unet::UNet net(cfg.model);
  mdm::opt::Adam adam(net->parameters(), {.lr = 1e-4});
  mdm::Rng ts_rng(5), corrupt_rng(6);
  auto batch = torch::rand({4, 1, 64, 64}) * 2 - 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        mdm::train::train_step_mdm(net, adam, batch, cfg, ts_rng,
                                   corrupt_rng));
  }
}
BENCHMARK(BM_TrainStep);

void BM_KMeans(benchmark::State& state) {
  mdm::Rng data_rng(7);
  auto points = data_rng.normal_tensor({state.range(0), 16});
  for (auto _ : state) {
    mdm::Rng rng(8);
    auto result = mdm::feat::kmeans(points, 5, rng, 3);
    benchmark::DoNotOptimize(std::get<2>(result));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_KMeans)->Arg(1024)->Arg(4096);

void BM_Aji(benchmark::State& state) {
  torch::manual_seed(9);
  const std::int64_t size = state.range(0);
  auto pred =
      mdm::metrics::connected_components(torch::rand({size, size}) < 0.35);
  auto gt =
      mdm::metrics::connected_components(torch::rand({size, size}) < 0.35);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mdm::metrics::aji(pred, gt));
  }
}
BENCHMARK(BM_Aji)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
