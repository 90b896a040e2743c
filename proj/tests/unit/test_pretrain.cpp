#include <doctest.h>

#include <cmath>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mdm/checkpoint.hpp"
#include "mdm/corruption.hpp"
#include "mdm/errors.hpp"
#include "mdm/pretrain.hpp"
#include "mdm/rng.hpp"

using namespace mdm;
namespace fs = std::filesystem;

namespace {

// Smallest config that exercises the full pipeline: 16x16 grayscale,
// one resolution level, no attention.
train::PretrainConfig tiny_config() {
  train::PretrainConfig cfg;
  cfg.model.in_channels = 1;
  cfg.model.out_channels = 1;
  cfg.model.input_size = 16;
  cfg.model.base_width = 8;
  cfg.model.channel_mults = {1};
  cfg.model.attention_resolutions = {};
  cfg.model.num_res_blocks = 1;
  cfg.method = "mdm";
  cfg.loss = losses::LossKind::kMse;
  cfg.t_max = 10;
  cfg.patch = 4;
  cfg.iterations = 4;
  cfg.batch_size = 2;
  cfg.lr = 1e-3;
  cfg.seed = 11;
  return cfg;
}

std::vector<torch::Tensor> toy_images(std::int64_t n, std::int64_t size,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < n; ++i) {
    out.push_back(
        rng.uniform_tensor({1, size, size}) * 1.6 - 0.8);
  }
  return out;
}

fs::path scratch(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("mdm-pretrain-" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Reads loss.csv rows as (iteration, loss-string) pairs; the wall_time
// column is explicitly excluded because it is not reproducible.
std::vector<std::pair<std::string, std::string>> loss_rows(
    const fs::path& csv) {
  std::ifstream in(csv);
  REQUIRE(in.good());
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line == "iteration,loss,wall_time");
  std::vector<std::pair<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto c1 = line.find(',');
    auto c2 = line.find(',', c1 + 1);
    REQUIRE(c1 != std::string::npos);
    REQUIRE(c2 != std::string::npos);
    rows.emplace_back(line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1));
  }
  return rows;
}

}  // namespace

TEST_CASE("timestep sampling covers {1..t_max} uniformly") {
  Rng rng(5);
  const std::int64_t t_max = 8;
  const std::int64_t n = 16000;
  auto t = train::sample_timesteps(n, t_max, rng);
  CHECK(t.min().item<std::int64_t>() >= 1);
  CHECK(t.max().item<std::int64_t>() <= t_max);

  // chi-square against uniform: 7 dof, 99.9% critical value ~ 24.3
  auto counts = torch::bincount(t, {}, t_max + 1);
  double chi2 = 0.0;
  const double expect = static_cast<double>(n) / t_max;
  for (std::int64_t k = 1; k <= t_max; ++k) {
    const double d = counts[k].item<double>() - expect;
    chi2 += d * d / expect;
  }
  CHECK(chi2 < 24.3);
  CHECK(counts[0].item<std::int64_t>() == 0);  // t=0 never sampled
}

TEST_CASE("fixed timestep pins every draw") {
  Rng rng(5);
  auto t = train::sample_timesteps(64, 10, rng, 7);
  CHECK(torch::equal(t, torch::full({64}, 7, torch::kInt64)));
  CHECK_THROWS_AS(train::sample_timesteps(4, 10, rng, 11), RangeError);
  CHECK_THROWS_AS(train::sample_timesteps(4, 10, rng, -1), RangeError);
  CHECK_THROWS_AS(train::sample_timesteps(0, 10, rng), RangeError);
}

TEST_CASE("pretrain config validation catches contradictions") {
  auto cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());

  auto bad = cfg;
  bad.method = "vae";
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.target = "noise";  // masking reconstructs images; noise has no meaning
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.patch = 5;  // does not divide the 16px input
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.method = "ddpm";
  bad.target = "noise";
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("single training steps are deterministic and finite") {
  auto cfg = tiny_config();
  auto images = toy_images(4, 16, 3);
  auto batch = torch::stack({images[0], images[1]}, 0);

  auto run_once = [&](double* loss_out) {
    auto net = unet::build_unet(cfg.model, 42);
    net->train();
    opt::Adam adam(net->parameters(), {.lr = cfg.lr});
    Rng ts(7), cr(9);
    *loss_out = train::train_step_mdm(net, adam, batch, cfg, ts, cr);
  };
  double a = 0.0, b = 0.0;
  run_once(&a);
  run_once(&b);
  CHECK(std::isfinite(a));
  CHECK(a == b);
  CHECK(a > 0.0);
}

TEST_CASE("zero-iteration run checkpoints the untouched initialization") {
  auto cfg = tiny_config();
  cfg.iterations = 0;
  auto dir = scratch("zero-iter");
  auto images = toy_images(4, 16, 3);
  auto result = train::pretrain(cfg, images, dir);

  auto model = train::load_model(result.checkpoint);
  auto reference = train::init_model(cfg);
  auto got = model.net->named_parameters();
  auto want = reference.net->named_parameters();
  REQUIRE(got.size() == want.size());
  for (const auto& p : got) {
    CHECK(torch::equal(p.value(), *want.find(p.key())));
  }
  CHECK(model.content_id == reference.content_id);
  CHECK(result.losses.empty());
  fs::remove_all(dir);
}

TEST_CASE("training reduces reconstruction loss on a memorizable set") {
  auto cfg = tiny_config();
  cfg.iterations = 220;
  cfg.batch_size = 4;
  cfg.lr = 2e-3;
  cfg.flip_augment = false;
  auto dir = scratch("overfit");
  auto images = toy_images(4, 16, 21);
  auto result = train::pretrain(cfg, images, dir);

  REQUIRE(result.losses.size() == 220);
  const double early = std::accumulate(result.losses.begin(),
                                       result.losses.begin() + 20, 0.0) / 20.0;
  const double late = std::accumulate(result.losses.end() - 20,
                                      result.losses.end(), 0.0) / 20.0;
  CHECK(late < 0.5 * early);
  fs::remove_all(dir);
}

TEST_CASE("two identical runs produce identical loss logs") {
  auto cfg = tiny_config();
  cfg.iterations = 6;
  auto images = toy_images(5, 16, 8);
  auto d1 = scratch("det-a");
  auto d2 = scratch("det-b");
  auto r1 = train::pretrain(cfg, images, d1);
  auto r2 = train::pretrain(cfg, images, d2);
  CHECK(loss_rows(d1 / "loss.csv") == loss_rows(d2 / "loss.csv"));
  CHECK(r1.losses == r2.losses);

  // and the checkpoints hold bitwise-identical weights
  auto m1 = train::load_model(r1.checkpoint);
  auto m2 = train::load_model(r2.checkpoint);
  CHECK(m1.content_id == m2.content_id);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("resume continues bitwise from a mid-run checkpoint") {
  auto cfg = tiny_config();
  cfg.iterations = 12;
  cfg.checkpoint_every = 6;
  auto images = toy_images(5, 16, 8);

  auto full_dir = scratch("resume-full");
  auto r_full = train::pretrain(cfg, images, full_dir);

  auto part_dir = scratch("resume-part");
  auto r_part = train::pretrain(cfg, images, part_dir,
                                full_dir / "checkpoint_00000006.ckpt");

  // rows 7..12 of the full run must reappear exactly
  auto full_rows = loss_rows(full_dir / "loss.csv");
  auto part_rows = loss_rows(part_dir / "loss.csv");
  REQUIRE(full_rows.size() == 12);
  REQUIRE(part_rows.size() == 6);
  for (std::size_t i = 0; i < part_rows.size(); ++i) {
    CHECK(part_rows[i] == full_rows[i + 6]);
  }

  auto m_full = train::load_model(r_full.checkpoint);
  auto m_part = train::load_model(r_part.checkpoint);
  CHECK(m_full.content_id == m_part.content_id);
  for (const auto& p : m_full.net->named_parameters()) {
    CHECK(torch::equal(p.value(), *m_part.net->named_parameters().find(p.key())));
  }

  // resuming under a different configuration must fail loudly
  auto changed = cfg;
  changed.lr = 5e-4;
  auto bad_dir = scratch("resume-bad");
  CHECK_THROWS_AS(train::pretrain(changed, images, bad_dir,
                                  full_dir / "checkpoint_00000006.ckpt"),
                  ConfigError);
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
  fs::remove_all(bad_dir);
}

TEST_CASE("corruption paths stay pure per method") {
  auto images = toy_images(4, 16, 3);

  corruption::reset_call_counters();
  auto cfg = tiny_config();
  auto d1 = scratch("pure-mdm");
  train::pretrain(cfg, images, d1);
  CHECK(corruption::mask_image_calls() > 0);
  CHECK(corruption::diffuse_calls() == 0);

  corruption::reset_call_counters();
  auto dcfg = tiny_config();
  dcfg.method = "ddpm";
  dcfg.target = "noise";
  auto d2 = scratch("pure-ddpm");
  train::pretrain(dcfg, images, d2);
  CHECK(corruption::diffuse_calls() > 0);
  CHECK(corruption::mask_image_calls() == 0);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("diverging runs abort after ten non-finite losses") {
  auto cfg = tiny_config();
  cfg.lr = 1e30;  // update magnitude tracks lr, so this must overflow
  cfg.iterations = 60;
  auto dir = scratch("diverge");
  auto images = toy_images(4, 16, 3);
  CHECK_THROWS_AS(train::pretrain(cfg, images, dir), DivergenceError);
  fs::remove_all(dir);
}

TEST_CASE("loaded models are frozen and reproducible") {
  auto cfg = tiny_config();
  auto dir = scratch("load");
  auto images = toy_images(4, 16, 3);
  auto result = train::pretrain(cfg, images, dir);
  auto model = train::load_model(result.checkpoint);

  CHECK(model.cfg.method == "mdm");
  CHECK(model.cfg.t_max == cfg.t_max);
  for (const auto& p : model.net->parameters()) {
    CHECK_FALSE(p.requires_grad());
  }
  CHECK_FALSE(model.net->is_training());

  torch::Tensor x = images[0];
  auto y1 = model.net->forward(x.unsqueeze(0), 3);
  auto y2 = model.net->forward(x.unsqueeze(0), 3);
  CHECK(torch::equal(y1, y2));
  fs::remove_all(dir);
}

TEST_CASE("reconstruction at t=0 passes the image through untouched") {
  auto cfg = tiny_config();
  auto model = train::init_model(cfg);
  auto image = toy_images(1, 16, 4)[0];
  Rng rng(2);
  auto [corrupted, recon] = train::reconstruct(model, image, 0, rng);
  CHECK(torch::equal(corrupted, image));
  CHECK(recon.sizes().equals(image.sizes()));

  auto [c5, r5] = train::reconstruct(model, image, 5, rng);
  CHECK_FALSE(torch::equal(c5, image));  // some patches got masked
  CHECK(r5.sizes().equals(image.sizes()));
  CHECK_THROWS_AS(train::reconstruct(model, image, 99, rng), RangeError);
}

TEST_CASE("noise-predicting reconstruction recovers a clean image") {
  auto cfg = tiny_config();
  cfg.method = "ddpm";
  cfg.target = "noise";
  auto model = train::init_model(cfg);
  auto image = toy_images(1, 16, 4)[0];
  Rng rng(2);
  auto [corrupted, recon] = train::reconstruct(model, image, 3, rng);
  CHECK_FALSE(torch::equal(corrupted, image));
  CHECK(recon.sizes().equals(image.sizes()));
  CHECK(torch::isfinite(recon).all().item<bool>());
}
