#include <doctest.h>

#include <filesystem>
#include <vector>

#include <torch/torch.h>

#include "mdm/errors.hpp"
#include "mdm/features.hpp"
#include "mdm/pretrain.hpp"
#include "mdm/rng.hpp"
#include "mdm/seghead.hpp"

using namespace mdm;
namespace fs = std::filesystem;

namespace {

// Hand-built feature stack whose two channels literally encode the label:
// channel 0 high where class 1, channel 1 high where class 2.
feat::FeatureStack coded_stack(const torch::Tensor& label, Rng& rng) {
  const auto h = label.size(0);
  const auto w = label.size(1);
  auto f = rng.normal_tensor({2, h, w}) * 0.05;
  f[0] += (label == 1).to(torch::kFloat32) * 2.0;
  f[1] += (label == 2).to(torch::kFloat32) * 2.0;
  feat::FeatureStack s;
  s.data = f;
  s.ts = {1};
  s.blocks = {0};
  s.model_id = 42;
  return s;
}

torch::Tensor striped_label(std::int64_t h, std::int64_t w) {
  auto l = torch::zeros({h, w}, torch::kInt64);
  l.slice(0, 0, h / 3) = 0;
  l.slice(0, h / 3, 2 * h / 3) = 1;
  l.slice(0, 2 * h / 3, h) = 2;
  return l;
}

train::PretrainedModel tiny_model() {
  train::PretrainConfig cfg;
  cfg.model.in_channels = 1;
  cfg.model.out_channels = 1;
  cfg.model.input_size = 16;
  cfg.model.base_width = 8;
  cfg.model.channel_mults = {1};
  cfg.model.attention_resolutions = {};
  cfg.method = "mdm";
  cfg.t_max = 10;
  cfg.patch = 4;
  cfg.seed = 5;
  return train::init_model(cfg);
}

}  // namespace

TEST_CASE("head construction is deterministic by seed") {
  seg::SegHeadConfig cfg;
  cfg.input_dim = 6;
  cfg.num_classes = 3;
  auto a = seg::build_seg_head(cfg, 9);
  auto b = seg::build_seg_head(cfg, 9);
  auto c = seg::build_seg_head(cfg, 10);
  auto pa = a->parameters();
  auto pb = b->parameters();
  auto pc = c->parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true;
  bool any_diff_c = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && torch::equal(pa[i], pb[i]);
    any_diff_c = any_diff_c || !torch::equal(pa[i], pc[i]);
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

TEST_CASE("head config validation") {
  seg::SegHeadConfig cfg;
  cfg.input_dim = 4;
  cfg.num_classes = 2;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.input_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.hidden = {0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.pixel_batch = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("head learns linearly separable pixels almost perfectly") {
  Rng rng(3);
  auto label = striped_label(24, 24);
  std::vector<feat::FeatureStack> stacks = {coded_stack(label, rng)};
  std::vector<torch::Tensor> labels = {label};

  seg::SegHeadConfig cfg;
  cfg.num_classes = 3;
  cfg.hidden = {16};
  cfg.lr = 5e-3;
  cfg.pixel_batch = 64;
  cfg.patience = 200;
  cfg.max_steps = 3000;
  Rng train_rng(8);
  auto result = seg::train_head(stacks, labels, cfg, train_rng);
  CHECK(result.absent_classes.empty());
  CHECK(result.steps <= 3000);
  REQUIRE(static_cast<std::int64_t>(result.losses.size()) == result.steps);

  auto pred = seg::predict(result.head, stacks[0]);
  const double acc =
      (pred == label).to(torch::kFloat64).mean().item<double>();
  CHECK(acc > 0.97);

  auto lmap = seg::logits_map(result.head, stacks[0]);
  CHECK((lmap.sizes().equals(torch::IntArrayRef{3, 24, 24})));
}

TEST_CASE("training is deterministic for a fixed rng") {
  Rng rng(3);
  auto label = striped_label(12, 12);
  std::vector<feat::FeatureStack> stacks = {coded_stack(label, rng)};
  std::vector<torch::Tensor> labels = {label};
  seg::SegHeadConfig cfg;
  cfg.num_classes = 3;
  cfg.hidden = {8};
  cfg.max_steps = 80;
  cfg.patience = 80;

  Rng r1(5), r2(5);
  auto a = seg::train_head(stacks, labels, cfg, r1);
  auto b = seg::train_head(stacks, labels, cfg, r2);
  CHECK(a.losses == b.losses);
  auto pa = a.head->parameters();
  auto pb = b.head->parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(torch::equal(pa[i], pb[i]));
  }
}

TEST_CASE("classes missing from the labels are reported, not dropped") {
  Rng rng(4);
  auto label = (striped_label(12, 12) == 1).to(torch::kInt64);  // only 0/1
  std::vector<feat::FeatureStack> stacks = {coded_stack(label, rng)};
  std::vector<torch::Tensor> labels = {label};
  seg::SegHeadConfig cfg;
  cfg.num_classes = 4;  // classes 2 and 3 have no pixels anywhere
  cfg.hidden = {8};
  cfg.max_steps = 40;
  cfg.patience = 40;
  Rng r(5);
  auto result = seg::train_head(stacks, labels, cfg, r);
  CHECK((result.absent_classes == std::vector<std::int64_t>{2, 3}));
  auto lmap = seg::logits_map(result.head, stacks[0]);
  CHECK(lmap.size(0) == 4);  // output space keeps all classes
}

TEST_CASE("label values outside the class range fail loudly") {
  Rng rng(4);
  auto label = striped_label(12, 12);
  std::vector<feat::FeatureStack> stacks = {coded_stack(label, rng)};
  std::vector<torch::Tensor> labels = {label + 5};
  seg::SegHeadConfig cfg;
  cfg.num_classes = 3;
  Rng r(5);
  CHECK_THROWS_AS(seg::train_head(stacks, labels, cfg, r), DataError);

  // spatial mismatch between features and labels
  std::vector<torch::Tensor> wrong = {striped_label(10, 12)};
  CHECK_THROWS_AS(seg::train_head(stacks, wrong, cfg, r), DimensionError);
}

TEST_CASE("prediction ties resolve to the smaller class index") {
  seg::SegHeadConfig cfg;
  cfg.input_dim = 2;
  cfg.num_classes = 3;
  cfg.hidden = {};  // single linear layer, easy to zero out
  auto head = seg::build_seg_head(cfg, 1);
  {
    torch::NoGradGuard g;
    for (auto& p : head->parameters()) p.zero_();
  }
  feat::FeatureStack s;
  s.data = torch::randn({2, 5, 5});
  s.ts = {1};
  auto pred = seg::predict(head, s);
  // all logits are exactly zero -> three-way tie -> class 0 everywhere
  CHECK((torch::equal(pred, torch::zeros({5, 5}, torch::kInt64))));

  // bias one pair into a two-way tie between classes 1 and 2
  {
    torch::NoGradGuard g;
    auto params = head->named_parameters();
    (*params.find("out.bias"))[1] = 1.0;
    (*params.find("out.bias"))[2] = 1.0;
  }
  pred = seg::predict(head, s);
  CHECK((torch::equal(pred, torch::ones({5, 5}, torch::kInt64))));
}

TEST_CASE("sliding prediction matches a hand-stitched oracle") {
  auto model = tiny_model();
  feat::FeatureConfig fcfg;
  fcfg.ts = {2};

  seg::SegHeadConfig hcfg;
  hcfg.input_dim = feat::feature_dim(model, fcfg);
  hcfg.num_classes = 3;
  hcfg.hidden = {8};
  auto head = seg::build_seg_head(hcfg, 77);  // random head is fine here

  Rng rng(6);
  auto image = rng.uniform_tensor({1, 24, 24}) * 1.6 - 0.8;
  const std::int64_t window = 16;

  auto sliding = seg::predict_sliding(model, head, image, fcfg, window);
  CHECK((sliding.sizes().equals(torch::IntArrayRef{24, 24})));

  // oracle: origins along each axis are {0, 8}; later windows overwrite
  torch::Tensor expect = torch::zeros({24, 24}, torch::kInt64);
  for (std::int64_t y : {0, 8}) {
    for (std::int64_t x : {0, 8}) {
      auto crop = image.slice(1, y, y + window).slice(2, x, x + window)
                      .contiguous();
      auto stack = feat::extract_features_multi(model, crop, fcfg);
      expect.slice(0, y, y + window)
          .slice(1, x, x + window)
          .copy_(seg::predict(head, stack));
    }
  }
  CHECK(torch::equal(sliding, expect));
}

TEST_CASE("logit averaging changes only the overlap policy") {
  auto model = tiny_model();
  feat::FeatureConfig fcfg;
  fcfg.ts = {2};
  seg::SegHeadConfig hcfg;
  hcfg.input_dim = feat::feature_dim(model, fcfg);
  hcfg.num_classes = 3;
  hcfg.hidden = {8};
  auto head = seg::build_seg_head(hcfg, 77);

  Rng rng(6);
  auto image = rng.uniform_tensor({1, 24, 24}) * 1.6 - 0.8;
  auto averaged = seg::predict_sliding(model, head, image, fcfg, 16, true);
  auto stitched = seg::predict_sliding(model, head, image, fcfg, 16, false);
  CHECK(averaged.sizes().equals(stitched.sizes()));

  // non-overlapping pixels agree between the two policies
  // (rows/cols 16..24 are covered only by the last window)
  auto a_corner = averaged.slice(0, 16, 24).slice(1, 16, 24);
  auto s_corner = stitched.slice(0, 16, 24).slice(1, 16, 24);
  CHECK(torch::equal(a_corner, s_corner));
}

TEST_CASE("images smaller than the window are padded and cropped back") {
  auto model = tiny_model();
  feat::FeatureConfig fcfg;
  fcfg.ts = {1};
  seg::SegHeadConfig hcfg;
  hcfg.input_dim = feat::feature_dim(model, fcfg);
  hcfg.num_classes = 2;
  hcfg.hidden = {};
  auto head = seg::build_seg_head(hcfg, 3);

  Rng rng(2);
  auto image = rng.uniform_tensor({1, 10, 12}) * 1.6 - 0.8;
  auto pred = seg::predict_sliding(model, head, image, fcfg, 16);
  CHECK((pred.sizes().equals(torch::IntArrayRef{10, 12})));

  CHECK_THROWS_AS(seg::predict_sliding(model, head, image, fcfg, 0),
                  ConfigError);
}

TEST_CASE("head artifacts round-trip with their provenance") {
  seg::SegHeadConfig cfg;
  cfg.input_dim = 4;
  cfg.num_classes = 3;
  cfg.hidden = {8};
  auto head = seg::build_seg_head(cfg, 21);

  feat::FeatureConfig fcfg;
  fcfg.ts = {2, 5};
  fcfg.blocks = {0, 1};
  fcfg.clean_input = true;

  auto dir = fs::temp_directory_path() / "mdm-seghead-artifact";
  fs::create_directories(dir);
  auto path = dir / "head.ckpt";
  seg::save_head(path, head, fcfg, 1234567);

  auto art = seg::load_head(path);
  CHECK(art.model_id == 1234567);
  CHECK((art.features.ts == std::vector<std::int64_t>{2, 5}));
  CHECK((art.features.blocks == std::vector<std::int64_t>{0, 1}));
  CHECK(art.features.clean_input);
  CHECK(art.head->config().input_dim == 4);
  CHECK(art.head->config().num_classes == 3);

  auto pa = head->parameters();
  auto pb = art.head->parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(torch::equal(pa[i], pb[i]));
  }

  feat::FeatureStack s;
  s.data = torch::randn({4, 6, 6});
  s.ts = {2};
  CHECK(torch::equal(seg::predict(head, s), seg::predict(art.head, s)));
  fs::remove_all(dir);
}
