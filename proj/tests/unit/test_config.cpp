#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mdm/config.hpp"
#include "mdm/errors.hpp"

using namespace mdm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() /
             ("mdm-config-test-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("run config roundtrips through JSON") {
  cfg::RunConfig c;
  c.seed = 77;
  c.data.manifest = "data/manifest.txt";
  c.data.channels = 3;
  c.pretrain.model.base_width = 32;
  c.pretrain.model.channel_mults = {1, 2, 4};
  c.pretrain.model.attention_resolutions = {8};
  c.pretrain.method = "ddpm";
  c.pretrain.target = "noise";
  c.pretrain.loss = losses::LossKind::kMse;
  c.pretrain.t_max = 250;
  c.pretrain.iterations = 123;
  c.pretrain.lr = 3e-4;
  c.features.ts = {5, 10};
  c.features.blocks = {1, 2};
  c.features.clean_input = true;
  c.features.upsample = "nearest";
  c.head.hidden = {64};
  c.head.lr = 2e-3;
  c.eval.window = 128;
  c.eval.average_logits = true;

  auto j = cfg::run_to_json(c);
  auto back = cfg::run_from_json(j);

  CHECK(back.seed == 77);
  CHECK(back.data.manifest == "data/manifest.txt");
  CHECK(back.data.channels == 3);
  CHECK(back.pretrain.model.base_width == 32);
  CHECK((back.pretrain.model.channel_mults == std::vector<std::int64_t>{1, 2, 4}));
  CHECK(back.pretrain.model.attention_resolutions == std::set<std::int64_t>{8});
  CHECK(back.pretrain.method == "ddpm");
  CHECK(back.pretrain.target == "noise");
  CHECK(back.pretrain.loss == losses::LossKind::kMse);
  CHECK(back.pretrain.t_max == 250);
  CHECK(back.pretrain.iterations == 123);
  CHECK(back.pretrain.lr == doctest::Approx(3e-4));
  CHECK((back.features.ts == std::vector<std::int64_t>{5, 10}));
  CHECK((back.features.blocks == std::vector<std::int64_t>{1, 2}));
  CHECK(back.features.clean_input);
  CHECK(back.features.upsample == "nearest");
  CHECK(back.head.hidden == std::vector<std::int64_t>{64});
  CHECK(back.head.lr == doctest::Approx(2e-3));
  CHECK(back.eval.window == 128);
  CHECK(back.eval.average_logits);
  // the experiment seed propagates into the pretraining stage
  CHECK(back.pretrain.seed == 77);
}

TEST_CASE("partial configs keep defaults for missing sections") {
  auto j = nlohmann::json::parse(R"({"seed": 3, "pretrain": {"iterations": 7}})");
  auto c = cfg::run_from_json(j);
  CHECK(c.seed == 3);
  CHECK(c.pretrain.iterations == 7);
  CHECK(c.pretrain.method == "mdm");        // default
  CHECK(c.pretrain.t_max == 100);           // default
  CHECK(c.pretrain.model.base_width == 64); // untouched model section
  CHECK((c.head.hidden == std::vector<std::int64_t>{128, 128}));
}

TEST_CASE("unknown keys are rejected with the offending name") {
  auto j = nlohmann::json::parse(R"({"model": {"bsae_width": 32}})");
  CHECK_THROWS_WITH_AS(cfg::run_from_json(j),
                       doctest::Contains("bsae_width"), ConfigError);

  auto j2 = nlohmann::json::parse(R"({"pretrain": {"iteratons": 10}})");
  CHECK_THROWS_AS(cfg::run_from_json(j2), ConfigError);

  auto j3 = nlohmann::json::parse(R"({"nonsense": 1})");
  CHECK_THROWS_AS(cfg::run_from_json(j3), ConfigError);
}

TEST_CASE("type mismatches are schema errors") {
  auto j = nlohmann::json::parse(R"({"pretrain": {"iterations": "many"}})");
  CHECK_THROWS_AS(cfg::run_from_json(j), ConfigError);

  auto j2 = nlohmann::json::parse(R"({"model": {"channel_mults": 3}})");
  CHECK_THROWS_AS(cfg::run_from_json(j2), ConfigError);
}

TEST_CASE("set overrides reach nested keys and parse JSON values") {
  nlohmann::json j = nlohmann::json::object();
  cfg::apply_set_override(j, "pretrain.lr=0.005");
  cfg::apply_set_override(j, "model.channel_mults=[1,2]");
  cfg::apply_set_override(j, "data.manifest=sets/a/manifest.txt");
  cfg::apply_set_override(j, "eval.average_logits=true");
  cfg::apply_set_override(j, "seed=9");

  auto c = cfg::run_from_json(j);
  CHECK(c.pretrain.lr == doctest::Approx(0.005));
  CHECK((c.pretrain.model.channel_mults == std::vector<std::int64_t>{1, 2}));
  CHECK(c.data.manifest == "sets/a/manifest.txt");
  CHECK(c.eval.average_logits);
  CHECK(c.seed == 9);
}

TEST_CASE("overrides replace values from a loaded config") {
  auto j = nlohmann::json::parse(R"({"pretrain": {"iterations": 100, "lr": 1e-3}})");
  cfg::apply_set_override(j, "pretrain.iterations=250");
  auto c = cfg::run_from_json(j);
  CHECK(c.pretrain.iterations == 250);
  CHECK(c.pretrain.lr == doctest::Approx(1e-3));  // untouched key survives
}

TEST_CASE("malformed overrides are rejected") {
  nlohmann::json j = nlohmann::json::object();
  CHECK_THROWS_AS(cfg::apply_set_override(j, "no-equals-sign"), ConfigError);
  CHECK_THROWS_AS(cfg::apply_set_override(j, "=5"), ConfigError);
  CHECK_THROWS_AS(cfg::apply_set_override(j, "a..b=5"), ConfigError);
}

TEST_CASE("config files load with comments and fail with context") {
  auto dir = temp_dir();
  {
    std::ofstream out(dir / "good.json");
    out << "{\n  // experiment seed\n  \"seed\": 4\n}\n";
  }
  auto c = cfg::load_run_config(dir / "good.json");
  CHECK(c.seed == 4);

  {
    std::ofstream out(dir / "bad.json");
    out << "{{{{";
  }
  CHECK_THROWS_AS(cfg::load_run_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(cfg::load_run_config(dir / "missing.json"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("head serialization keeps runtime-resolved dimensions") {
  seg::SegHeadConfig h;
  h.input_dim = 96;
  h.num_classes = 3;
  h.hidden = {32, 16};
  auto back = cfg::head_from_json(cfg::head_to_json(h));
  CHECK(back.input_dim == 96);
  CHECK(back.num_classes == 3);
  CHECK((back.hidden == std::vector<std::int64_t>{32, 16}));
}
