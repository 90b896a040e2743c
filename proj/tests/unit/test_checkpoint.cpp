#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mdm/adam.hpp"
#include "mdm/checkpoint.hpp"
#include "mdm/errors.hpp"
#include "mdm/rng.hpp"

using namespace mdm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("mdm_test_" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("adam matches the reference implementation on a quadratic") {
  torch::manual_seed(7);
  auto target = torch::randn({6, 5}, torch::kFloat64);

  auto p_ours = torch::randn({6, 5}, torch::kFloat64).requires_grad_(true);
  auto p_ref = p_ours.detach().clone().requires_grad_(true);

  opt::Adam ours({p_ours}, {.lr = 1e-2});
  torch::optim::Adam ref({p_ref}, torch::optim::AdamOptions(1e-2)
                                      .betas({0.9, 0.999})
                                      .eps(1e-8));

  for (int i = 0; i < 50; ++i) {
    ours.zero_grad();
    ref.zero_grad();
    auto loss_a = (p_ours - target).pow(2).sum();
    auto loss_b = (p_ref - target).pow(2).sum();
    loss_a.backward();
    loss_b.backward();
    ours.step();
    ref.step();
  }
  CHECK(torch::allclose(p_ours, p_ref, 1e-9, 1e-12));
  CHECK(ours.steps() == 50);
}

TEST_CASE("adam export/import resumes the trajectory bitwise") {
  torch::manual_seed(11);
  auto target = torch::randn({4, 4});

  auto run = [&](int total, int break_at) {
    auto p = torch::full({4, 4}, 0.5).requires_grad_(true);
    opt::Adam o({p}, {.lr = 5e-3});
    std::map<std::string, torch::Tensor> snap;
    torch::Tensor p_snap;
    for (int i = 0; i < total; ++i) {
      if (i == break_at) {
        // Simulate a restart: serialize everything, rebuild from scratch.
        o.export_state(snap, "opt");
        for (auto& [k, v] : snap) snap[k] = v.clone();
        p_snap = p.detach().clone();
        auto p2 = p_snap.clone().requires_grad_(true);
        opt::Adam o2({p2}, {.lr = 5e-3});
        o2.import_state(snap, "opt");
        p = p2;
        o = std::move(o2);
      }
      o.zero_grad();
      auto loss = (p - target).pow(2).sum() + p.sin().sum();
      loss.backward();
      o.step();
    }
    return p.detach().clone();
  };

  auto straight = run(20, -1);
  auto resumed = run(20, 9);
  CHECK(torch::equal(straight, resumed));
}

TEST_CASE("adam leaves parameters with undefined grads untouched") {
  auto a = torch::ones({3}).requires_grad_(true);
  auto b = torch::ones({3}).requires_grad_(true);
  opt::Adam o({a, b}, {.lr = 0.1});
  auto loss = (a * 2).sum();  // b never participates
  loss.backward();
  o.step();
  CHECK(!torch::equal(a.detach(), torch::ones({3})));
  CHECK(torch::equal(b.detach(), torch::ones({3})));
}

TEST_CASE("adam rejects bad hyper-parameters and bad state") {
  auto p = torch::ones({2}).requires_grad_(true);
  CHECK_THROWS_AS(opt::Adam({p}, {.lr = 0.0}), ConfigError);
  CHECK_THROWS_AS(opt::Adam({p}, {.beta1 = 1.0}), ConfigError);

  opt::Adam o({p}, {});
  std::map<std::string, torch::Tensor> state;
  o.export_state(state, "opt");

  opt::Adam o2({p.detach().clone().requires_grad_(true)}, {});
  std::map<std::string, torch::Tensor> missing = state;
  missing.erase("opt.m.0");
  CHECK_THROWS_AS(o2.import_state(missing, "opt"), DataError);

  std::map<std::string, torch::Tensor> wrong_shape = state;
  wrong_shape["opt.m.0"] = torch::zeros({5});
  CHECK_THROWS_AS(o2.import_state(wrong_shape, "opt"), DataError);
}

TEST_CASE("checkpoint round-trips metadata and every tensor dtype") {
  auto dir = temp_dir("ckpt_roundtrip");
  auto path = dir / "model.ckpt";

  ckpt::Checkpoint c;
  c.meta = {{"iteration", 1234},
            {"config", {{"lr", 1e-4}, {"method", "masking"}}},
            {"rng", "deadbeef"},
            {"list", {1, 2, 3}}};
  Rng rng(3);
  c.tensors["w.float32"] = rng.normal_tensor({3, 4, 5});
  c.tensors["w.float64"] = rng.normal_tensor({7}, torch::kFloat64);
  c.tensors["w.int64"] = torch::tensor(
      std::vector<std::int64_t>{-5, 0, 9223372036854775807LL});
  c.tensors["w.uint8"] = torch::arange(0, 256, torch::kInt64).to(torch::kUInt8);
  c.tensors["w.int32"] = torch::tensor({-1, 2}, torch::kInt32);
  c.tensors["w.bool"] = torch::tensor({true, false, true});
  c.tensors["w.scalar"] = torch::tensor(3.5);
  c.tensors["w.empty"] = torch::empty({0, 4});

  ckpt::save(path, c);
  auto back = ckpt::load(path);

  CHECK(back.meta == c.meta);
  REQUIRE(back.tensors.size() == c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    REQUIRE_MESSAGE(back.tensors.count(name) == 1, name);
    const auto& r = back.tensors.at(name);
    const bool same_dtype = r.scalar_type() == t.scalar_type();
    CHECK_MESSAGE(same_dtype, name);
    CHECK_MESSAGE(r.sizes() == t.sizes(), name);
    CHECK_MESSAGE(torch::equal(r, t), name);
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint save leaves no temporary files behind") {
  auto dir = temp_dir("ckpt_atomic");
  ckpt::Checkpoint c;
  c.meta = {{"ok", true}};
  c.tensors["t"] = torch::ones({2, 2});
  ckpt::save(dir / "a.ckpt", c);
  ckpt::save(dir / "a.ckpt", c);  // overwrite must also be clean
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    ++files;
    CHECK(e.path().extension() != ".tmp");
  }
  CHECK(files == 1);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint load rejects malformed files") {
  auto dir = temp_dir("ckpt_bad");
  auto path = dir / "model.ckpt";

  CHECK_THROWS_AS(ckpt::load(dir / "nonexistent.ckpt"), IoError);

  ckpt::Checkpoint c;
  c.meta = {{"x", 1}};
  c.tensors["t"] = torch::arange(0, 100, torch::kFloat32);
  ckpt::save(path, c);

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(ckpt::load(path), DataError);
  }
  SUBCASE("unsupported version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 999;
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    f.close();
    CHECK_THROWS_AS(ckpt::load(path), DataError);
  }
  SUBCASE("truncation anywhere is detected") {
    const auto full = static_cast<std::size_t>(fs::file_size(path));
    std::ifstream in(path, std::ios::binary);
    std::string bytes(full, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(full));
    in.close();
    for (std::size_t keep :
         {std::size_t{7}, std::size_t{10}, std::size_t{20}, full / 2,
          full - 1}) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(bytes.data(), static_cast<std::streamsize>(keep));
      out.close();
      CHECK_THROWS_AS(ckpt::load(path), DataError);
    }
  }
  SUBCASE("garbage metadata") {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write("MDMCKPT\x01", 8);
    const std::uint32_t v = 1;
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    const std::uint64_t len = 4;
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write("{{{{", 4);
    const std::uint64_t zero = 0;
    out.write(reinterpret_cast<const char*>(&zero), sizeof(zero));
    out.close();
    CHECK_THROWS_AS(ckpt::load(path), DataError);
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint rejects unsupported dtypes and long names") {
  auto dir = temp_dir("ckpt_reject");
  ckpt::Checkpoint c;
  c.tensors["half"] = torch::zeros({2}, torch::kFloat16);
  CHECK_THROWS_AS(ckpt::save(dir / "x.ckpt", c), DataError);

  ckpt::Checkpoint c2;
  c2.tensors[std::string(70000, 'n')] = torch::zeros({2});
  CHECK_THROWS_AS(ckpt::save(dir / "y.ckpt", c2), DataError);
  fs::remove_all(dir);
}
