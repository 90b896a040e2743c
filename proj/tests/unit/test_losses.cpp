#include <doctest.h>

#include <cmath>

#include "mdm/errors.hpp"
#include "mdm/losses.hpp"
#include "mdm/rng.hpp"

using namespace mdm;
using namespace mdm::losses;

TEST_CASE("ssim of an image with itself is 1") {
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    auto x = rng.uniform_tensor({3, 32, 32}, torch::kDouble);
    CHECK(std::abs(ssim(x, x).item<double>() - 1.0) < 1e-6);
  }
  auto f = rng.uniform_tensor({1, 16, 16}, torch::kFloat);
  CHECK(std::abs(ssim(f, f).item<double>() - 1.0) < 1e-6);
}

TEST_CASE("constant images hit the closed form c1/(1+c1)") {
  auto x = torch::zeros({1, 16, 16}, torch::kDouble);
  auto y = torch::ones({1, 16, 16}, torch::kDouble);
  const double c1 = 1e-4;  // (k1*L)^2 with k1=0.01, L=1
  CHECK(std::abs(ssim(x, y).item<double>() - c1 / (1 + c1)) < 1e-8);
}

TEST_CASE("ssim is symmetric") {
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    auto x = rng.uniform_tensor({3, 24, 24}, torch::kDouble);
    auto y = rng.uniform_tensor({3, 24, 24}, torch::kDouble);
    CHECK(std::abs(ssim(x, y).item<double>() - ssim(y, x).item<double>()) <
          1e-6);
  }
}

TEST_CASE("ssim stays within [-1, 1] and loss within [0, 1]") {
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    auto x = rng.normal_tensor({2, 16, 16}, torch::kDouble);
    auto y = rng.normal_tensor({2, 16, 16}, torch::kDouble);
    const double s = ssim(x, y).item<double>();
    CHECK(s <= 1.0 + 1e-9);
    CHECK(s >= -1.0 - 1e-9);
    const double l = ssim_loss(x, y).item<double>();
    CHECK(l >= -1e-9);
    CHECK(l <= 1.0 + 1e-9);
    CHECK(l == doctest::Approx((1.0 - s) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("ssim_loss is zero on identical inputs") {
  Rng rng(4);
  auto x = rng.uniform_tensor({3, 20, 20}, torch::kDouble);
  CHECK(ssim_loss(x, x).item<double>() < 1e-6);
}

TEST_CASE("window shrinks for tiny images instead of failing") {
  Rng rng(5);
  auto x = rng.uniform_tensor({1, 4, 4}, torch::kDouble);
  CHECK(std::abs(ssim(x, x).item<double>() - 1.0) < 1e-6);
  auto y = rng.uniform_tensor({1, 4, 4}, torch::kDouble);
  CHECK(std::isfinite(ssim(x, y).item<double>()));
}

TEST_CASE("ssim validates shapes and params") {
  auto x = torch::rand({1, 8, 8});
  auto y = torch::rand({1, 8, 9});
  CHECK_THROWS_AS(ssim(x, y), DimensionError);
  SsimParams bad;
  bad.window_size = 10;
  CHECK_THROWS_AS(ssim(x, x, bad), ConfigError);
  bad = SsimParams{};
  bad.k1 = 0.0;
  CHECK_THROWS_AS(ssim(x, x, bad), ConfigError);
}

TEST_CASE("ssim_loss gradient matches central finite differences") {
  Rng rng(6);
  for (int img = 0; img < 20; ++img) {
    auto x = rng.uniform_tensor({1, 8, 8}, torch::kDouble);
    auto y0 = rng.uniform_tensor({1, 8, 8}, torch::kDouble);
    auto y = y0.clone().requires_grad_(true);
    ssim_loss(x, y).backward();
    auto grad = y.grad().clone();

    const double h = 1e-6;
    auto fd = torch::zeros_like(y0);
    for (std::int64_t i = 0; i < 8; ++i) {
      for (std::int64_t j = 0; j < 8; ++j) {
        auto yp = y0.clone();
        auto ym = y0.clone();
        yp[0][i][j] += h;
        ym[0][i][j] -= h;
        fd[0][i][j] = (ssim_loss(x, yp).item<double>() -
                       ssim_loss(x, ym).item<double>()) /
                      (2 * h);
      }
    }
    const double rel = ((grad - fd).norm() / fd.norm().clamp_min(1e-12))
                           .item<double>();
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("mse agrees with a naive two-pass oracle") {
  Rng rng(7);
  auto a = rng.normal_tensor({3, 10, 10}, torch::kDouble);
  auto b = rng.normal_tensor({3, 10, 10}, torch::kDouble);
  CHECK(losses::mse_loss(a, a).item<double>() == 0.0);
  CHECK(losses::mse_loss(torch::zeros({2, 4, 4}), torch::ones({2, 4, 4}))
            .item<double>() == doctest::Approx(1.0).epsilon(1e-12));

  auto aa = a.accessor<double, 3>();
  auto ba = b.accessor<double, 3>();
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 10; ++i) {
      for (int j = 0; j < 10; ++j) {
        const double d = aa[c][i][j] - ba[c][i][j];
        sum += d * d;
      }
    }
  }
  CHECK(std::abs(losses::mse_loss(a, b).item<double>() - sum / 300.0) < 1e-10);
}

TEST_CASE("cross entropy of uniform logits is ln K") {
  auto logits = torch::zeros({40, 7}, torch::kDouble);
  auto labels = torch::randint(0, 7, {40});
  CHECK(std::abs(cross_entropy(logits, labels).item<double>() -
                 std::log(7.0)) < 1e-9);
}

TEST_CASE("cross entropy vanishes for confident correct logits") {
  auto labels = torch::randint(0, 4, {30});
  auto logits = torch::zeros({30, 4}, torch::kDouble);
  logits.scatter_(1, labels.unsqueeze(1), 1e4);
  CHECK(cross_entropy(logits, labels).item<double>() < 1e-9);
}

TEST_CASE("cross entropy matches an explicit softmax oracle") {
  Rng rng(8);
  auto logits = rng.normal_tensor({25, 5}, torch::kDouble);
  auto labels = torch::randint(0, 5, {25});
  auto la = logits.accessor<double, 2>();
  auto ya = labels.accessor<std::int64_t, 1>();
  double total = 0.0;
  for (int i = 0; i < 25; ++i) {
    double denom = 0.0;
    for (int k = 0; k < 5; ++k) denom += std::exp(la[i][k]);
    total += -std::log(std::exp(la[i][ya[i]]) / denom);
  }
  CHECK(std::abs(cross_entropy(logits, labels).item<double>() - total / 25) <
        1e-6);
}

TEST_CASE("cross entropy honors the ignore label") {
  auto logits = torch::zeros({4, 3}, torch::kDouble);
  logits.index_put_({0, 0}, 100.0);
  logits.index_put_({1, 1}, 100.0);
  auto labels = torch::tensor({0L, 1L, 255L, 255L});
  CHECK(cross_entropy(logits, labels, 255).item<double>() < 1e-9);
  CHECK_THROWS_AS(cross_entropy(logits, labels), DataError);
  auto all_ignored = torch::full({4}, 255L);
  CHECK_THROWS_AS(cross_entropy(logits, all_ignored, 255), DataError);
}

TEST_CASE("recon loss remaps signed images for ssim only") {
  Rng rng(9);
  auto pred = rng.uniform_tensor({1, 16, 16}, torch::kDouble) * 2 - 1;
  auto target = rng.uniform_tensor({1, 16, 16}, torch::kDouble) * 2 - 1;
  auto direct =
      ssim_loss((pred + 1) / 2, (target + 1) / 2).item<double>();
  CHECK(recon_loss(pred, target, LossKind::kSsim).item<double>() ==
        doctest::Approx(direct).epsilon(1e-12));
  CHECK(recon_loss(pred, target, LossKind::kMse).item<double>() ==
        doctest::Approx(losses::mse_loss(pred, target).item<double>()).epsilon(1e-12));
  auto raw = ssim_loss(pred, target).item<double>();
  CHECK(recon_loss(pred, target, LossKind::kSsim, {}, false).item<double>() ==
        doctest::Approx(raw).epsilon(1e-12));
}

TEST_CASE("loss kind parsing round-trips") {
  CHECK(parse_loss_kind("ssim") == LossKind::kSsim);
  CHECK(parse_loss_kind("mse") == LossKind::kMse);
  CHECK_THROWS_AS(parse_loss_kind("l1"), ConfigError);
}
