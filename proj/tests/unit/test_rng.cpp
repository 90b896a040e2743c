#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "mdm/errors.hpp"
#include "mdm/rng.hpp"

using mdm::Rng;

TEST_CASE("same seed gives the same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
  CHECK(same < 5);
}

TEST_CASE("uniform_int stays in bounds and covers the range") {
  Rng rng(7);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto v = rng.uniform_int(-3, 4);
    CHECK(v >= -3);
    CHECK(v <= 4);
    seen.insert(v);
  }
  CHECK(seen.size() == 8);
}

TEST_CASE("uniform_int is unbiased (chi-square, 10 bins)") {
  Rng rng(123);
  const int n = 100000, bins = 10;
  std::vector<int> counts(bins, 0);
  for (int i = 0; i < n; ++i) ++counts[rng.uniform_int(0, bins - 1)];
  const double expected = static_cast<double>(n) / bins;
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // df = 9, critical value at alpha = 0.001
  CHECK(chi2 < 27.88);
}

TEST_CASE("uniform lies in [0,1) with sane moments") {
  Rng rng(5);
  const int n = 100000;
  double sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sumsq += u * u;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 4.0 / std::sqrt(12.0 * n));
  CHECK(std::abs(var - 1.0 / 12.0) < 0.002);
}

TEST_CASE("normal has standard moments") {
  Rng rng(9);
  const int n = 100000;
  double sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  // var of sample variance for normal is ~2/n
  CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("shuffle produces a permutation, deterministically") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  Rng a(11), b(11);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::sort(w.begin(), w.end());
  std::vector<int> id(50);
  std::iota(id.begin(), id.end(), 0);
  CHECK(w == id);
}

TEST_CASE("state roundtrip resumes the exact stream") {
  Rng rng(77);
  for (int i = 0; i < 37; ++i) rng.next_u64();
  const auto s = rng.state();
  std::vector<std::uint64_t> first;
  for (int i = 0; i < 20; ++i) first.push_back(rng.next_u64());
  rng.set_state(s);
  for (int i = 0; i < 20; ++i) CHECK(rng.next_u64() == first[i]);
}

TEST_CASE("set_state rejects garbage") {
  Rng rng(1);
  CHECK_THROWS_AS(rng.set_state("not a state"), mdm::DataError);
}

TEST_CASE("tensor fills have requested shape, dtype, and stream position") {
  Rng a(3), b(3);
  auto t = a.normal_tensor({2, 3, 4}, torch::kFloat);
  CHECK(t.sizes() == torch::IntArrayRef({2, 3, 4}));
  CHECK(t.scalar_type() == torch::kFloat);
  auto u = b.normal_tensor({2, 3, 4}, torch::kFloat);
  CHECK(torch::equal(t, u));
  // both streams advanced identically
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derive_seed separates purposes and depends on both inputs") {
  const auto a = mdm::derive_seed(42, "mask");
  const auto b = mdm::derive_seed(42, "timestep");
  const auto c = mdm::derive_seed(43, "mask");
  CHECK(a != b);
  CHECK(a != c);
  CHECK(mdm::derive_seed(42, "mask") == a);
}

TEST_CASE("hash_tensor distinguishes contents") {
  auto x = torch::zeros({4, 4});
  auto y = torch::zeros({4, 4});
  CHECK(mdm::hash_tensor(x) == mdm::hash_tensor(y));
  y[0][0] = 1.0f;
  CHECK(mdm::hash_tensor(x) != mdm::hash_tensor(y));
}
