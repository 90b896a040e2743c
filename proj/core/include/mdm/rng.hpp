#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace mdm {

// Deterministic random stream. Every stochastic operation in the toolkit
// draws from an explicitly passed Rng, so results are a pure function of
// (inputs, seed). The full stream state round-trips through a string,
// which is what makes bitwise checkpoint-resume possible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [lo, hi], inclusive. Rejection sampling keeps it unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Uniform on [0, 1).
  double uniform();

  // Standard normal via Box-Muller without pair caching, so the stream
  // state is exactly the engine state.
  double normal();

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[uniform_int(0, i)]);
    }
  }

  torch::Tensor normal_tensor(torch::IntArrayRef shape,
                              torch::ScalarType dtype = torch::kFloat32);
  torch::Tensor uniform_tensor(torch::IntArrayRef shape,
                               torch::ScalarType dtype = torch::kFloat32);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

// Stable seed derivation for named sub-streams (FNV-1a over the tag,
// mixed with the parent seed).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// FNV-1a over arbitrary bytes; used for content-addressed seeds and ids.
std::uint64_t hash_bytes(const void* data, std::size_t n,
                         std::uint64_t basis = 1469598103934665603ull);
std::uint64_t hash_tensor(const torch::Tensor& t);

}  // namespace mdm
