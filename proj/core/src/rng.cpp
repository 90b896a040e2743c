#include "mdm/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "mdm/errors.hpp"

namespace mdm {

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (lo > hi) throw RangeError("uniform_int: empty interval");
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<std::int64_t>(next_u64());  // full span
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % range);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // u1 in (0, 1] so the log is finite.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

torch::Tensor Rng::normal_tensor(torch::IntArrayRef shape,
                                 torch::ScalarType dtype) {
  auto out = torch::empty(shape, torch::kFloat64);
  auto* p = out.data_ptr<double>();
  const auto n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) p[i] = normal();
  return out.to(dtype);
}

torch::Tensor Rng::uniform_tensor(torch::IntArrayRef shape,
                                  torch::ScalarType dtype) {
  auto out = torch::empty(shape, torch::kFloat64);
  auto* p = out.data_ptr<double>();
  const auto n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) p[i] = uniform();
  return out.to(dtype);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (is.fail()) throw DataError("Rng::set_state: malformed state string");
}

std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t basis) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_tensor(const torch::Tensor& t) {
  auto c = t.contiguous();
  return hash_bytes(c.data_ptr(), c.numel() * c.element_size());
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = hash_bytes(tag.data(), tag.size());
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

}  // namespace mdm
