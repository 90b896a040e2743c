#include <cstdint>
#include <limits>
#include <sstream>
#include <vector>

#include "mdm/errors.hpp"
#include "mdm/features.hpp"

namespace mdm::feat {

namespace {

// Squared euclidean distances [N,k] between points and centers, computed in
// float64 for stable inertia comparisons across restarts.
torch::Tensor sq_dists(const torch::Tensor& pts, const torch::Tensor& ctr) {
  torch::Tensor d = torch::cdist(pts, ctr);
  return d * d;
}

// Deterministic argmin along dim 1 with ties broken toward the smaller
// index (torch::argmin's tie behaviour is unspecified).
torch::Tensor argmin_rows(const torch::Tensor& d) {
  const std::int64_t k = d.size(1);
  torch::Tensor mins = std::get<0>(d.min(/*dim=*/1, /*keepdim=*/true));
  torch::Tensor idx = torch::arange(k, torch::kInt64).unsqueeze(0);
  return torch::where(d == mins, idx, torch::full_like(idx, k)).amin(1);
}

// k-means++ seeding: first center uniform, each next center drawn with
// probability proportional to its squared distance to the nearest chosen
// center.  The weighted draw walks the cumulative sum so it is fully
// determined by the rng stream.
torch::Tensor plus_plus_init(const torch::Tensor& pts, std::int64_t k,
                             Rng& rng) {
  const std::int64_t n = pts.size(0);
  std::vector<std::int64_t> chosen;
  chosen.push_back(rng.uniform_int(0, n - 1));
  torch::Tensor d2 =
      sq_dists(pts, pts.index({torch::tensor(chosen)})).squeeze(1);
  while (static_cast<std::int64_t>(chosen.size()) < k) {
    auto acc = d2.accessor<double, 1>();
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) total += acc[i];
    std::int64_t next = -1;
    if (total <= 0.0) {
      // All remaining points coincide with a chosen center; fall back to a
      // uniform draw (caller guarantees enough distinct points overall).
      next = rng.uniform_int(0, n - 1);
    } else {
      const double u = rng.uniform() * total;
      double run = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        run += acc[i];
        if (u < run) {
          next = i;
          break;
        }
      }
      if (next < 0) next = n - 1;  // guard against rounding at the far end
    }
    chosen.push_back(next);
    torch::Tensor nd =
        sq_dists(pts, pts.index({torch::tensor({next})})).squeeze(1);
    d2 = torch::minimum(d2, nd);
  }
  return pts.index({torch::tensor(chosen)}).clone();
}

struct LloydResult {
  torch::Tensor assign;
  torch::Tensor centers;
  double inertia = std::numeric_limits<double>::infinity();
};

LloydResult lloyd(const torch::Tensor& pts, std::int64_t k, Rng& rng,
                  std::int64_t max_iter) {
  const std::int64_t n = pts.size(0);
  torch::Tensor centers = plus_plus_init(pts, k, rng);
  torch::Tensor assign = torch::full({n}, -1, torch::kInt64);
  for (std::int64_t it = 0; it < max_iter; ++it) {
    torch::Tensor d = sq_dists(pts, centers);
    torch::Tensor next = argmin_rows(d);
    if (it > 0 && torch::equal(next, assign)) break;
    assign = next;
    for (std::int64_t c = 0; c < k; ++c) {
      torch::Tensor mask = assign == c;
      if (mask.any().item<bool>()) {
        centers.index_put_({c}, pts.index({mask}).mean(0));
      }
      // An emptied cluster keeps its previous center; it can re-acquire
      // points on a later iteration.
    }
  }
  torch::Tensor d = sq_dists(pts, centers);
  LloydResult r;
  r.assign = argmin_rows(d);
  r.centers = centers;
  r.inertia = std::get<0>(d.min(1)).sum().item<double>();
  return r;
}

}  // namespace

std::tuple<torch::Tensor, torch::Tensor, double> kmeans(
    const torch::Tensor& points, std::int64_t k, Rng& rng,
    std::int64_t restarts) {
  if (points.dim() != 2) {
    throw DimensionError("kmeans expects a [N,D] matrix, got " +
                         std::to_string(points.dim()) + " dims");
  }
  const std::int64_t n = points.size(0);
  if (k < 2) {
    throw ConfigError("kmeans needs k >= 2, got " + std::to_string(k));
  }
  if (restarts < 1) {
    throw ConfigError("kmeans needs at least one restart");
  }
  if (n < 1) {
    throw DataError("kmeans received an empty point set");
  }
  torch::Tensor pts = points.to(torch::kFloat64).contiguous();
  torch::Tensor distinct = std::get<0>(torch::unique_dim(pts, /*dim=*/0));
  if (distinct.size(0) < k) {
    std::ostringstream msg;
    msg << "kmeans with k=" << k << " needs at least " << k
        << " distinct points, found " << distinct.size(0);
    throw DegenerateInputError(msg.str());
  }

  constexpr std::int64_t kMaxLloydIter = 100;
  LloydResult best;
  for (std::int64_t r = 0; r < restarts; ++r) {
    LloydResult cur = lloyd(pts, k, rng, kMaxLloydIter);
    if (cur.inertia < best.inertia) best = cur;
  }
  return {best.assign, best.centers.to(points.dtype()), best.inertia};
}

torch::Tensor kmeans_feature_clusters(const FeatureStack& stack,
                                      std::int64_t k, Rng& rng) {
  if (stack.data.dim() != 3) {
    throw DimensionError("feature stack must be [C,H,W]");
  }
  const std::int64_t h = stack.data.size(1);
  const std::int64_t w = stack.data.size(2);
  torch::Tensor pts =
      stack.data.permute({1, 2, 0}).reshape({h * w, stack.data.size(0)});
  auto [assign, centers, inertia] = kmeans(pts, k, rng);
  (void)centers;
  (void)inertia;
  return assign.view({h, w});
}

}  // namespace mdm::feat
