#include "mdm/metrics.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "mdm/errors.hpp"

namespace mdm::metrics {

namespace {

torch::Tensor as_map(const torch::Tensor& t, const char* who) {
  if (t.dim() != 2) {
    throw DimensionError(std::string(who) + ": expected [H,W], got " +
                         c10::str(t.sizes()));
  }
  if (t.numel() == 0) throw DimensionError(std::string(who) + ": empty map");
  return t.to(torch::kLong).contiguous();
}

void check_pair(const torch::Tensor& a, const torch::Tensor& b,
                const char* who) {
  if (!a.sizes().equals(b.sizes())) {
    throw DimensionError(std::string(who) + ": shape mismatch " +
                         c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
}

struct Overlap {
  std::int64_t inter = 0;
  std::int64_t a = 0;  // |pred fg|
  std::int64_t b = 0;  // |gt fg|
};

Overlap binary_overlap(const torch::Tensor& pred, const torch::Tensor& gt,
                       const char* who) {
  check_pair(pred, gt, who);
  auto p = as_map(pred, who).ne(0);
  auto g = as_map(gt, who).ne(0);
  Overlap o;
  o.inter = (p & g).sum().item<std::int64_t>();
  o.a = p.sum().item<std::int64_t>();
  o.b = g.sum().item<std::int64_t>();
  return o;
}

}  // namespace

double dice(const torch::Tensor& pred, const torch::Tensor& gt) {
  auto o = binary_overlap(pred, gt, "dice");
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.inter) / static_cast<double>(o.a + o.b);
}

double iou(const torch::Tensor& pred, const torch::Tensor& gt) {
  auto o = binary_overlap(pred, gt, "iou");
  const auto uni = o.a + o.b - o.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.inter) / static_cast<double>(uni);
}

namespace {

double class_mean(const torch::Tensor& pred, const torch::Tensor& gt,
                  std::int64_t num_classes, std::int64_t first_class,
                  bool dice_score, const char* who) {
  check_pair(pred, gt, who);
  auto p = as_map(pred, who);
  auto g = as_map(gt, who);
  if (num_classes < 1) throw RangeError(std::string(who) + ": K must be >= 1");
  for (const auto& m : {p, g}) {
    const auto lo = m.min().item<std::int64_t>();
    const auto hi = m.max().item<std::int64_t>();
    if (lo < 0 || hi >= num_classes) {
      throw DataError(std::string(who) + ": label outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
  double sum = 0.0;
  std::int64_t counted = 0;
  for (std::int64_t c = first_class; c < num_classes; ++c) {
    auto pc = p.eq(c);
    auto gc = g.eq(c);
    const auto inter = (pc & gc).sum().item<std::int64_t>();
    const auto np = pc.sum().item<std::int64_t>();
    const auto ng = gc.sum().item<std::int64_t>();
    if (np + ng == 0) continue;  // class absent from both maps
    sum += dice_score
               ? 2.0 * static_cast<double>(inter) /
                     static_cast<double>(np + ng)
               : static_cast<double>(inter) /
                     static_cast<double>(np + ng - inter);
    ++counted;
  }
  if (counted == 0) {
    throw DegenerateInputError(std::string(who) + ": no class present");
  }
  return sum / static_cast<double>(counted);
}

}  // namespace

double miou(const torch::Tensor& pred, const torch::Tensor& gt,
            std::int64_t num_classes) {
  return class_mean(pred, gt, num_classes, 0, /*dice_score=*/false, "miou");
}

double macro_dice(const torch::Tensor& pred, const torch::Tensor& gt,
                  std::int64_t num_classes, bool include_background) {
  return class_mean(pred, gt, num_classes, include_background ? 0 : 1,
                    /*dice_score=*/true, "macro_dice");
}

torch::Tensor connected_components(const torch::Tensor& binary,
                                   Connectivity conn) {
  auto fg = as_map(binary, "connected_components").ne(0).contiguous();
  const auto h = fg.size(0);
  const auto w = fg.size(1);
  auto out = torch::zeros({h, w}, torch::kLong);
  auto fga = fg.accessor<bool, 2>();
  auto outa = out.accessor<std::int64_t, 2>();

  std::int64_t next_id = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> stack;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (!fga[y][x] || outa[y][x] != 0) continue;
      ++next_id;
      stack.assign(1, {y, x});
      outa[y][x] = next_id;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        const std::int64_t dy4[] = {-1, 1, 0, 0};
        const std::int64_t dx4[] = {0, 0, -1, 1};
        const std::int64_t dy8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
        const std::int64_t dx8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
        const auto n = conn == Connectivity::k4 ? 4 : 8;
        const auto* dy = conn == Connectivity::k4 ? dy4 : dy8;
        const auto* dx = conn == Connectivity::k4 ? dx4 : dx8;
        for (int i = 0; i < n; ++i) {
          const auto ny = cy + dy[i];
          const auto nx = cx + dx[i];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (!fga[ny][nx] || outa[ny][nx] != 0) continue;
          outa[ny][nx] = next_id;
          stack.emplace_back(ny, nx);
        }
      }
    }
  }
  return out;
}

double aji(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_pair(pred, gt, "aji");
  auto p = as_map(pred, "aji");
  auto g = as_map(gt, "aji");
  if (p.min().item<std::int64_t>() < 0 || g.min().item<std::int64_t>() < 0) {
    throw DataError("aji: negative instance id");
  }

  // Instance sizes and pairwise intersections, keyed by the raw ids.
  std::map<std::int64_t, std::int64_t> psize, gsize;
  std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> inter;
  auto pa = p.accessor<std::int64_t, 2>();
  auto ga = g.accessor<std::int64_t, 2>();
  for (std::int64_t y = 0; y < p.size(0); ++y) {
    for (std::int64_t x = 0; x < p.size(1); ++x) {
      const auto pi = pa[y][x];
      const auto gi = ga[y][x];
      if (pi > 0) ++psize[pi];
      if (gi > 0) ++gsize[gi];
      if (pi > 0 && gi > 0) ++inter[{gi, pi}];
    }
  }
  if (psize.empty() && gsize.empty()) return 1.0;

  std::int64_t num = 0;
  std::int64_t den = 0;
  std::map<std::int64_t, bool> used;
  for (const auto& [gid, gn] : gsize) {
    std::int64_t best_pid = 0;
    double best_iou = 0.0;
    std::int64_t best_inter = 0;
    std::int64_t best_union = 0;
    for (const auto& [pid, pn] : psize) {
      auto it = inter.find({gid, pid});
      if (it == inter.end()) continue;
      const auto in = it->second;
      const auto un = gn + pn - in;
      const double v = static_cast<double>(in) / static_cast<double>(un);
      if (v > best_iou) {  // ties keep the smaller pid (map order)
        best_iou = v;
        best_pid = pid;
        best_inter = in;
        best_union = un;
      }
    }
    if (best_pid > 0) {
      num += best_inter;
      den += best_union;
      used[best_pid] = true;
    } else {
      den += gn;  // no prediction touches this instance
    }
  }
  for (const auto& [pid, pn] : psize) {
    if (!used.count(pid)) den += pn;
  }
  if (den == 0) return 1.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace mdm::metrics
