#include "mdm/seghead.hpp"

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include "mdm/adam.hpp"
#include "mdm/checkpoint.hpp"
#include "mdm/config.hpp"
#include "mdm/data.hpp"
#include "mdm/errors.hpp"
#include "mdm/losses.hpp"

namespace mdm::seg {

void SegHeadConfig::validate() const {
  if (input_dim < 1) {
    throw ConfigError("segmentation head needs input_dim >= 1, got " +
                      std::to_string(input_dim));
  }
  if (num_classes < 2) {
    throw ConfigError("segmentation head needs num_classes >= 2, got " +
                      std::to_string(num_classes));
  }
  for (std::int64_t hdim : hidden) {
    if (hdim < 1) {
      throw ConfigError("hidden layer width must be >= 1, got " +
                        std::to_string(hdim));
    }
  }
  if (lr <= 0.0) throw ConfigError("head learning rate must be positive");
  if (pixel_batch < 1) throw ConfigError("pixel_batch must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (smooth_window < 1) throw ConfigError("smooth_window must be >= 1");
}

SegHeadImpl::SegHeadImpl(SegHeadConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::int64_t in = cfg_.input_dim;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    auto layer = torch::nn::Linear(in, cfg_.hidden[i]);
    layers_.push_back(register_module("fc" + std::to_string(i), layer));
    in = cfg_.hidden[i];
  }
  layers_.push_back(
      register_module("out", torch::nn::Linear(in, cfg_.num_classes)));
}

torch::Tensor SegHeadImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 2 || x.size(1) != cfg_.input_dim) {
    std::ostringstream msg;
    msg << "head expects [N," << cfg_.input_dim << "] features, got "
        << x.sizes();
    throw DimensionError(msg.str());
  }
  torch::Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = torch::relu(layers_[i]->forward(h));
  }
  return layers_.back()->forward(h);
}

SegHead build_seg_head(const SegHeadConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(seed);
  return SegHead(cfg);
}

namespace {

// Flattened per-pixel training table: rows are pixels from every stack.
struct PixelTable {
  torch::Tensor features;  // [N, C_f] float32
  torch::Tensor labels;    // [N] int64
};

PixelTable flatten_pixels(const std::vector<feat::FeatureStack>& stacks,
                          const std::vector<torch::Tensor>& labels,
                          std::int64_t num_classes) {
  if (stacks.empty()) {
    throw DataError("head training needs at least one feature stack");
  }
  if (stacks.size() != labels.size()) {
    throw DimensionError("feature stacks and label maps must pair up (" +
                         std::to_string(stacks.size()) + " vs " +
                         std::to_string(labels.size()) + ")");
  }
  std::vector<torch::Tensor> xs;
  std::vector<torch::Tensor> ys;
  const std::int64_t dim = stacks.front().dim();
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const torch::Tensor& f = stacks[i].data;
    const torch::Tensor& l = labels[i];
    if (f.dim() != 3) throw DimensionError("feature stack must be [C,H,W]");
    if (f.size(0) != dim) {
      throw DimensionError("feature stacks disagree on channel count");
    }
    if (l.dim() != 2 || l.size(0) != f.size(1) || l.size(1) != f.size(2)) {
      std::ostringstream msg;
      msg << "label map " << i << " has shape " << l.sizes()
          << " but features are " << f.sizes();
      throw DimensionError(msg.str());
    }
    torch::Tensor lf = l.to(torch::kInt64);
    if (lf.numel() > 0) {
      const std::int64_t lo = lf.min().item<std::int64_t>();
      const std::int64_t hi = lf.max().item<std::int64_t>();
      if (lo < 0 || hi >= num_classes) {
        std::ostringstream msg;
        msg << "label values in map " << i << " span [" << lo << ", " << hi
            << "] but the head has " << num_classes << " classes";
        throw DataError(msg.str());
      }
    }
    xs.push_back(
        f.permute({1, 2, 0}).reshape({-1, dim}).to(torch::kFloat32));
    ys.push_back(lf.reshape({-1}));
  }
  return {torch::cat(xs, 0).contiguous(), torch::cat(ys, 0).contiguous()};
}

}  // namespace

TrainHeadResult train_head(const std::vector<feat::FeatureStack>& stacks,
                           const std::vector<torch::Tensor>& labels,
                           SegHeadConfig cfg, Rng& rng) {
  if (!stacks.empty() && cfg.input_dim == 0) {
    cfg.input_dim = stacks.front().dim();
  }
  cfg.validate();
  PixelTable table = flatten_pixels(stacks, labels, cfg.num_classes);
  const std::int64_t n = table.features.size(0);
  if (n < 1) throw DataError("head training needs at least one pixel");

  TrainHeadResult result;
  // Classes never seen in the labels stay in the output space; the head
  // simply cannot learn them from this data, which deserves a warning.
  torch::Tensor counts =
      torch::bincount(table.labels, /*weights=*/{}, cfg.num_classes);
  auto counts_acc = counts.accessor<std::int64_t, 1>();
  for (std::int64_t c = 0; c < cfg.num_classes; ++c) {
    if (counts_acc[c] == 0) result.absent_classes.push_back(c);
  }
  if (!result.absent_classes.empty()) {
    std::ostringstream msg;
    msg << "warning: class(es)";
    for (std::int64_t c : result.absent_classes) msg << " " << c;
    msg << " have no labeled pixels; the head keeps them in its output "
           "space but cannot learn them";
    std::cerr << msg.str() << std::endl;
  }

  SegHead head = build_seg_head(cfg, rng.next_u64());
  head->train();
  opt::Adam adam(head->parameters(), {.lr = cfg.lr});

  double window_sum = 0.0;
  double best_smoothed = std::numeric_limits<double>::infinity();
  std::int64_t best_step = 0;
  std::int64_t step = 0;
  while (step < cfg.max_steps) {
    ++step;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.pixel_batch));
    for (auto& v : idx) v = rng.uniform_int(0, n - 1);
    torch::Tensor sel = torch::tensor(idx);
    torch::Tensor x = table.features.index_select(0, sel);
    torch::Tensor y = table.labels.index_select(0, sel);

    torch::Tensor loss = losses::cross_entropy(head->forward(x), y);
    adam.zero_grad();
    loss.backward();
    adam.step();

    const double value = loss.item<double>();
    result.losses.push_back(value);
    window_sum += value;
    const std::int64_t w = cfg.smooth_window;
    if (static_cast<std::int64_t>(result.losses.size()) > w) {
      window_sum -= result.losses[result.losses.size() - 1 -
                                  static_cast<std::size_t>(w)];
    }
    const std::int64_t have = std::min<std::int64_t>(
        w, static_cast<std::int64_t>(result.losses.size()));
    const double smoothed = window_sum / static_cast<double>(have);
    if (smoothed < best_smoothed) {
      best_smoothed = smoothed;
      best_step = step;
    }
    if (step - best_step >= cfg.patience) break;
  }

  head->eval();
  result.head = head;
  result.steps = step;
  return result;
}

torch::Tensor logits_map(SegHead& head, const feat::FeatureStack& stack) {
  if (stack.data.dim() != 3) {
    throw DimensionError("feature stack must be [C,H,W]");
  }
  torch::NoGradGuard no_grad;
  head->eval();
  const std::int64_t c = stack.data.size(0);
  const std::int64_t h = stack.data.size(1);
  const std::int64_t w = stack.data.size(2);
  torch::Tensor rows =
      stack.data.permute({1, 2, 0}).reshape({h * w, c}).to(torch::kFloat32);
  torch::Tensor logits = head->forward(rows);  // [H*W, K]
  return logits.permute({1, 0}).reshape({logits.size(1), h, w}).contiguous();
}

namespace {

// Argmax over the class dim with ties broken toward the smaller class
// index (torch::argmax's tie order is unspecified).
torch::Tensor argmax_smallest(const torch::Tensor& logits_khw) {
  const std::int64_t k = logits_khw.size(0);
  torch::Tensor mx = std::get<0>(logits_khw.max(/*dim=*/0, /*keepdim=*/true));
  torch::Tensor idx = torch::arange(k, torch::kInt64).view({k, 1, 1});
  return torch::where(logits_khw == mx, idx, torch::full_like(idx, k))
      .amin(0);
}

}  // namespace

torch::Tensor predict(SegHead& head, const feat::FeatureStack& stack) {
  return argmax_smallest(logits_map(head, stack));
}

torch::Tensor predict_sliding(train::PretrainedModel& model, SegHead& head,
                              const torch::Tensor& image,
                              const feat::FeatureConfig& fcfg,
                              std::int64_t window, bool average_logits) {
  if (image.dim() != 3) {
    throw DimensionError("predict_sliding expects a [C,H,W] image");
  }
  if (window < 1) {
    throw ConfigError("sliding window must be >= 1, got " +
                      std::to_string(window));
  }
  const std::int64_t orig_h = image.size(1);
  const std::int64_t orig_w = image.size(2);
  torch::Tensor padded = data::reflect_pad_to(image, window, window);
  const std::int64_t h = padded.size(1);
  const std::int64_t w = padded.size(2);

  // Stride-window tiling with the final row/column snapped to the
  // right/bottom edge so coverage is exact.
  auto origins = [&](std::int64_t extent) {
    std::vector<std::int64_t> out;
    for (std::int64_t o = 0; o + window <= extent; o += window) {
      out.push_back(o);
    }
    if (out.back() + window < extent) out.push_back(extent - window);
    return out;
  };
  const std::vector<std::int64_t> ys = origins(h);
  const std::vector<std::int64_t> xs = origins(w);

  const std::int64_t k = head->config().num_classes;
  torch::Tensor pred = torch::zeros({h, w}, torch::kInt64);
  torch::Tensor logit_sum;
  torch::Tensor hits;
  if (average_logits) {
    logit_sum = torch::zeros({k, h, w}, torch::kFloat32);
    hits = torch::zeros({h, w}, torch::kFloat32);
  }

  for (std::int64_t y : ys) {
    for (std::int64_t x : xs) {
      torch::Tensor crop =
          padded.slice(1, y, y + window).slice(2, x, x + window).contiguous();
      feat::FeatureStack stack = feat::extract_features_multi(model, crop, fcfg);
      if (average_logits) {
        torch::Tensor lg = logits_map(head, stack);
        logit_sum.slice(1, y, y + window).slice(2, x, x + window) += lg;
        hits.slice(0, y, y + window).slice(1, x, x + window) += 1.0f;
      } else {
        pred.slice(0, y, y + window)
            .slice(1, x, x + window)
            .copy_(predict(head, stack));
      }
    }
  }
  if (average_logits) {
    pred = argmax_smallest(logit_sum / hits.unsqueeze(0));
  }

  if (h != orig_h || w != orig_w) {
    const std::int64_t y0 = (h - orig_h) / 2;
    const std::int64_t x0 = (w - orig_w) / 2;
    pred = pred.slice(0, y0, y0 + orig_h).slice(1, x0, x0 + orig_w);
  }
  return pred.contiguous();
}

void save_head(const std::filesystem::path& path, const SegHead& head,
               const feat::FeatureConfig& features, std::uint64_t model_id) {
  ckpt::Checkpoint ck;
  ck.meta["kind"] = "seg-head";
  ck.meta["head"] = cfg::head_to_json(head->config());
  ck.meta["features"] = cfg::features_to_json(features);
  ck.meta["model_id"] = model_id;
  for (const auto& p : head->named_parameters()) {
    ck.tensors["param." + p.key()] = p.value().detach().clone();
  }
  ckpt::save(path, ck);
}

HeadArtifact load_head(const std::filesystem::path& path) {
  ckpt::Checkpoint ck = ckpt::load(path);
  if (!ck.meta.contains("kind") || ck.meta["kind"] != "seg-head") {
    throw DataError("checkpoint at " + path.string() +
                    " is not a segmentation head");
  }
  HeadArtifact art;
  art.features = cfg::features_from_json(ck.meta.at("features"));
  art.model_id = ck.meta.at("model_id").get<std::uint64_t>();
  SegHeadConfig hcfg = cfg::head_from_json(ck.meta.at("head"));
  art.head = build_seg_head(hcfg, /*seed=*/0);
  torch::NoGradGuard no_grad;
  for (auto& p : art.head->named_parameters()) {
    auto it = ck.tensors.find("param." + p.key());
    if (it == ck.tensors.end()) {
      throw DataError("head checkpoint missing tensor for " + p.key());
    }
    if (!p.value().sizes().equals(it->second.sizes())) {
      throw DataError("head checkpoint shape mismatch for " + p.key());
    }
    p.value().copy_(it->second);
  }
  art.head->eval();
  return art;
}

}  // namespace mdm::seg
