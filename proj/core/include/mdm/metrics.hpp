#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace mdm::metrics {

enum class Connectivity { k4 = 4, k8 = 8 };

// Binary overlap scores on [H,W] maps; any nonzero pixel counts as
// foreground. Both-empty pairs score 1 (a correct empty prediction is not
// penalized).
double dice(const torch::Tensor& pred, const torch::Tensor& gt);
double iou(const torch::Tensor& pred, const torch::Tensor& gt);

// Mean per-class IoU over classes in [0,K) present in pred or gt; classes
// absent from both are excluded from the mean.
double miou(const torch::Tensor& pred, const torch::Tensor& gt,
            std::int64_t num_classes);

// Mean per-class Dice, same presence convention as miou. Background
// (class 0) is excluded unless include_background is set.
double macro_dice(const torch::Tensor& pred, const torch::Tensor& gt,
                  std::int64_t num_classes, bool include_background = false);

// Labels connected foreground regions 1,2,... by raster order of each
// region's first pixel; background stays 0. Returns int64 [H,W].
torch::Tensor connected_components(const torch::Tensor& binary,
                                   Connectivity conn = Connectivity::k4);

// Aggregated Jaccard Index over instance maps (0 = background, positive
// ids = instances). Each gt instance is matched greedily to the predicted
// instance of maximal IoU (ties to the smaller pred id; gt with no
// overlapping prediction contributes its own area to the denominator).
// Numerator sums matched intersections; denominator sums matched unions
// plus the pixels of every prediction never chosen. Both empty -> 1.
double aji(const torch::Tensor& pred, const torch::Tensor& gt);

}  // namespace mdm::metrics
