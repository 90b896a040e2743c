#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace mdm::plot {

// Renders a per-iteration loss curve to a PNG (linear axes, auto range).
void save_loss_curve(const std::filesystem::path& path,
                     const std::vector<double>& values, int width = 640,
                     int height = 360);

// Maps an integer label map [H,W] to a fixed color palette -> [3,H,W]
// float in [-1,1]. Class 0 renders dark gray so foreground classes pop.
torch::Tensor colorize_labels(const torch::Tensor& labels,
                              std::int64_t num_classes);

// Alpha-blends the colorized labels over the (gray or color) image.
torch::Tensor overlay_labels(const torch::Tensor& image,
                             const torch::Tensor& labels,
                             std::int64_t num_classes, double alpha = 0.5);

// Tiles same-shaped [C,H,W] tensors into a grid, `cols` per row, with a
// 2px separator.
torch::Tensor image_grid(const std::vector<torch::Tensor>& images,
                         std::int64_t cols);

}  // namespace mdm::plot
