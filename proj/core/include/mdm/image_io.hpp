#pragma once

#include <cstdint>
#include <filesystem>

#include <torch/torch.h>

namespace mdm::img {

// 8-bit image file -> float32 CHW in [-1, 1] via pixel/127.5 - 1.
// channels: 0 keeps the file's channel count (1 or 3), 1 forces
// grayscale, 3 forces color. Color images come back RGB.
torch::Tensor load_image(const std::filesystem::path& path,
                         std::int64_t channels = 0);

// Clamps to [-1, 1], quantizes to 8-bit, writes PNG/JPEG by extension.
// Parent directories are created as needed.
void save_image(const std::filesystem::path& path, const torch::Tensor& chw);

// Single-channel PNG with raw class indices -> int64 [H,W].
torch::Tensor load_label(const std::filesystem::path& path);

// Values must fit 8 bits.
void save_label(const std::filesystem::path& path,
                const torch::Tensor& labels);

// In-memory JPEG encode/decode at the given quality; same convention as
// load_image/save_image. The lossy codec is the corruption.
torch::Tensor jpeg_roundtrip(const torch::Tensor& chw, int quality);

}  // namespace mdm::img
