#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "mdm/rng.hpp"

namespace mdm::data {

struct ManifestEntry {
  std::filesystem::path image;  // absolute, resolved against manifest dir
  std::optional<std::filesystem::path> label;
};

// Plain-text dataset manifest. Format, one directive per line
// (blank lines and '#' comments ignored), paths relative to the file:
//
//   classes <K>
//   split pretrain|seg-train|seg-test
//   <image-path> [<label-path>]
//
// seg-train and seg-test entries must carry labels; their image sets
// must be disjoint so held-out data can never leak into training.
struct DatasetManifest {
  std::filesystem::path root;
  std::int64_t num_classes = 0;
  std::vector<ManifestEntry> pretrain;
  std::vector<ManifestEntry> seg_train;
  std::vector<ManifestEntry> seg_test;

  // pixels per class over a labeled split, length num_classes
  std::vector<std::int64_t> label_histogram(
      const std::vector<ManifestEntry>& split) const;
};

// Parses and validates: split disjointness, labels present where
// required, every referenced file exists, and (for labeled splits)
// all label values < K.
DatasetManifest load_manifest(const std::filesystem::path& path);

void save_manifest(const std::filesystem::path& path,
                   const DatasetManifest& manifest);

// Reflect-101 pads the last two dims (centered) up to at least
// min_h x min_w; a no-op for dims already large enough.
torch::Tensor reflect_pad_to(const torch::Tensor& t, std::int64_t min_h,
                             std::int64_t min_w);

// Uniform-origin crop to size x size; reflect-pads first when the
// image is smaller. The label map (if any) gets the same geometry.
std::pair<torch::Tensor, std::optional<torch::Tensor>> random_crop(
    const torch::Tensor& image, const std::optional<torch::Tensor>& label,
    std::int64_t size, Rng& rng);

// Horizontal mirror with probability 1/2, image and label in lockstep.
std::pair<torch::Tensor, std::optional<torch::Tensor>> random_flip(
    const torch::Tensor& image, const std::optional<torch::Tensor>& label,
    Rng& rng);

// Synthetic textured-shapes dataset: grayscale images containing
// striped circles (class 1) and checkerboard rectangles (class 2) on a
// noisy background (class 0). Classes are texture- and shape-coded, not
// intensity-coded, so trivial thresholding cannot segment them.
struct SynthSpec {
  std::int64_t n_pretrain = 200;
  std::int64_t n_seg_train = 5;
  std::int64_t n_seg_test = 50;
  std::int64_t image_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// Writes images/, labels/, and manifest.txt under out_dir; returns the
// manifest path. Same spec -> bit-identical files.
std::filesystem::path synth_shapes(const std::filesystem::path& out_dir,
                                   const SynthSpec& spec);

// One synthetic sample in memory: image [1,S,S] in [-1,1], label [S,S].
std::pair<torch::Tensor, torch::Tensor> synth_sample(std::int64_t image_size,
                                                     Rng& rng);

}  // namespace mdm::data
