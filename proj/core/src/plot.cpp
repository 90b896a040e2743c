#include "mdm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mdm/errors.hpp"
#include "mdm/image_io.hpp"

namespace mdm::plot {

void save_loss_curve(const std::filesystem::path& path,
                     const std::vector<double>& values, int width,
                     int height) {
  if (values.empty()) throw DataError("loss curve needs at least one value");
  if (width < 64 || height < 64) {
    throw RangeError("loss plot must be at least 64x64 pixels");
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;

  const int margin = 24;
  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::rectangle(canvas, cv::Point(margin, margin),
                cv::Point(width - margin, height - margin),
                cv::Scalar(180, 180, 180), 1);
  const double span_x = static_cast<double>(width - 2 * margin);
  const double span_y = static_cast<double>(height - 2 * margin);
  const auto to_point = [&](std::size_t i, double v) {
    const double fx =
        values.size() > 1
            ? static_cast<double>(i) / static_cast<double>(values.size() - 1)
            : 0.5;
    const double fy = (v - lo) / (hi - lo);
    return cv::Point(margin + static_cast<int>(std::lround(fx * span_x)),
                     height - margin -
                         static_cast<int>(std::lround(fy * span_y)));
  };
  cv::Point prev;
  bool have_prev = false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      have_prev = false;
      continue;
    }
    cv::Point cur = to_point(i, values[i]);
    if (have_prev) {
      cv::line(canvas, prev, cur, cv::Scalar(180, 90, 30), 1, cv::LINE_AA);
    }
    prev = cur;
    have_prev = true;
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  if (!cv::imwrite(path.string(), canvas)) {
    throw IoError("cannot write plot to " + path.string());
  }
}

namespace {

// Fixed qualitative palette (RGB in [0,255]); class 0 gets dark gray.
constexpr int kPalette[][3] = {
    {60, 60, 60},    {230, 80, 60},   {70, 140, 230}, {80, 190, 110},
    {240, 180, 50},  {170, 100, 220}, {90, 200, 210}, {230, 120, 180},
    {150, 150, 80},  {120, 80, 40},   {30, 90, 120},  {200, 200, 200},
};
constexpr std::int64_t kPaletteSize =
    static_cast<std::int64_t>(sizeof(kPalette) / sizeof(kPalette[0]));

}  // namespace

torch::Tensor colorize_labels(const torch::Tensor& labels,
                              std::int64_t num_classes) {
  if (labels.dim() != 2) throw DimensionError("label map must be [H,W]");
  if (num_classes < 1) throw RangeError("num_classes must be >= 1");
  torch::Tensor lut = torch::empty({num_classes, 3}, torch::kFloat32);
  auto acc = lut.accessor<float, 2>();
  for (std::int64_t c = 0; c < num_classes; ++c) {
    const auto& rgb = kPalette[c % kPaletteSize];
    for (int ch = 0; ch < 3; ++ch) {
      acc[c][ch] = static_cast<float>(rgb[ch]) / 127.5f - 1.0f;
    }
  }
  torch::Tensor idx = labels.to(torch::kInt64).clamp(0, num_classes - 1);
  torch::Tensor colored = lut.index({idx.reshape(-1)});  // [H*W, 3]
  return colored.reshape({labels.size(0), labels.size(1), 3})
      .permute({2, 0, 1})
      .contiguous();
}

torch::Tensor overlay_labels(const torch::Tensor& image,
                             const torch::Tensor& labels,
                             std::int64_t num_classes, double alpha) {
  if (image.dim() != 3) throw DimensionError("image must be [C,H,W]");
  if (alpha < 0.0 || alpha > 1.0) {
    throw RangeError("overlay alpha must lie in [0,1]");
  }
  torch::Tensor base = image;
  if (base.size(0) == 1) base = base.repeat({3, 1, 1});
  if (base.size(0) != 3) {
    throw DimensionError("overlay needs a 1- or 3-channel image");
  }
  if (labels.size(0) != image.size(1) || labels.size(1) != image.size(2)) {
    throw DimensionError("label map must match the image spatially");
  }
  torch::Tensor colors = colorize_labels(labels, num_classes);
  return (base * (1.0 - alpha) + colors * alpha).clamp(-1.0, 1.0);
}

torch::Tensor image_grid(const std::vector<torch::Tensor>& images,
                         std::int64_t cols) {
  if (images.empty()) throw DataError("image grid needs at least one image");
  if (cols < 1) throw RangeError("image grid needs cols >= 1");
  const auto& first = images.front();
  if (first.dim() != 3) throw DimensionError("grid images must be [C,H,W]");
  for (const auto& t : images) {
    if (!t.sizes().equals(first.sizes())) {
      throw DimensionError("all grid images must share one shape");
    }
  }
  const std::int64_t n = static_cast<std::int64_t>(images.size());
  const std::int64_t rows = (n + cols - 1) / cols;
  const std::int64_t c = first.size(0);
  const std::int64_t h = first.size(1);
  const std::int64_t w = first.size(2);
  const std::int64_t sep = 2;
  torch::Tensor grid = torch::full(
      {c, rows * h + (rows - 1) * sep, cols * w + (cols - 1) * sep}, 1.0,
      first.options());
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t r = i / cols;
    const std::int64_t col = i % cols;
    grid.slice(1, r * (h + sep), r * (h + sep) + h)
        .slice(2, col * (w + sep), col * (w + sep) + w)
        .copy_(images[static_cast<std::size_t>(i)]);
  }
  return grid;
}

}  // namespace mdm::plot
