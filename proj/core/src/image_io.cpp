#include "mdm/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <string>
#include <vector>

#include "mdm/errors.hpp"

namespace mdm::img {

namespace {

torch::Tensor tensor_from_u8(const cv::Mat& mat) {
  cv::Mat m = mat.isContinuous() ? mat : mat.clone();
  const std::int64_t h = m.rows;
  const std::int64_t w = m.cols;
  const std::int64_t c = m.channels();
  auto t = torch::from_blob(m.data, {h, w, c}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(127.5).sub_(1.0);
}

// [C,H,W] in [-1,1] -> 8-bit HWC Mat (still RGB order for 3 channels).
cv::Mat u8_from_tensor(const torch::Tensor& chw) {
  if (chw.dim() != 3) {
    throw DimensionError("image tensor must be [C,H,W], got " +
                         std::to_string(chw.dim()) + " dims");
  }
  const std::int64_t c = chw.size(0);
  if (c != 1 && c != 3) {
    throw DimensionError("image tensor must have 1 or 3 channels, got " +
                         std::to_string(c));
  }
  auto u8 = chw.detach()
                .to(torch::kFloat32)
                .clamp(-1.0, 1.0)
                .add(1.0)
                .mul(127.5)
                .round()
                .clamp(0.0, 255.0)
                .to(torch::kUInt8)
                .permute({1, 2, 0})
                .contiguous();
  cv::Mat mat(static_cast<int>(chw.size(1)), static_cast<int>(chw.size(2)),
              CV_8UC(static_cast<int>(c)));
  std::memcpy(mat.data, u8.data_ptr<std::uint8_t>(), u8.numel());
  return mat;
}

void ensure_parent(const std::filesystem::path& path) {
  const auto parent = path.parent_path();
  if (!parent.empty()) {
    std::filesystem::create_directories(parent);
  }
}

}  // namespace

torch::Tensor load_image(const std::filesystem::path& path,
                         std::int64_t channels) {
  if (channels != 0 && channels != 1 && channels != 3) {
    throw ConfigError("channels must be 0, 1, or 3, got " +
                      std::to_string(channels));
  }
  int flag = cv::IMREAD_UNCHANGED;
  if (channels == 1) flag = cv::IMREAD_GRAYSCALE;
  if (channels == 3) flag = cv::IMREAD_COLOR;
  cv::Mat mat = cv::imread(path.string(), flag);
  if (mat.empty()) {
    throw IoError("cannot read image: " + path.string());
  }
  if (mat.depth() != CV_8U) {
    throw DataError("expected 8-bit image data: " + path.string());
  }
  if (mat.channels() == 4) {
    cv::cvtColor(mat, mat, cv::COLOR_BGRA2BGR);
  }
  if (mat.channels() == 3) {
    cv::cvtColor(mat, mat, cv::COLOR_BGR2RGB);
  } else if (mat.channels() != 1) {
    throw DataError("unsupported channel count " +
                    std::to_string(mat.channels()) + ": " + path.string());
  }
  return tensor_from_u8(mat);
}

void save_image(const std::filesystem::path& path, const torch::Tensor& chw) {
  cv::Mat mat = u8_from_tensor(chw);
  if (mat.channels() == 3) {
    cv::cvtColor(mat, mat, cv::COLOR_RGB2BGR);
  }
  ensure_parent(path);
  if (!cv::imwrite(path.string(), mat)) {
    throw IoError("cannot write image: " + path.string());
  }
}

torch::Tensor load_label(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) {
    throw IoError("cannot read label map: " + path.string());
  }
  if (mat.channels() != 1) {
    throw DataError("label map must be single-channel: " + path.string());
  }
  if (mat.depth() != CV_8U) {
    throw DataError("expected 8-bit label map: " + path.string());
  }
  cv::Mat m = mat.isContinuous() ? mat : mat.clone();
  auto t = torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
  return t.to(torch::kInt64);
}

void save_label(const std::filesystem::path& path,
                const torch::Tensor& labels) {
  if (labels.dim() != 2) {
    throw DimensionError("label map must be [H,W], got " +
                         std::to_string(labels.dim()) + " dims");
  }
  auto l = labels.detach().to(torch::kInt64);
  if (l.numel() > 0 &&
      (l.min().item<std::int64_t>() < 0 || l.max().item<std::int64_t>() > 255)) {
    throw DataError("label values must be in [0, 255] to save as 8-bit PNG");
  }
  auto u8 = l.to(torch::kUInt8).contiguous();
  cv::Mat mat(static_cast<int>(l.size(0)), static_cast<int>(l.size(1)),
              CV_8UC1);
  std::memcpy(mat.data, u8.data_ptr<std::uint8_t>(), u8.numel());
  ensure_parent(path);
  if (!cv::imwrite(path.string(), mat)) {
    throw IoError("cannot write label map: " + path.string());
  }
}

torch::Tensor jpeg_roundtrip(const torch::Tensor& chw, int quality) {
  if (quality < 1 || quality > 100) {
    throw RangeError("jpeg quality must be in [1, 100], got " +
                     std::to_string(quality));
  }
  cv::Mat mat = u8_from_tensor(chw);
  const bool color = mat.channels() == 3;
  if (color) {
    cv::cvtColor(mat, mat, cv::COLOR_RGB2BGR);
  }
  std::vector<uchar> buf;
  if (!cv::imencode(".jpg", mat, buf,
                    {cv::IMWRITE_JPEG_QUALITY, quality})) {
    throw IoError("jpeg encode failed");
  }
  cv::Mat back = cv::imdecode(buf, color ? cv::IMREAD_COLOR
                                         : cv::IMREAD_GRAYSCALE);
  if (back.empty()) {
    throw IoError("jpeg decode failed");
  }
  if (color) {
    cv::cvtColor(back, back, cv::COLOR_BGR2RGB);
  }
  return tensor_from_u8(back);
}

}  // namespace mdm::img
