#include "mdm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mdm/errors.hpp"
#include "mdm/image_io.hpp"

namespace mdm::data {

namespace {

constexpr const char* kSplitNames[] = {"pretrain", "seg-train", "seg-test"};

std::string normalized_key(const std::filesystem::path& p) {
  return p.lexically_normal().string();
}

void check_exists(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::exists(p)) {
    throw IoError(std::string(what) + " listed in manifest does not exist: " +
                  p.string());
  }
}

// Reflect-101 index map covering [-pad_lo, n + pad_hi), folding over the
// 2(n-1) period so padding wider than the image still works.
std::vector<std::int64_t> reflect_indices(std::int64_t n, std::int64_t pad_lo,
                                          std::int64_t pad_hi) {
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(n + pad_lo + pad_hi));
  const std::int64_t period = n > 1 ? 2 * (n - 1) : 1;
  for (std::int64_t i = -pad_lo; i < n + pad_hi; ++i) {
    std::int64_t j = ((i % period) + period) % period;
    if (j >= n) j = period - j;
    idx.push_back(n > 1 ? j : 0);
  }
  return idx;
}

}  // namespace

torch::Tensor reflect_pad_to(const torch::Tensor& t, std::int64_t min_h,
                             std::int64_t min_w) {
  const std::int64_t h = t.size(-2);
  const std::int64_t w = t.size(-1);
  auto out = t;
  if (h < min_h) {
    const std::int64_t lo = (min_h - h) / 2;
    const std::int64_t hi = min_h - h - lo;
    auto idx = torch::tensor(reflect_indices(h, lo, hi));
    out = out.index_select(-2, idx);
  }
  if (w < min_w) {
    const std::int64_t lo = (min_w - w) / 2;
    const std::int64_t hi = min_w - w - lo;
    auto idx = torch::tensor(reflect_indices(w, lo, hi));
    out = out.index_select(-1, idx);
  }
  return out;
}

namespace {

struct Shape {
  int kind = 0;  // 1 = circle, 2 = rectangle
  std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // bbox, inclusive
  std::int64_t cx = 0, cy = 0, radius = 0;      // circle geometry
  double mean = 0.0;
  double theta = 0.0, wavelength = 4.0, phase = 0.0;  // stripe params
  std::int64_t cell = 4, ox = 0, oy = 0;              // checker params
};

constexpr double kTextureAmp = 0.45;

double shape_value(const Shape& s, std::int64_t y, std::int64_t x) {
  if (s.kind == 1) {
    const double u =
        x * std::cos(s.theta) + y * std::sin(s.theta);
    return s.mean +
           kTextureAmp * std::sin(2.0 * M_PI * u / s.wavelength + s.phase);
  }
  const std::int64_t parity =
      (((x - s.x0 + s.ox) / s.cell) + ((y - s.y0 + s.oy) / s.cell)) % 2;
  return s.mean + (parity == 0 ? kTextureAmp : -kTextureAmp);
}

bool shape_contains(const Shape& s, std::int64_t y, std::int64_t x) {
  if (s.kind == 2) return true;  // bbox is the rectangle
  const double dx = static_cast<double>(x - s.cx);
  const double dy = static_cast<double>(y - s.cy);
  return dx * dx + dy * dy <= static_cast<double>(s.radius * s.radius);
}

}  // namespace

std::vector<std::int64_t> DatasetManifest::label_histogram(
    const std::vector<ManifestEntry>& split) const {
  std::vector<std::int64_t> hist(static_cast<std::size_t>(num_classes), 0);
  for (const auto& e : split) {
    if (!e.label) continue;
    auto lbl = img::load_label(*e.label);
    auto counts = torch::bincount(lbl.reshape({-1}), {}, num_classes);
    auto acc = counts.accessor<std::int64_t, 1>();
    for (std::int64_t k = 0; k < counts.size(0) && k < num_classes; ++k) {
      hist[static_cast<std::size_t>(k)] += acc[k];
    }
  }
  return hist;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open manifest: " + path.string());
  }
  DatasetManifest m;
  m.root = std::filesystem::absolute(path).parent_path();

  std::vector<ManifestEntry>* current = nullptr;
  bool have_classes = false;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where =
        path.filename().string() + ":" + std::to_string(line_no);

    if (tok[0] == "classes") {
      if (tok.size() != 2) {
        throw DataError("malformed classes line at " + where);
      }
      try {
        m.num_classes = std::stoll(tok[1]);
      } catch (const std::exception&) {
        throw DataError("malformed class count at " + where);
      }
      if (m.num_classes < 2 || m.num_classes > 256) {
        throw ValidationError("class count must be in [2, 256], got " +
                              std::to_string(m.num_classes));
      }
      have_classes = true;
    } else if (tok[0] == "split") {
      if (tok.size() != 2) {
        throw DataError("malformed split line at " + where);
      }
      if (tok[1] == kSplitNames[0]) {
        current = &m.pretrain;
      } else if (tok[1] == kSplitNames[1]) {
        current = &m.seg_train;
      } else if (tok[1] == kSplitNames[2]) {
        current = &m.seg_test;
      } else {
        throw DataError("unknown split '" + tok[1] + "' at " + where);
      }
    } else {
      if (current == nullptr) {
        throw DataError("entry before any split directive at " + where);
      }
      if (tok.size() > 2) {
        throw DataError("entry has more than two paths at " + where);
      }
      ManifestEntry e;
      e.image = (m.root / tok[0]).lexically_normal();
      if (tok.size() == 2) {
        e.label = (m.root / tok[1]).lexically_normal();
      }
      current->push_back(std::move(e));
    }
  }
  if (!have_classes) {
    throw DataError("manifest has no classes line: " + path.string());
  }

  for (const auto* split : {&m.seg_train, &m.seg_test}) {
    for (const auto& e : *split) {
      if (!e.label) {
        throw DataError("segmentation entry lacks a label map: " +
                        e.image.string());
      }
    }
  }

  // Held-out images must stay held out: the test split may not share a
  // file with anything a training stage reads.
  std::set<std::string> train_side;
  for (const auto& e : m.pretrain) train_side.insert(normalized_key(e.image));
  for (const auto& e : m.seg_train) train_side.insert(normalized_key(e.image));
  for (const auto& e : m.seg_test) {
    if (train_side.count(normalized_key(e.image)) > 0) {
      throw ValidationError("test image also appears in a training split: " +
                            e.image.string());
    }
  }

  for (const auto* split : {&m.pretrain, &m.seg_train, &m.seg_test}) {
    for (const auto& e : *split) {
      check_exists(e.image, "image");
      if (e.label) check_exists(*e.label, "label map");
    }
  }

  for (const auto* split : {&m.seg_train, &m.seg_test}) {
    for (const auto& e : *split) {
      auto lbl = img::load_label(*e.label);
      const auto mx = lbl.max().item<std::int64_t>();
      if (mx >= m.num_classes) {
        throw DataError("label value " + std::to_string(mx) +
                        " out of range for " + std::to_string(m.num_classes) +
                        " classes: " + e.label->string());
      }
    }
  }
  return m;
}

void save_manifest(const std::filesystem::path& path,
                   const DatasetManifest& manifest) {
  const auto parent = std::filesystem::absolute(path).parent_path();
  std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write manifest: " + path.string());
  }
  out << "# dataset manifest\n";
  out << "classes " << manifest.num_classes << "\n";
  const std::vector<ManifestEntry>* splits[] = {
      &manifest.pretrain, &manifest.seg_train, &manifest.seg_test};
  auto rel = [&parent](const std::filesystem::path& p) {
    auto r = p.lexically_relative(parent);
    return r.empty() || r.string().rfind("..", 0) == 0 ? p : r;
  };
  for (int s = 0; s < 3; ++s) {
    if (splits[s]->empty()) continue;
    out << "split " << kSplitNames[s] << "\n";
    for (const auto& e : *splits[s]) {
      out << rel(e.image).generic_string();
      if (e.label) out << " " << rel(*e.label).generic_string();
      out << "\n";
    }
  }
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

std::pair<torch::Tensor, std::optional<torch::Tensor>> random_crop(
    const torch::Tensor& image, const std::optional<torch::Tensor>& label,
    std::int64_t size, Rng& rng) {
  if (size < 1) {
    throw RangeError("crop size must be positive, got " +
                     std::to_string(size));
  }
  if (image.dim() != 3) {
    throw DimensionError("random_crop expects [C,H,W]");
  }
  if (label && ((*label).dim() != 2 || (*label).size(0) != image.size(1) ||
                (*label).size(1) != image.size(2))) {
    throw DimensionError("label map shape must match image spatial shape");
  }
  auto img = reflect_pad_to(image, size, size);
  std::optional<torch::Tensor> lbl;
  if (label) lbl = reflect_pad_to(*label, size, size);

  const std::int64_t y0 = rng.uniform_int(0, img.size(-2) - size);
  const std::int64_t x0 = rng.uniform_int(0, img.size(-1) - size);
  auto ic = img.slice(-2, y0, y0 + size).slice(-1, x0, x0 + size).contiguous();
  std::optional<torch::Tensor> lc;
  if (lbl) {
    lc = lbl->slice(-2, y0, y0 + size).slice(-1, x0, x0 + size).contiguous();
  }
  return {ic, lc};
}

std::pair<torch::Tensor, std::optional<torch::Tensor>> random_flip(
    const torch::Tensor& image, const std::optional<torch::Tensor>& label,
    Rng& rng) {
  const bool flip = rng.uniform() < 0.5;
  if (!flip) return {image, label};
  auto img = torch::flip(image, {-1});
  std::optional<torch::Tensor> lbl;
  if (label) lbl = torch::flip(*label, {-1});
  return {img, lbl};
}

void SynthSpec::validate() const {
  if (n_pretrain < 0 || n_seg_train < 0 || n_seg_test < 0) {
    throw ConfigError("split sizes must be non-negative");
  }
  if (n_pretrain + n_seg_train + n_seg_test < 1) {
    throw ConfigError("dataset must contain at least one image");
  }
  if (image_size < 16) {
    throw ConfigError("image_size must be at least 16, got " +
                      std::to_string(image_size));
  }
}

std::pair<torch::Tensor, torch::Tensor> synth_sample(std::int64_t image_size,
                                                     Rng& rng) {
  const std::int64_t s = image_size;
  if (s < 16) {
    throw ConfigError("image_size must be at least 16, got " +
                      std::to_string(s));
  }
  const std::int64_t total = s * s;
  for (int attempt = 0; attempt < 200; ++attempt) {
    auto image = torch::empty({1, s, s}, torch::kFloat32);
    auto label = torch::zeros({s, s}, torch::kInt64);
    auto ia = image.accessor<float, 3>();
    auto la = label.accessor<std::int64_t, 2>();

    const double bg_mean = rng.uniform() * 0.3 - 0.15;
    constexpr double kBgSigma = 0.15;
    for (std::int64_t y = 0; y < s; ++y) {
      for (std::int64_t x = 0; x < s; ++x) {
        ia[0][y][x] = static_cast<float>(bg_mean + kBgSigma * rng.normal());
      }
    }

    std::vector<Shape> shapes;
    const std::int64_t n_circles = rng.uniform_int(1, 3);
    const std::int64_t n_rects = rng.uniform_int(1, 3);
    for (std::int64_t i = 0; i < n_circles; ++i) {
      Shape c;
      c.kind = 1;
      c.radius = rng.uniform_int(std::max<std::int64_t>(4, s / 12), s / 4);
      c.cx = rng.uniform_int(c.radius + 1, s - 2 - c.radius);
      c.cy = rng.uniform_int(c.radius + 1, s - 2 - c.radius);
      c.x0 = c.cx - c.radius;
      c.x1 = c.cx + c.radius;
      c.y0 = c.cy - c.radius;
      c.y1 = c.cy + c.radius;
      c.mean = rng.uniform() * 0.4 - 0.2;
      c.theta = rng.uniform() * M_PI;
      c.wavelength = 3.5 + rng.uniform() * 3.5;
      c.phase = rng.uniform() * 2.0 * M_PI;
      shapes.push_back(c);
    }
    for (std::int64_t i = 0; i < n_rects; ++i) {
      Shape r;
      r.kind = 2;
      const std::int64_t w = rng.uniform_int(s / 8, (s * 7) / 16);
      const std::int64_t h = rng.uniform_int(s / 8, (s * 7) / 16);
      r.x0 = rng.uniform_int(1, s - 2 - w);
      r.y0 = rng.uniform_int(1, s - 2 - h);
      r.x1 = r.x0 + w;
      r.y1 = r.y0 + h;
      r.mean = rng.uniform() * 0.4 - 0.2;
      r.cell = rng.uniform_int(3, 6);
      r.ox = rng.uniform_int(0, r.cell - 1);
      r.oy = rng.uniform_int(0, r.cell - 1);
      shapes.push_back(r);
    }
    rng.shuffle(shapes);  // random z-order; later shapes paint over earlier

    for (const auto& sh : shapes) {
      for (std::int64_t y = sh.y0; y <= sh.y1; ++y) {
        for (std::int64_t x = sh.x0; x <= sh.x1; ++x) {
          if (!shape_contains(sh, y, x)) continue;
          ia[0][y][x] = static_cast<float>(shape_value(sh, y, x));
          la[y][x] = sh.kind;
        }
      }
    }

    // Mild sensor noise everywhere so foreground is not noise-free.
    for (std::int64_t y = 0; y < s; ++y) {
      for (std::int64_t x = 0; x < s; ++x) {
        ia[0][y][x] = static_cast<float>(
            std::clamp(ia[0][y][x] + 0.05 * rng.normal(), -1.0, 1.0));
      }
    }

    std::int64_t counts[3] = {0, 0, 0};
    for (std::int64_t y = 0; y < s; ++y) {
      for (std::int64_t x = 0; x < s; ++x) {
        ++counts[la[y][x]];
      }
    }
    const bool ok = counts[0] >= total * 15 / 100 &&
                    counts[1] >= total * 4 / 100 &&
                    counts[2] >= total * 4 / 100;
    if (ok) return {image, label};
  }
  throw DegenerateInputError(
      "could not generate a sample containing all three classes");
}

std::filesystem::path synth_shapes(const std::filesystem::path& out_dir,
                                   const SynthSpec& spec) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "labels");

  Rng rng(derive_seed(spec.seed, "synth-shapes"));
  DatasetManifest m;
  m.root = out_dir;
  m.num_classes = 3;

  const std::int64_t total =
      spec.n_pretrain + spec.n_seg_train + spec.n_seg_test;
  for (std::int64_t i = 0; i < total; ++i) {
    auto [image, label] = synth_sample(spec.image_size, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "%05lld.png",
                  static_cast<long long>(i));
    const auto img_path = out_dir / "images" / name;
    img::save_image(img_path, image);
    ManifestEntry e;
    e.image = img_path;
    if (i < spec.n_pretrain) {
      m.pretrain.push_back(e);
    } else {
      const auto lbl_path = out_dir / "labels" / name;
      img::save_label(lbl_path, label);
      e.label = lbl_path;
      if (i < spec.n_pretrain + spec.n_seg_train) {
        m.seg_train.push_back(e);
      } else {
        m.seg_test.push_back(e);
      }
    }
  }

  const auto manifest_path = out_dir / "manifest.txt";
  save_manifest(manifest_path, m);
  return manifest_path;
}

}  // namespace mdm::data
