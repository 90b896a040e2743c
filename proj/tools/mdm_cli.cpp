// Command-line front end: orchestrates dataset synthesis, self-supervised
// pre-training, head training, evaluation, ablation grids, robustness
// sweeps, and qualitative outputs. Every run directory receives a frozen
// resolved config, the code version, and CSV/PNG artifacts.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "mdm/config.hpp"
#include "mdm/corrupt_test.hpp"
#include "mdm/data.hpp"
#include "mdm/errors.hpp"
#include "mdm/features.hpp"
#include "mdm/image_io.hpp"
#include "mdm/metrics.hpp"
#include "mdm/plot.hpp"
#include "mdm/pretrain.hpp"
#include "mdm/rng.hpp"
#include "mdm/runs.hpp"
#include "mdm/seghead.hpp"
#include "mdm/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- helpers

struct ConfigCli {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_config_options(CLI::App* cmd, ConfigCli& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration file");
  cmd->add_option("--set", c.sets,
                  "Override one config value, e.g. --set pretrain.lr=3e-4");
  cmd->add_option("--seed", c.seed, "Override the experiment seed");
}

// Resolves file + overrides into (typed config, raw resolved JSON).
std::pair<mdm::cfg::RunConfig, json> resolve_config(const ConfigCli& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    j = mdm::cfg::load_json(c.config_path);
  }
  for (const auto& assignment : c.sets) {
    mdm::cfg::apply_set_override(j, assignment);
  }
  if (c.seed) j["seed"] = *c.seed;
  auto cfg = mdm::cfg::run_from_json(j);
  return {cfg, mdm::cfg::run_to_json(cfg)};
}

const std::vector<mdm::data::ManifestEntry>& pick_split(
    const mdm::data::DatasetManifest& m, const std::string& split) {
  if (split == "pretrain") return m.pretrain;
  if (split == "seg-train") return m.seg_train;
  if (split == "seg-test") return m.seg_test;
  throw mdm::ConfigError("unknown split '" + split +
                         "' (want pretrain, seg-train or seg-test)");
}

mdm::data::DatasetManifest load_manifest_from(
    const mdm::cfg::RunConfig& cfg) {
  if (cfg.data.manifest.empty()) {
    throw mdm::ConfigError(
        "no dataset manifest configured (set data.manifest)");
  }
  return mdm::data::load_manifest(cfg.data.manifest);
}

std::string dataset_name(const mdm::data::DatasetManifest& m) {
  auto name = m.root.filename().string();
  return name.empty() ? "dataset" : name;
}

std::vector<torch::Tensor> load_images(
    const std::vector<mdm::data::ManifestEntry>& entries,
    std::int64_t channels) {
  std::vector<torch::Tensor> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    out.push_back(mdm::img::load_image(e.image, channels));
  }
  return out;
}

mdm::train::PretrainedModel load_or_init_model(
    const mdm::cfg::RunConfig& cfg, const std::string& checkpoint,
    bool random_init) {
  if (random_init != checkpoint.empty()) {
    throw mdm::ConfigError(
        "pass exactly one of --checkpoint or --random-init");
  }
  if (random_init) return mdm::train::init_model(cfg.pretrain);
  return mdm::train::load_model(checkpoint);
}

// Evaluation shared by train-seg, eval, ablate and robustness: sliding
// prediction over a labeled split, per-image metrics averaged into rows.
struct SplitScores {
  double dice = 0.0;        // foreground-vs-background overlap
  double macro_dice = 0.0;  // class-averaged Dice (no background)
  double miou = 0.0;        // class-averaged IoU
  double pixel_acc = 0.0;
  double aji = 0.0;  // instance-level score on foreground components
  std::int64_t images = 0;
};

using Corruptor = std::function<torch::Tensor(const torch::Tensor&, std::size_t)>;

SplitScores evaluate_split(mdm::train::PretrainedModel& model,
                           mdm::seg::SegHead& head,
                           const std::vector<mdm::data::ManifestEntry>& split,
                           const mdm::feat::FeatureConfig& fcfg,
                           const mdm::cfg::RunConfig& cfg,
                           const Corruptor& corrupt = nullptr) {
  if (split.empty()) {
    throw mdm::DataError("evaluation split has no labeled images");
  }
  SplitScores s;
  const std::int64_t k = cfg.head.num_classes > 0
                             ? cfg.head.num_classes
                             : head->config().num_classes;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& entry = split[i];
    auto image = mdm::img::load_image(entry.image, cfg.data.channels);
    if (!entry.label) {
      throw mdm::DataError("entry " + entry.image.string() +
                           " carries no label");
    }
    auto label = mdm::img::load_label(*entry.label);
    if (corrupt) image = corrupt(image, i);
    auto pred = mdm::seg::predict_sliding(model, head, image, fcfg,
                                          cfg.eval.window,
                                          cfg.eval.average_logits);
    s.dice += mdm::metrics::dice(pred, label);
    s.macro_dice += mdm::metrics::macro_dice(pred, label, k);
    s.miou += mdm::metrics::miou(pred, label, k);
    s.pixel_acc +=
        (pred == label).to(torch::kFloat64).mean().item<double>();
    s.aji += mdm::metrics::aji(mdm::metrics::connected_components(pred != 0),
                               mdm::metrics::connected_components(label != 0));
    ++s.images;
  }
  const double n = static_cast<double>(s.images);
  s.dice /= n;
  s.macro_dice /= n;
  s.miou /= n;
  s.pixel_acc /= n;
  s.aji /= n;
  return s;
}

void append_score_rows(std::vector<mdm::runs::MetricRow>& rows,
                       const std::string& run_id, std::uint64_t seed,
                       const std::string& dataset, const std::string& split,
                       const SplitScores& s, const std::string& suffix = "") {
  const auto add = [&](const std::string& name, double v) {
    rows.push_back({run_id, seed, dataset, split, name + suffix, v});
  };
  add("dice", s.dice);
  add("macro_dice", s.macro_dice);
  add("miou", s.miou);
  add("pixel_acc", s.pixel_acc);
  add("aji", s.aji);
}

void print_scores(const std::string& what, const SplitScores& s) {
  std::cout << what << ": dice=" << std::fixed << std::setprecision(4)
            << s.dice << " macro_dice=" << s.macro_dice
            << " miou=" << s.miou << " pixel_acc=" << s.pixel_acc
            << " aji=" << s.aji << " (" << s.images << " images)"
            << std::defaultfloat << std::setprecision(6) << "\n";
}

// ------------------------------------------------------------ subcommands

struct SynthArgs {
  std::string out;
  mdm::data::SynthSpec spec;
};

int cmd_synth_data(const SynthArgs& a) {
  auto manifest = mdm::data::synth_shapes(a.out, a.spec);
  std::cout << "dataset written; manifest: " << manifest.string() << "\n";
  return 0;
}

struct PretrainArgs {
  ConfigCli cfg;
  std::string run_id;
  std::string resume;
};

int cmd_pretrain(const PretrainArgs& a) {
  auto [cfg, resolved] = resolve_config(a.cfg);
  auto manifest = load_manifest_from(cfg);
  auto images = load_images(manifest.pretrain, cfg.data.channels);

  const std::string id =
      a.run_id.empty() ? "pretrain-" + cfg.pretrain.method + "-seed" +
                             std::to_string(cfg.seed)
                       : a.run_id;
  auto run_dir = mdm::runs::fresh_run_dir(mdm::runs::output_root(), id);
  mdm::runs::write_run_stamp(run_dir, resolved);
  std::cout << "run directory: " << run_dir.string() << "\n";

  auto result = mdm::train::pretrain(cfg.pretrain, images, run_dir,
                                     a.resume.empty() ? fs::path{}
                                                      : fs::path(a.resume));
  if (!result.losses.empty()) {
    mdm::plot::save_loss_curve(run_dir / "loss.png", result.losses);
  }
  std::cout << "checkpoint: " << result.checkpoint.string() << "\n";
  if (!result.losses.empty()) {
    std::cout << "final loss: " << result.losses.back() << "\n";
  }
  return 0;
}

struct TrainSegArgs {
  ConfigCli cfg;
  std::string run_id;
  std::string checkpoint;
  bool random_init = false;
  double fraction = 1.0;
  bool skip_eval = false;
};

int cmd_train_seg(const TrainSegArgs& a) {
  auto [cfg, resolved] = resolve_config(a.cfg);
  auto manifest = load_manifest_from(cfg);
  auto model = load_or_init_model(cfg, a.checkpoint, a.random_init);

  if (a.fraction <= 0.0 || a.fraction > 1.0) {
    throw mdm::RangeError("--fraction must lie in (0, 1]");
  }
  auto entries = manifest.seg_train;
  if (a.fraction < 1.0) {
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(a.fraction *
                                    static_cast<double>(entries.size())));
    mdm::Rng frng(mdm::derive_seed(cfg.seed, "label-fraction"));
    frng.shuffle(entries);
    entries.resize(keep);
  }
  if (entries.empty()) {
    throw mdm::DataError("manifest has no seg-train entries");
  }

  const std::string id =
      a.run_id.empty()
          ? "train-seg-seed" + std::to_string(cfg.seed)
          : a.run_id;
  auto run_dir = mdm::runs::fresh_run_dir(mdm::runs::output_root(), id);
  mdm::runs::write_run_stamp(run_dir, resolved);
  std::cout << "run directory: " << run_dir.string() << "\n";
  std::cout << "training head on " << entries.size()
            << " labeled image(s)\n";

  std::vector<mdm::feat::FeatureStack> stacks;
  std::vector<torch::Tensor> labels;
  for (const auto& e : entries) {
    auto image = mdm::img::load_image(e.image, cfg.data.channels);
    stacks.push_back(
        mdm::feat::extract_features_multi(model, image, cfg.features));
    labels.push_back(mdm::img::load_label(*e.label));
  }

  auto hcfg = cfg.head;
  hcfg.num_classes = manifest.num_classes;
  mdm::Rng head_rng(mdm::derive_seed(cfg.seed, "head"));
  auto result = mdm::seg::train_head(stacks, labels, hcfg, head_rng);
  std::cout << "head converged after " << result.steps << " step(s)\n";

  const auto head_path = run_dir / "head.ckpt";
  mdm::seg::save_head(head_path, result.head, cfg.features,
                      model.content_id);
  std::cout << "head checkpoint: " << head_path.string() << "\n";
  {
    std::ofstream out(run_dir / "head_loss.csv", std::ios::trunc);
    out << "step,loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < result.losses.size(); ++i) {
      out << (i + 1) << "," << result.losses[i] << "\n";
    }
  }
  mdm::plot::save_loss_curve(run_dir / "head_loss.png", result.losses);

  if (!a.skip_eval) {
    auto scores = evaluate_split(model, result.head, manifest.seg_test,
                                 cfg.features, cfg);
    print_scores("seg-test", scores);
    std::vector<mdm::runs::MetricRow> rows;
    append_score_rows(rows, id, cfg.seed, dataset_name(manifest), "seg-test",
                      scores);
    mdm::runs::write_metrics_csv(run_dir / "metrics.csv", rows);
    std::cout << "metrics: " << (run_dir / "metrics.csv").string() << "\n";
  }
  return 0;
}

struct EvalArgs {
  ConfigCli cfg;
  std::string run_id;
  std::string checkpoint;
  bool random_init = false;
  std::string head;
  std::string split = "seg-test";
};

// Loads the head artifact and enforces provenance: the head must have
// been trained on features of exactly this model.
mdm::seg::HeadArtifact load_matching_head(
    const std::string& head_path, const mdm::train::PretrainedModel& model) {
  auto art = mdm::seg::load_head(head_path);
  if (art.model_id != model.content_id) {
    throw mdm::DataError(
        "head artifact " + head_path +
        " was trained against a different model (feature provenance "
        "mismatch)");
  }
  return art;
}

int cmd_eval(const EvalArgs& a) {
  auto [cfg, resolved] = resolve_config(a.cfg);
  auto manifest = load_manifest_from(cfg);
  auto model = load_or_init_model(cfg, a.checkpoint, a.random_init);
  if (a.head.empty()) throw mdm::ConfigError("--head is required");
  auto art = load_matching_head(a.head, model);

  const auto& split = pick_split(manifest, a.split);
  const std::string id =
      a.run_id.empty() ? "eval-seed" + std::to_string(cfg.seed) : a.run_id;
  auto run_dir = mdm::runs::fresh_run_dir(mdm::runs::output_root(), id);
  mdm::runs::write_run_stamp(run_dir, resolved);

  auto scores = evaluate_split(model, art.head, split, art.features, cfg);
  print_scores(a.split, scores);
  std::vector<mdm::runs::MetricRow> rows;
  append_score_rows(rows, id, cfg.seed, dataset_name(manifest), a.split,
                    scores);
  mdm::runs::write_metrics_csv(run_dir / "metrics.csv", rows);
  std::cout << "metrics: " << (run_dir / "metrics.csv").string() << "\n";
  return 0;
}

struct ReconstructArgs {
  ConfigCli cfg;
  std::string checkpoint;
  std::string image;
  std::vector<std::int64_t> ts;
  std::string out;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  auto [cfg, resolved] = resolve_config(a.cfg);
  auto model = load_or_init_model(cfg, a.checkpoint, false);
  auto image = mdm::img::load_image(a.image, cfg.data.channels);
  auto ts = a.ts;
  if (ts.empty()) ts = {model.cfg.t_max / 4, model.cfg.t_max / 2};

  const fs::path out_dir =
      a.out.empty()
          ? mdm::runs::fresh_run_dir(mdm::runs::output_root(), "reconstruct")
          : fs::path(a.out);
  fs::create_directories(out_dir);
  mdm::runs::write_run_stamp(out_dir, resolved);

  mdm::Rng rng(mdm::derive_seed(cfg.seed, "reconstruct"));
  std::vector<torch::Tensor> tiles;
  for (std::int64_t t : ts) {
    auto [corrupted, recon] = mdm::train::reconstruct(model, image, t, rng);
    std::ostringstream tag;
    tag << "t" << std::setw(4) << std::setfill('0') << t;
    mdm::img::save_image(out_dir / ("corrupted_" + tag.str() + ".png"),
                         corrupted);
    mdm::img::save_image(out_dir / ("recon_" + tag.str() + ".png"), recon);
    tiles.push_back(corrupted);
    tiles.push_back(recon);
  }
  mdm::img::save_image(out_dir / "grid.png",
                       mdm::plot::image_grid(tiles, 2));
  std::cout << "wrote " << (2 * ts.size() + 1) << " image(s) to "
            << out_dir.string() << "\n";
  return 0;
}

struct ClusterArgs {
  ConfigCli cfg;
  std::string checkpoint;
  std::string image;
  std::int64_t k = 5;
  std::optional<std::int64_t> t;
  std::string out;
};

int cmd_cluster(const ClusterArgs& a) {
  auto [cfg, resolved] = resolve_config(a.cfg);
  auto model = load_or_init_model(cfg, a.checkpoint, false);
  auto image = mdm::img::load_image(a.image, cfg.data.channels);

  const std::int64_t t = a.t ? *a.t
                             : (cfg.features.ts.empty() ? 5
                                                        : cfg.features.ts[0]);
  const fs::path out_dir =
      a.out.empty()
          ? mdm::runs::fresh_run_dir(mdm::runs::output_root(), "cluster")
          : fs::path(a.out);
  fs::create_directories(out_dir);
  mdm::runs::write_run_stamp(out_dir, resolved);

  std::vector<std::int64_t> blocks = cfg.features.blocks;
  if (blocks.empty()) {
    blocks.resize(model.net->decoder_taps().size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i] = static_cast<std::int64_t>(i);
    }
  }
  for (std::int64_t b : blocks) {
    mdm::feat::FeatureConfig fcfg = cfg.features;
    fcfg.ts = {t};
    fcfg.blocks = {b};
    auto stack = mdm::feat::extract_features(model, image, t, fcfg);
    mdm::Rng rng(mdm::derive_seed(cfg.seed, "cluster"));
    auto clusters = mdm::feat::kmeans_feature_clusters(stack, a.k, rng);
    auto overlay = mdm::plot::overlay_labels(image, clusters, a.k, 0.6);
    mdm::img::save_image(
        out_dir / ("clusters_block" + std::to_string(b) + ".png"), overlay);
  }
  std::cout << "wrote " << blocks.size() << " cluster overlay(s) to "
            << out_dir.string() << "\n";
  return 0;
}

struct AblateArgs {
  ConfigCli cfg;
  std::string run_id;
  std::vector<std::string> vary;
};

// Splits "key=v1,v2,[a,b]" on commas that are not nested in brackets.
std::pair<std::string, std::vector<std::string>> parse_axis(
    const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw mdm::ConfigError("--vary expects key=v1,v2,..., got '" + spec +
                           "'");
  }
  std::string key = spec.substr(0, eq);
  std::vector<std::string> values;
  std::string cur;
  int depth = 0;
  for (char ch : spec.substr(eq + 1)) {
    if (ch == '[') ++depth;
    if (ch == ']') --depth;
    if (ch == ',' && depth == 0) {
      values.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  values.push_back(cur);
  for (const auto& v : values) {
    if (v.empty()) {
      throw mdm::ConfigError("--vary axis '" + key + "' has an empty value");
    }
  }
  return {key, values};
}

std::string sanitize_cell_id(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '"' || c == '\n' || c == '\r' || c == '/' ||
        c == '\\' || c == ' ') {
      c = '+';
    }
  }
  return s;
}

int cmd_ablate(const AblateArgs& a) {
  if (a.vary.empty()) {
    throw mdm::ConfigError(
        "ablate needs at least one --vary axis, e.g. --vary "
        "pretrain.loss=ssim,mse");
  }
  // base JSON: file + --set (typed validation happens per cell)
  json base = json::object();
  if (!a.cfg.config_path.empty()) {
    base = mdm::cfg::load_json(a.cfg.config_path);
  }
  for (const auto& s : a.cfg.sets) mdm::cfg::apply_set_override(base, s);
  if (a.cfg.seed) base["seed"] = *a.cfg.seed;

  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& v : a.vary) axes.push_back(parse_axis(v));

  const std::string id = a.run_id.empty() ? "ablate" : a.run_id;
  auto run_dir = mdm::runs::fresh_run_dir(mdm::runs::output_root(), id);
  mdm::runs::write_run_stamp(run_dir, base);
  std::ofstream log(run_dir / "ablate.log", std::ios::trunc);
  std::cout << "run directory: " << run_dir.string() << "\n";

  std::vector<std::size_t> index(axes.size(), 0);
  std::vector<mdm::runs::MetricRow> rows;
  std::size_t cell_no = 0;
  bool done = false;
  while (!done) {
    // assemble this cell
    json cell_json = base;
    std::ostringstream label;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      const auto& [key, values] = axes[i];
      mdm::cfg::apply_set_override(cell_json, key + "=" + values[index[i]]);
      if (i > 0) label << ";";
      label << key << "=" << values[index[i]];
    }
    ++cell_no;
    const std::string cell_id =
        "cell" + std::to_string(cell_no) + "+" +
        sanitize_cell_id(label.str());

    try {
      auto cfg = mdm::cfg::run_from_json(cell_json);
      cfg.pretrain.validate();

      auto manifest = load_manifest_from(cfg);
      auto images = load_images(manifest.pretrain, cfg.data.channels);
      auto cell_dir = run_dir / "cells" / cell_id;
      fs::create_directories(cell_dir);
      mdm::runs::write_run_stamp(cell_dir, mdm::cfg::run_to_json(cfg));

      auto result = mdm::train::pretrain(cfg.pretrain, images, cell_dir);
      auto model = mdm::train::load_model(result.checkpoint);

      std::vector<mdm::feat::FeatureStack> stacks;
      std::vector<torch::Tensor> labels;
      for (const auto& e : manifest.seg_train) {
        auto image = mdm::img::load_image(e.image, cfg.data.channels);
        stacks.push_back(
            mdm::feat::extract_features_multi(model, image, cfg.features));
        labels.push_back(mdm::img::load_label(*e.label));
      }
      auto hcfg = cfg.head;
      hcfg.num_classes = manifest.num_classes;
      mdm::Rng head_rng(mdm::derive_seed(cfg.seed, "head"));
      auto head = mdm::seg::train_head(stacks, labels, hcfg, head_rng);

      auto scores = evaluate_split(model, head.head, manifest.seg_test,
                                   cfg.features, cfg);
      append_score_rows(rows, cell_id, cfg.seed, dataset_name(manifest),
                        "seg-test", scores);
      log << cell_id << ": miou=" << scores.miou
          << " macro_dice=" << scores.macro_dice << "\n";
      std::cout << cell_id << ": miou=" << std::setprecision(4)
                << scores.miou << "\n";
    } catch (const mdm::ConfigError& e) {
      // infeasible combination (e.g. masking cannot predict noise)
      log << cell_id << ": skipped: " << e.what() << "\n";
      std::cout << cell_id << ": skipped (" << e.what() << ")\n";
    }

    // advance the mixed-radix counter
    done = true;
    for (std::size_t i = axes.size(); i-- > 0;) {
      if (++index[i] < axes[i].second.size()) {
        done = false;
        break;
      }
      index[i] = 0;
    }
  }
  mdm::runs::write_metrics_csv(run_dir / "metrics.csv", rows);
  std::cout << "metrics: " << (run_dir / "metrics.csv").string() << "\n";
  return 0;
}

struct RobustnessArgs {
  ConfigCli cfg;
  std::string run_id;
  std::string checkpoint;
  bool random_init = false;
  std::string head;
};

int cmd_robustness(const RobustnessArgs& a) {
  auto [cfg, resolved] = resolve_config(a.cfg);
  auto manifest = load_manifest_from(cfg);
  auto model = load_or_init_model(cfg, a.checkpoint, a.random_init);
  if (a.head.empty()) throw mdm::ConfigError("--head is required");
  auto art = load_matching_head(a.head, model);

  const std::string id =
      a.run_id.empty() ? "robustness-seed" + std::to_string(cfg.seed)
                       : a.run_id;
  auto run_dir = mdm::runs::fresh_run_dir(mdm::runs::output_root(), id);
  mdm::runs::write_run_stamp(run_dir, resolved);
  std::cout << "run directory: " << run_dir.string() << "\n";

  const auto& split = manifest.seg_test;
  const std::string ds = dataset_name(manifest);
  std::vector<mdm::runs::MetricRow> rows;
  std::ofstream table(run_dir / "robustness.csv", std::ios::trunc);
  table << "kind,severity,miou\n" << std::setprecision(17);

  // severity 0: the untouched evaluation path; must agree with `eval`
  auto clean = evaluate_split(model, art.head, split, art.features, cfg);
  rows.push_back({id, cfg.seed, ds, "seg-test", "miou:clean:s0", clean.miou});
  table << "clean,0," << clean.miou << "\n";
  print_scores("clean (severity 0)", clean);

  std::map<int, double> severity_sum;
  for (const auto& kind : mdm::data::implemented_corruptions()) {
    for (int severity = 1; severity <= 5; ++severity) {
      Corruptor corrupt = [&](const torch::Tensor& image, std::size_t idx) {
        // one deterministic draw per (seed, kind, severity, image)
        auto s = mdm::derive_seed(cfg.seed, kind);
        s = mdm::derive_seed(s + 1000003ull * severity + idx, "robustness");
        mdm::Rng rng(s);
        return mdm::data::corrupt_test(image, kind, severity, rng);
      };
      auto scores =
          evaluate_split(model, art.head, split, art.features, cfg, corrupt);
      std::ostringstream metric;
      metric << "miou:" << kind << ":s" << severity;
      rows.push_back(
          {id, cfg.seed, ds, "seg-test", metric.str(), scores.miou});
      table << kind << "," << severity << "," << scores.miou << "\n";
      severity_sum[severity] += scores.miou;
      std::cout << kind << " s" << severity << ": miou="
                << std::setprecision(4) << scores.miou << "\n";
    }
  }

  const double n_kinds =
      static_cast<double>(mdm::data::implemented_corruptions().size());
  std::vector<double> curve{clean.miou};
  for (const auto& [severity, sum] : severity_sum) {
    const double avg = sum / n_kinds;  // unweighted across kinds
    std::ostringstream metric;
    metric << "miou:avg:s" << severity;
    rows.push_back({id, cfg.seed, ds, "seg-test", metric.str(), avg});
    table << "average," << severity << "," << avg << "\n";
    curve.push_back(avg);
  }
  mdm::runs::write_metrics_csv(run_dir / "metrics.csv", rows);
  mdm::plot::save_loss_curve(run_dir / "robustness.png", curve);
  std::cout << "metrics: " << (run_dir / "metrics.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Self-supervised representation learning via masked and noised "
      "reconstruction, with few-shot segmentation evaluation"};
  app.set_version_flag("--version", std::string(mdm::kVersion) + " (" +
                                        mdm::kGitRevision + ")");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand(
      "synth-data", "Generate the synthetic textured-shapes dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--pretrain", synth.spec.n_pretrain,
                      "Unlabeled pre-training images");
  c_synth->add_option("--train", synth.spec.n_seg_train,
                      "Labeled training images");
  c_synth->add_option("--test", synth.spec.n_seg_test,
                      "Labeled held-out images");
  c_synth->add_option("--size", synth.spec.image_size, "Image side length");
  c_synth->add_option("--seed", synth.spec.seed, "Generation seed");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain",
                                   "Self-supervised pre-training run");
  add_config_options(c_pre, pre.cfg);
  c_pre->add_option("--run-id", pre.run_id, "Run directory name");
  c_pre->add_option("--resume", pre.resume,
                    "Checkpoint to continue from (bitwise)");

  TrainSegArgs ts;
  auto* c_ts = app.add_subcommand(
      "train-seg", "Train the pixel head on frozen features and evaluate");
  add_config_options(c_ts, ts.cfg);
  c_ts->add_option("--run-id", ts.run_id, "Run directory name");
  c_ts->add_option("--checkpoint", ts.checkpoint,
                   "Pre-trained model checkpoint");
  c_ts->add_flag("--random-init", ts.random_init,
                 "Use an untrained model (baseline)");
  c_ts->add_option("--fraction", ts.fraction,
                   "Fraction of seg-train labels to use (0,1]");
  c_ts->add_flag("--skip-eval", ts.skip_eval,
                 "Skip the held-out evaluation after training");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval",
                                  "Evaluate a trained head on a split");
  add_config_options(c_ev, ev.cfg);
  c_ev->add_option("--run-id", ev.run_id, "Run directory name");
  c_ev->add_option("--checkpoint", ev.checkpoint,
                   "Pre-trained model checkpoint");
  c_ev->add_flag("--random-init", ev.random_init,
                 "Use an untrained model (baseline)");
  c_ev->add_option("--head", ev.head, "Head checkpoint")->required();
  c_ev->add_option("--split", ev.split, "Split to evaluate");

  ReconstructArgs rec;
  auto* c_rec = app.add_subcommand(
      "reconstruct", "Corrupt an image and reconstruct it for inspection");
  add_config_options(c_rec, rec.cfg);
  c_rec->add_option("--checkpoint", rec.checkpoint, "Model checkpoint")
      ->required();
  c_rec->add_option("--image", rec.image, "Input image")->required();
  c_rec->add_option("--t", rec.ts, "Corruption timestep(s)");
  c_rec->add_option("--out", rec.out, "Output directory");

  ClusterArgs cl;
  auto* c_cl = app.add_subcommand(
      "cluster", "k-means cluster decoder features into a label overlay");
  add_config_options(c_cl, cl.cfg);
  c_cl->add_option("--checkpoint", cl.checkpoint, "Model checkpoint")
      ->required();
  c_cl->add_option("--image", cl.image, "Input image")->required();
  c_cl->add_option("--k", cl.k, "Cluster count");
  c_cl->add_option("--t", cl.t, "Extraction timestep");
  c_cl->add_option("--out", cl.out, "Output directory");

  AblateArgs ab;
  auto* c_ab = app.add_subcommand(
      "ablate", "Run a cross-product of configuration variations");
  add_config_options(c_ab, ab.cfg);
  c_ab->add_option("--run-id", ab.run_id, "Run directory name");
  c_ab->add_option("--vary", ab.vary,
                   "Axis spec key=v1,v2,... (repeatable; cross-product)");

  RobustnessArgs rb;
  auto* c_rb = app.add_subcommand(
      "robustness", "Evaluate under every corruption kind and severity");
  add_config_options(c_rb, rb.cfg);
  c_rb->add_option("--run-id", rb.run_id, "Run directory name");
  c_rb->add_option("--checkpoint", rb.checkpoint, "Model checkpoint");
  c_rb->add_flag("--random-init", rb.random_init,
                 "Use an untrained model (baseline)");
  c_rb->add_option("--head", rb.head, "Head checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_synth->parsed()) return cmd_synth_data(synth);
    if (c_pre->parsed()) return cmd_pretrain(pre);
    if (c_ts->parsed()) return cmd_train_seg(ts);
    if (c_ev->parsed()) return cmd_eval(ev);
    if (c_rec->parsed()) return cmd_reconstruct(rec);
    if (c_cl->parsed()) return cmd_cluster(cl);
    if (c_ab->parsed()) return cmd_ablate(ab);
    if (c_rb->parsed()) return cmd_robustness(rb);
  } catch (const mdm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  std::cerr << "error: no subcommand executed\n";
  return 1;
}
