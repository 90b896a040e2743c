#include "mdm/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "mdm/checkpoint.hpp"
#include "mdm/config.hpp"
#include "mdm/data.hpp"
#include "mdm/errors.hpp"

namespace mdm::train {

namespace {

nlohmann::json config_json(const PretrainConfig& cfg) {
  return {{"model", cfg::unet_to_json(cfg.model)},
          {"pretrain", cfg::pretrain_to_json(cfg)},
          {"seed", cfg.seed}};
}

std::uint64_t params_content_id(const unet::UNet& net) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : net->named_parameters()) {
    h = hash_bytes(p.key().data(), p.key().size(), h);
    const std::uint64_t th = mdm::hash_tensor(p.value());
    h = hash_bytes(&th, sizeof(th), h);
  }
  return h;
}

void write_checkpoint(const std::filesystem::path& path,
                      const PretrainConfig& cfg, const unet::UNet& net,
                      const opt::Adam& adam, std::int64_t iteration,
                      const Rng& data_rng, const Rng& ts_rng,
                      const Rng& corrupt_rng) {
  ckpt::Checkpoint c;
  c.meta = {{"kind", "pretrain"},
            {"iteration", iteration},
            {"config", config_json(cfg)},
            {"rng",
             {{"data", data_rng.state()},
              {"timestep", ts_rng.state()},
              {"corrupt", corrupt_rng.state()}}}};
  for (const auto& p : net->named_parameters()) {
    c.tensors["param." + p.key()] = p.value();
  }
  adam.export_state(c.tensors, "adam");
  ckpt::save(path, c);
}

// Assembles one [B,C,H,W] batch by sampling images with replacement,
// cropping to the model input when needed, and flip augmentation.
torch::Tensor draw_batch(const std::vector<torch::Tensor>& images,
                         const PretrainConfig& cfg, Rng& data_rng) {
  const std::int64_t size = cfg.model.input_size;
  std::vector<torch::Tensor> picked;
  picked.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
    auto x = images[static_cast<std::size_t>(
        data_rng.uniform_int(0, static_cast<std::int64_t>(images.size()) - 1))];
    if (x.size(1) != size || x.size(2) != size) {
      x = data::random_crop(x, std::nullopt, size, data_rng).first;
    }
    if (cfg.flip_augment) {
      x = data::random_flip(x, std::nullopt, data_rng).first;
    }
    picked.push_back(x);
  }
  return torch::stack(picked, 0);
}

}  // namespace

void PretrainConfig::validate() const {
  model.validate();
  if (method != "mdm" && method != "ddpm") {
    throw ConfigError("method must be 'mdm' or 'ddpm', got '" + method + "'");
  }
  if (target != "image" && target != "noise") {
    throw ConfigError("target must be 'image' or 'noise', got '" + target +
                      "'");
  }
  if (is_mdm() && target != "image") {
    throw ConfigError("the masking method reconstructs the image; "
                      "target=noise is only valid for ddpm");
  }
  if (t_max < 1) {
    throw ConfigError("t_max must be >= 1, got " + std::to_string(t_max));
  }
  if (fixed_t < 0 || fixed_t > t_max) {
    throw ConfigError("fixed_t must be 0 (uniform) or in [1, t_max], got " +
                      std::to_string(fixed_t));
  }
  if (is_mdm()) {
    if (patch < 1 || model.input_size % patch != 0) {
      throw ConfigError("patch must divide the model input size");
    }
  }
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

torch::Tensor sample_timesteps(std::int64_t batch, std::int64_t t_max,
                               Rng& rng, std::int64_t fixed_t) {
  if (batch < 1) {
    throw RangeError("timestep batch must be >= 1, got " +
                     std::to_string(batch));
  }
  if (t_max < 1) {
    throw RangeError("t_max must be >= 1, got " + std::to_string(t_max));
  }
  if (fixed_t < 0 || fixed_t > t_max) {
    throw RangeError("fixed_t must be 0 or in [1, t_max], got " +
                     std::to_string(fixed_t));
  }
  auto out = torch::empty({batch}, torch::kInt64);
  auto a = out.accessor<std::int64_t, 1>();
  for (std::int64_t i = 0; i < batch; ++i) {
    a[i] = fixed_t > 0 ? fixed_t : rng.uniform_int(1, t_max);
  }
  return out;
}

double train_step_mdm(unet::UNet& net, opt::Adam& adam,
                      const torch::Tensor& batch, const PretrainConfig& cfg,
                      Rng& ts_rng, Rng& corrupt_rng) {
  const auto t = sample_timesteps(batch.size(0), cfg.t_max, ts_rng,
                                  cfg.fixed_t);
  auto ta = t.accessor<std::int64_t, 1>();
  std::vector<torch::Tensor> masked;
  masked.reserve(static_cast<std::size_t>(batch.size(0)));
  for (std::int64_t i = 0; i < batch.size(0); ++i) {
    masked.push_back(corruption::mask_image(batch[i], ta[i], cfg.t_max,
                                            cfg.patch, corrupt_rng)
                         .first);
  }
  auto pred = net->forward(torch::stack(masked, 0), t);
  auto loss = losses::recon_loss(pred, batch, cfg.loss, {}, /*remap_signed=*/true);
  adam.zero_grad();
  loss.backward();
  adam.step();
  return loss.item<double>();
}

double train_step_ddpm(unet::UNet& net, opt::Adam& adam,
                       const torch::Tensor& batch,
                       const corruption::DiffusionSchedule& sched,
                       const PretrainConfig& cfg, Rng& ts_rng,
                       Rng& corrupt_rng) {
  const auto t = sample_timesteps(batch.size(0), cfg.t_max, ts_rng,
                                  cfg.fixed_t);
  auto ta = t.accessor<std::int64_t, 1>();
  std::vector<torch::Tensor> noised, eps;
  noised.reserve(static_cast<std::size_t>(batch.size(0)));
  eps.reserve(static_cast<std::size_t>(batch.size(0)));
  for (std::int64_t i = 0; i < batch.size(0); ++i) {
    auto [x_t, e] = corruption::diffuse(batch[i], ta[i], sched, corrupt_rng);
    noised.push_back(std::move(x_t));
    eps.push_back(std::move(e));
  }
  auto pred = net->forward(torch::stack(noised, 0), t);
  torch::Tensor loss;
  if (cfg.target == "noise") {
    loss = losses::recon_loss(pred, torch::stack(eps, 0), cfg.loss, {},
                              /*remap_signed=*/false);
  } else {
    loss = losses::recon_loss(pred, batch, cfg.loss, {}, /*remap_signed=*/true);
  }
  adam.zero_grad();
  loss.backward();
  adam.step();
  return loss.item<double>();
}

PretrainResult pretrain(const PretrainConfig& cfg,
                        const std::vector<torch::Tensor>& images,
                        const std::filesystem::path& run_dir,
                        const std::filesystem::path& resume) {
  cfg.validate();
  if (images.empty()) {
    throw DataError("pretraining dataset is empty");
  }
  for (const auto& x : images) {
    if (x.dim() != 3 || x.size(0) != cfg.model.in_channels) {
      throw DimensionError(
          "every pretraining image must be [C,H,W] with C = model "
          "in_channels");
    }
  }
  std::filesystem::create_directories(run_dir);

  corruption::DiffusionSchedule sched;
  if (!cfg.is_mdm()) {
    sched = corruption::make_beta_schedule(cfg.t_max, "linear",
                                           cfg.beta_start, cfg.beta_end);
  }

  auto net = unet::build_unet(cfg.model, derive_seed(cfg.seed, "init"));
  net->train();
  opt::Adam adam(net->parameters(), {.lr = cfg.lr});
  Rng data_rng(derive_seed(cfg.seed, "data"));
  Rng ts_rng(derive_seed(cfg.seed, "timestep"));
  Rng corrupt_rng(derive_seed(cfg.seed, "corrupt"));

  std::int64_t start_iter = 0;
  if (!resume.empty()) {
    auto c = ckpt::load(resume);
    if (c.meta.value("kind", "") != "pretrain") {
      throw DataError("not a pretraining checkpoint: " + resume.string());
    }
    if (c.meta.at("config") != config_json(cfg)) {
      throw ConfigError(
          "checkpoint was written under a different configuration; refusing "
          "to resume from " + resume.string());
    }
    torch::NoGradGuard ng;
    for (const auto& p : net->named_parameters()) {
      auto it = c.tensors.find("param." + p.key());
      if (it == c.tensors.end()) {
        throw DataError("checkpoint missing parameter " + p.key());
      }
      p.value().copy_(it->second);
    }
    adam.import_state(c.tensors, "adam");
    data_rng.set_state(c.meta.at("rng").at("data").get<std::string>());
    ts_rng.set_state(c.meta.at("rng").at("timestep").get<std::string>());
    corrupt_rng.set_state(c.meta.at("rng").at("corrupt").get<std::string>());
    start_iter = c.meta.at("iteration").get<std::int64_t>();
  }

  // Each method must stay on its own corruption path; record the other
  // path's call count so we can prove it was never touched.
  const std::int64_t other_path_calls_before =
      cfg.is_mdm() ? corruption::diffuse_calls()
                   : corruption::mask_image_calls();

  const auto loss_path = run_dir / "loss.csv";
  const bool append = !resume.empty() && std::filesystem::exists(loss_path);
  std::ofstream log(loss_path, append ? std::ios::app : std::ios::trunc);
  if (!log) {
    throw IoError("cannot open loss log: " + loss_path.string());
  }
  if (!append) log << "iteration,loss,wall_time\n";

  const auto t0 = std::chrono::steady_clock::now();
  PretrainResult result;
  int nonfinite_streak = 0;
  for (std::int64_t it = start_iter + 1; it <= cfg.iterations; ++it) {
    auto batch = draw_batch(images, cfg, data_rng);
    const double loss =
        cfg.is_mdm()
            ? train_step_mdm(net, adam, batch, cfg, ts_rng, corrupt_rng)
            : train_step_ddpm(net, adam, batch, sched, cfg, ts_rng,
                              corrupt_rng);
    result.losses.push_back(loss);

    if (!std::isfinite(loss)) {
      if (++nonfinite_streak >= 10) {
        throw DivergenceError(
            "loss non-finite for 10 consecutive steps (iteration " +
            std::to_string(it) + ")");
      }
    } else {
      nonfinite_streak = 0;
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    log << it << ',' << std::setprecision(17) << loss << ','
        << std::fixed << std::setprecision(6) << wall << '\n';
    log.unsetf(std::ios::fixed);
    log.flush();

    if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 &&
        it != cfg.iterations) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%08lld.ckpt",
                    static_cast<long long>(it));
      write_checkpoint(run_dir / name, cfg, net, adam, it, data_rng, ts_rng,
                       corrupt_rng);
    }
  }

  const std::int64_t other_path_calls_after =
      cfg.is_mdm() ? corruption::diffuse_calls()
                   : corruption::mask_image_calls();
  if (other_path_calls_after != other_path_calls_before) {
    throw ValidationError(
        "corruption-path purity violated: the inactive corruption was "
        "invoked during training");
  }

  result.checkpoint = run_dir / "checkpoint_final.ckpt";
  write_checkpoint(result.checkpoint, cfg, net, adam, cfg.iterations,
                   data_rng, ts_rng, corrupt_rng);
  return result;
}

PretrainedModel load_model(const std::filesystem::path& checkpoint) {
  auto c = ckpt::load(checkpoint);
  if (c.meta.value("kind", "") != "pretrain") {
    throw DataError("not a pretraining checkpoint: " + checkpoint.string());
  }
  const auto& cj = c.meta.at("config");
  PretrainedModel m;
  m.cfg = cfg::pretrain_from_json(cj.at("pretrain"));
  m.cfg.model = cfg::unet_from_json(cj.at("model"));
  m.cfg.seed = cj.value("seed", std::uint64_t{0});

  m.net = unet::build_unet(m.cfg.model, derive_seed(m.cfg.seed, "init"));
  {
    torch::NoGradGuard ng;
    for (const auto& p : m.net->named_parameters()) {
      auto it = c.tensors.find("param." + p.key());
      if (it == c.tensors.end()) {
        throw DataError("checkpoint missing parameter " + p.key());
      }
      p.value().copy_(it->second);
    }
  }
  m.net->eval();
  for (auto& p : m.net->parameters()) p.set_requires_grad(false);
  if (!m.cfg.is_mdm()) {
    m.schedule = corruption::make_beta_schedule(
        m.cfg.t_max, "linear", m.cfg.beta_start, m.cfg.beta_end);
  }
  m.content_id = params_content_id(m.net);
  return m;
}

PretrainedModel init_model(const PretrainConfig& cfg) {
  cfg.validate();
  PretrainedModel m;
  m.cfg = cfg;
  m.net = unet::build_unet(cfg.model, derive_seed(cfg.seed, "init"));
  m.net->eval();
  for (auto& p : m.net->parameters()) p.set_requires_grad(false);
  if (!cfg.is_mdm()) {
    m.schedule = corruption::make_beta_schedule(cfg.t_max, "linear",
                                                cfg.beta_start, cfg.beta_end);
  }
  m.content_id = params_content_id(m.net);
  return m;
}

std::pair<torch::Tensor, torch::Tensor> reconstruct(PretrainedModel& model,
                                                    const torch::Tensor& image,
                                                    std::int64_t t, Rng& rng) {
  if (t < 0 || t > model.cfg.t_max) {
    throw RangeError("t must be in [0, t_max], got " + std::to_string(t));
  }
  torch::NoGradGuard ng;
  model.net->eval();
  if (model.cfg.is_mdm()) {
    auto corrupted = corruption::mask_image(image, t, model.cfg.t_max,
                                            model.cfg.patch, rng)
                         .first;
    auto pred = model.net->forward(corrupted.unsqueeze(0), t).squeeze(0);
    return {corrupted, pred};
  }
  if (t == 0) {
    // No noise at t = 0: the recovered image is the input itself for the
    // noise-predicting variant; the image-predicting variant still runs.
    auto recon = model.cfg.target == "image"
                     ? model.net->forward(image.unsqueeze(0), 0).squeeze(0)
                     : image.clone();
    return {image.clone(), recon};
  }
  auto [x_t, eps] = corruption::diffuse(image, t, model.schedule, rng);
  auto pred = model.net->forward(x_t.unsqueeze(0), t).squeeze(0);
  auto recon = model.cfg.target == "image"
                   ? pred
                   : corruption::recover_x0(x_t, pred, t, model.schedule);
  return {x_t, recon};
}

}  // namespace mdm::train
