#include "mdm/unet.hpp"

#include <cmath>
#include <string>

#include "mdm/errors.hpp"

namespace mdm::unet {

namespace {

// Largest power of two <= 32 that divides c, so GroupNorm works for any
// width this architecture produces.
std::int64_t gn_groups(std::int64_t c) {
  std::int64_t g = 32;
  while (g > 1 && c % g != 0) g /= 2;
  return g;
}

torch::nn::GroupNorm make_norm(std::int64_t c) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(gn_groups(c), c));
}

torch::nn::Conv2d conv3x3(std::int64_t in, std::int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

torch::nn::Conv2d conv1x1(std::int64_t in, std::int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

torch::Tensor up2(const torch::Tensor& x) {
  return torch::upsample_nearest2d(x, {x.size(2) * 2, x.size(3) * 2});
}

torch::Tensor down2(const torch::Tensor& x) {
  return torch::avg_pool2d(x, {2, 2});
}

}  // namespace

void UNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("unet: in_channels must be >= 1");
  if (out_channels != in_channels) {
    throw ConfigError("unet: out_channels must equal in_channels "
                      "(predictions are image-shaped)");
  }
  if (base_width < 2 || base_width % 2 != 0) {
    throw ConfigError("unet: base_width must be even and >= 2");
  }
  if (channel_mults.empty()) throw ConfigError("unet: channel_mults empty");
  for (auto m : channel_mults) {
    if (m < 1) throw ConfigError("unet: channel multipliers must be >= 1");
  }
  const auto l = levels();
  if (input_size < (std::int64_t(1) << l) ||
      input_size % (std::int64_t(1) << l) != 0) {
    throw ConfigError("unet: input_size must be a positive multiple of 2^" +
                      std::to_string(l));
  }
  if (num_res_blocks < 1) throw ConfigError("unet: num_res_blocks must be >= 1");
  if (num_heads < 1) throw ConfigError("unet: num_heads must be >= 1");
  std::set<std::int64_t> produced;
  for (std::int64_t i = 0; i <= l; ++i) produced.insert(input_size >> i);
  for (auto r : attention_resolutions) {
    if (!produced.count(r)) {
      throw ConfigError("unet: attention resolution " + std::to_string(r) +
                        " is not produced by the down path");
    }
  }
  for (std::int64_t i = 0; i < l; ++i) {
    const auto width = base_width * channel_mults[i];
    const bool attended = attention_resolutions.count(input_size >> i) > 0;
    if ((attended || i == l - 1) && width % num_heads != 0) {
      throw ConfigError("unet: num_heads must divide attended widths");
    }
  }
}

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw ConfigError("timestep_embedding: dim must be even and >= 2");
  }
  if (t.dim() > 1) throw DimensionError("timestep_embedding: t must be [B]");
  auto tf = (t.dim() == 0 ? t.reshape({1}) : t).to(torch::kDouble);
  if (tf.numel() > 0 && tf.min().item<double>() < 0) {
    throw RangeError("timestep_embedding: t must be >= 0");
  }
  const auto half = dim / 2;
  auto freqs = torch::exp(torch::arange(half, torch::kDouble) *
                          (-std::log(10000.0) / half));
  auto args = tf.unsqueeze(1) * freqs.unsqueeze(0);  // [B, half]
  return torch::cat({args.sin(), args.cos()}, 1).to(torch::kFloat);
}

// Residual block, BigGAN flavor: pre-activation, optional internal
// up/downsampling applied to both branches, timestep embedding added as a
// per-channel bias between the convolutions.
class ResBlockImpl : public torch::nn::Module {
 public:
  enum class Resample { kNone, kUp, kDown };

  ResBlockImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t emb_dim,
               Resample mode = Resample::kNone)
      : mode_(mode), project_skip_(in_ch != out_ch) {
    gn1_ = register_module("gn1", make_norm(in_ch));
    conv1_ = register_module("conv1", conv3x3(in_ch, out_ch));
    emb_fc_ = register_module("emb", torch::nn::Linear(emb_dim, out_ch));
    gn2_ = register_module("gn2", make_norm(out_ch));
    conv2_ = register_module("conv2", conv3x3(out_ch, out_ch));
    if (project_skip_) {
      skip_ = register_module("skip", conv1x1(in_ch, out_ch));
    }
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb) {
    auto h = torch::silu(gn1_(x));
    auto xs = x;
    if (mode_ == Resample::kUp) {
      h = up2(h);
      xs = up2(xs);
    } else if (mode_ == Resample::kDown) {
      h = down2(h);
      xs = down2(xs);
    }
    h = conv1_(h);
    h = h + emb_fc_(torch::silu(emb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2_(torch::silu(gn2_(h)));
    if (project_skip_) xs = skip_(xs);
    return xs + h;
  }

 private:
  torch::nn::GroupNorm gn1_{nullptr}, gn2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear emb_fc_{nullptr};
  Resample mode_;
  bool project_skip_;
};

// Self-attention over spatial positions: norm -> 1x1 qkv -> scaled dot
// product per head -> 1x1 projection, residual.
class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(std::int64_t channels, std::int64_t heads) : heads_(heads) {
    norm_ = register_module("norm", make_norm(channels));
    qkv_ = register_module("qkv", conv1x1(channels, channels * 3));
    proj_ = register_module("proj", conv1x1(channels, channels));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    const auto d = c / heads_;
    auto qkv = qkv_(norm_(x)).reshape({b, 3, heads_, d, h * w});
    auto q = qkv.select(1, 0);
    auto k = qkv.select(1, 1);
    auto v = qkv.select(1, 2);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    auto attn = torch::softmax(
        torch::einsum("bhdi,bhdj->bhij", {q * scale, k}), -1);
    auto out = torch::einsum("bhij,bhdj->bhdi", {attn, v})
                   .reshape({b, c, h, w});
    return x + proj_(out);
  }

 private:
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv2d qkv_{nullptr}, proj_{nullptr};
  std::int64_t heads_;
};

UNetImpl::UNetImpl(UNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto levels = cfg_.levels();
  const auto nr = cfg_.num_res_blocks;
  const auto emb_dim = cfg_.embed_dim();
  auto width = [&](std::int64_t l) {
    return cfg_.base_width * cfg_.channel_mults[static_cast<std::size_t>(l)];
  };
  auto attended = [&](std::int64_t l) {
    return cfg_.attention_resolutions.count(cfg_.input_size >> l) > 0;
  };

  time_fc1_ = register_module(
      "time1", torch::nn::Linear(cfg_.base_width, emb_dim));
  time_fc2_ = register_module("time2", torch::nn::Linear(emb_dim, emb_dim));
  stem_ = register_module("stem", conv3x3(cfg_.in_channels, cfg_.base_width));

  auto ch = cfg_.base_width;
  for (std::int64_t l = 0; l < levels; ++l) {
    for (std::int64_t j = 0; j < nr; ++j) {
      auto blk = std::make_shared<ResBlockImpl>(ch, width(l), emb_dim);
      enc_blocks_.push_back(blk);
      register_module("enc" + std::to_string(enc_blocks_.size() - 1), blk);
      ch = width(l);
      std::shared_ptr<AttentionImpl> at;
      if (attended(l)) {
        at = std::make_shared<AttentionImpl>(ch, cfg_.num_heads);
        register_module("enc" + std::to_string(enc_blocks_.size() - 1) + "_at",
                        at);
      }
      enc_attn_.push_back(at);
    }
    auto down = std::make_shared<ResBlockImpl>(ch, ch, emb_dim,
                                               ResBlockImpl::Resample::kDown);
    downs_.push_back(down);
    register_module("down" + std::to_string(l), down);
  }

  mid_a_ = std::make_shared<ResBlockImpl>(ch, ch, emb_dim);
  register_module("mid_a", mid_a_);
  mid_attn_ = std::make_shared<AttentionImpl>(ch, cfg_.num_heads);
  register_module("mid_at", mid_attn_);
  mid_b_ = std::make_shared<ResBlockImpl>(ch, ch, emb_dim);
  register_module("mid_b", mid_b_);

  std::int64_t tap = 0;
  for (std::int64_t l = levels - 1; l >= 0; --l) {
    auto up = std::make_shared<ResBlockImpl>(ch, ch, emb_dim,
                                             ResBlockImpl::Resample::kUp);
    ups_.push_back(up);
    register_module("up" + std::to_string(levels - 1 - l), up);
    for (std::int64_t j = 0; j <= nr; ++j) {
      const auto skip_ch =
          j < nr ? width(l) : (l > 0 ? width(l - 1) : cfg_.base_width);
      auto blk =
          std::make_shared<ResBlockImpl>(ch + skip_ch, width(l), emb_dim);
      dec_blocks_.push_back(blk);
      register_module("dec" + std::to_string(tap), blk);
      ch = width(l);
      std::shared_ptr<AttentionImpl> at;
      if (attended(l)) {
        at = std::make_shared<AttentionImpl>(ch, cfg_.num_heads);
        register_module("dec" + std::to_string(tap) + "_at", at);
      }
      dec_attn_.push_back(at);
      taps_.push_back({tap, ch, cfg_.input_size >> l});
      ++tap;
    }
  }

  out_norm_ = register_module("out_norm", make_norm(ch));
  out_conv_ = register_module("out_conv", conv3x3(ch, cfg_.out_channels));
}

torch::Tensor UNetImpl::run(const torch::Tensor& x, const torch::Tensor& t,
                            const std::set<std::int64_t>* want,
                            std::map<std::int64_t, torch::Tensor>* acts) {
  if (x.dim() != 4 || x.size(1) != cfg_.in_channels) {
    throw DimensionError("unet: expected [B," +
                         std::to_string(cfg_.in_channels) + ",H,W], got " +
                         c10::str(x.sizes()));
  }
  const auto div = std::int64_t(1) << cfg_.levels();
  if (x.size(2) % div != 0 || x.size(3) % div != 0 || x.size(2) < div ||
      x.size(3) < div) {
    throw DimensionError("unet: H and W must be positive multiples of " +
                         std::to_string(div));
  }
  auto tb = t.dim() == 0 ? t.expand({x.size(0)}) : t;
  if (tb.dim() != 1 || tb.size(0) != x.size(0)) {
    throw DimensionError("unet: t must be scalar or [B]");
  }
  if (want) {
    for (auto i : *want) {
      if (i < 0 || i >= static_cast<std::int64_t>(taps_.size())) {
        throw RangeError("unet: decoder tap " + std::to_string(i) +
                         " outside [0, " + std::to_string(taps_.size()) + ")");
      }
    }
  }

  auto emb = time_fc2_(torch::silu(
      time_fc1_(timestep_embedding(tb, cfg_.base_width))));

  std::vector<torch::Tensor> skips;
  auto h = stem_(x);
  skips.push_back(h);
  const auto nr = cfg_.num_res_blocks;
  std::size_t eb = 0;
  for (std::int64_t l = 0; l < cfg_.levels(); ++l) {
    for (std::int64_t j = 0; j < nr; ++j, ++eb) {
      h = enc_blocks_[eb]->forward(h, emb);
      if (enc_attn_[eb]) h = enc_attn_[eb]->forward(h);
      skips.push_back(h);
    }
    h = downs_[static_cast<std::size_t>(l)]->forward(h, emb);
    if (l != cfg_.levels() - 1) skips.push_back(h);
  }

  h = mid_a_->forward(h, emb);
  h = mid_attn_->forward(h);
  h = mid_b_->forward(h, emb);

  std::size_t db = 0;
  for (std::int64_t l = cfg_.levels() - 1; l >= 0; --l) {
    h = ups_[static_cast<std::size_t>(cfg_.levels() - 1 - l)]->forward(h, emb);
    for (std::int64_t j = 0; j <= nr; ++j, ++db) {
      h = dec_blocks_[db]->forward(torch::cat({h, skips.back()}, 1), emb);
      skips.pop_back();
      if (dec_attn_[db]) h = dec_attn_[db]->forward(h);
      const auto idx = static_cast<std::int64_t>(db);
      if (want && want->count(idx)) (*acts)[idx] = h;
    }
  }

  return out_conv_(torch::silu(out_norm_(h)));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x,
                                const torch::Tensor& t) {
  return run(x, t, nullptr, nullptr);
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, std::int64_t t) {
  return run(x, torch::tensor(t), nullptr, nullptr);
}

std::pair<torch::Tensor, std::map<std::int64_t, torch::Tensor>>
UNetImpl::forward_with_activations(const torch::Tensor& x,
                                   const torch::Tensor& t,
                                   const std::set<std::int64_t>& taps) {
  std::map<std::int64_t, torch::Tensor> acts;
  auto pred = run(x, t, &taps, &acts);
  return {pred, std::move(acts)};
}

UNet build_unet(const UNetConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(seed);
  return UNet(cfg);
}

}  // namespace mdm::unet
