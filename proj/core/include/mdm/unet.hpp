#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace mdm::unet {

// Time-conditioned U-Net. The down path runs num_res_blocks residual
// blocks per level and then a strided residual transition after every
// level, so the middle blocks sit at input_size / 2^levels. The up path
// mirrors it: a residual upsampling transition per level followed by
// (num_res_blocks + 1) residual blocks, each consuming one skip
// connection. Those up-path residual blocks are the "decoder blocks"
// feature extraction taps into, indexed 0 = deepest; transitions are not
// tapped. Total taps = levels * (num_res_blocks + 1).
struct UNetConfig {
  std::int64_t in_channels = 3;
  std::int64_t out_channels = 3;
  std::int64_t input_size = 64;   // nominal; fixes attention placement
  std::int64_t base_width = 64;   // even
  std::vector<std::int64_t> channel_mults = {1, 2, 2};
  std::set<std::int64_t> attention_resolutions = {16, 8};
  std::int64_t num_res_blocks = 1;
  std::int64_t time_embed_dim = 0;  // 0 means 4 * base_width
  std::int64_t num_heads = 1;

  std::int64_t levels() const {
    return static_cast<std::int64_t>(channel_mults.size());
  }
  std::int64_t embed_dim() const {
    return time_embed_dim > 0 ? time_embed_dim : 4 * base_width;
  }
  // Throws ConfigError on violations (attention at a resolution the down
  // path never produces, odd base width, out_channels != in_channels...).
  void validate() const;
};

// One feature-extraction point on the up path.
struct DecoderTap {
  std::int64_t block_index = 0;  // 0 = deepest
  std::int64_t channels = 0;
  std::int64_t spatial = 0;  // at the nominal input_size
};

// Sinusoidal embedding: [sin(t f_0).. | cos(t f_0)..] over dim/2 geometric
// frequencies. t: float tensor [B], entries >= 0; dim even.
torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim);

class ResBlockImpl;
class AttentionImpl;

class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(UNetConfig cfg);

  // x [B,C,H,W] with H, W divisible by 2^levels; t int64 [B], entries
  // >= 0. Output shape equals input shape.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);
  torch::Tensor forward(const torch::Tensor& x, std::int64_t t);

  // Same pass, additionally returning the requested decoder block
  // outputs at native resolution. The prediction is bitwise the one
  // forward() yields. Unknown tap index -> RangeError.
  std::pair<torch::Tensor, std::map<std::int64_t, torch::Tensor>>
  forward_with_activations(const torch::Tensor& x, const torch::Tensor& t,
                           const std::set<std::int64_t>& taps);

  const std::vector<DecoderTap>& decoder_taps() const { return taps_; }
  const UNetConfig& config() const { return cfg_; }

 private:
  torch::Tensor run(const torch::Tensor& x, const torch::Tensor& t,
                    const std::set<std::int64_t>* want,
                    std::map<std::int64_t, torch::Tensor>* acts);

  UNetConfig cfg_;
  std::vector<DecoderTap> taps_;

  torch::nn::Linear time_fc1_{nullptr}, time_fc2_{nullptr};
  torch::nn::Conv2d stem_{nullptr}, out_conv_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
  std::vector<std::shared_ptr<ResBlockImpl>> enc_blocks_, downs_, ups_,
      dec_blocks_;
  std::vector<std::shared_ptr<AttentionImpl>> enc_attn_, dec_attn_;  // or null
  std::shared_ptr<ResBlockImpl> mid_a_, mid_b_;
  std::shared_ptr<AttentionImpl> mid_attn_;
};

TORCH_MODULE(UNet);

// Deterministic construction: parameter init is a pure function of
// (config, seed).
UNet build_unet(const UNetConfig& cfg, std::uint64_t seed);

}  // namespace mdm::unet
