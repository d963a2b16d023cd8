#pragma once

// Edge-map autoencoder: compresses [N, 1, H, W] edge maps into [N, C, H/4, W/4]
// latent codes and back. Deterministic bottleneck; the latent is multiplied by
// a single global normalization scale so it has roughly unit variance.
//
// The decoder logits carry a fixed density skip,
//   logits = D(z) + density_gain * up4(mean_c(z)),
// so raising the channel mean of a latent pixel always raises the decoded
// edge logits of its 4x4 block.

#include <torch/torch.h>

#include "diffedge/layers.hpp"

namespace diffedge {

struct AutoencoderConfig {
  int64_t latent_channels = 4;
  int64_t base_width = 16;
  double normalization_scale = 1.0;
  // Gain of the channel-mean skip into the decoder logits (0 disables it).
  double density_gain = 2.0;

  void validate() const;
};

class EdgeAutoencoderImpl : public torch::nn::Module {
 public:
  explicit EdgeAutoencoderImpl(const AutoencoderConfig& config);

  // Scaled latent. Throws std::invalid_argument unless H and W are divisible by 4.
  torch::Tensor encode(const torch::Tensor& edges);
  // Edge probabilities in [0, 1], 4x the latent's spatial size.
  torch::Tensor decode(const torch::Tensor& latent);
  // Pre-sigmoid decoder output.
  torch::Tensor decode_logits(const torch::Tensor& latent);

  // Unscaled encoder output, used to estimate the normalization scale.
  torch::Tensor encode_unscaled(const torch::Tensor& edges);

  double normalization_scale() const;
  void set_normalization_scale(double scale);

  const AutoencoderConfig& config() const { return config_; }

  // Sets requires_grad(false) on every parameter.
  void freeze();

 private:
  AutoencoderConfig config_;
  torch::Tensor scale_;  // buffer, scalar

  torch::nn::Conv2d enc_in_{nullptr};
  ResBlock enc_block0_{nullptr};
  Downsample enc_down0_{nullptr};
  ResBlock enc_block1_{nullptr};
  Downsample enc_down1_{nullptr};
  ResBlock enc_block2_{nullptr};
  torch::nn::GroupNorm enc_norm_{nullptr};
  torch::nn::Conv2d enc_out_{nullptr};

  torch::nn::Conv2d dec_in_{nullptr};
  ResBlock dec_block0_{nullptr};
  Upsample dec_up0_{nullptr};
  ResBlock dec_block1_{nullptr};
  Upsample dec_up1_{nullptr};
  ResBlock dec_block2_{nullptr};
  torch::nn::GroupNorm dec_norm_{nullptr};
  torch::nn::Conv2d dec_out_{nullptr};
};
TORCH_MODULE(EdgeAutoencoder);

// Throws std::invalid_argument unless `edges` is [N, 1, H, W] with H, W divisible by 4.
void check_edge_batch(const torch::Tensor& edges);

}  // namespace diffedge
