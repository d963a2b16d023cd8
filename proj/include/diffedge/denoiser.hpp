#pragma once

// Conditional denoising U-Net over latent codes. The input image is turned into
// a feature pyramid by a small convolutional condition encoder; the pyramid is
// concatenated to the U-Net encoder features at matching resolutions. The
// shared trunk feature passes through an adaptive FFT filter before it splits
// into the transition (f) and noise (n) heads.

#include <torch/torch.h>

#include <vector>

#include "diffedge/diffusion.hpp"
#include "diffedge/fft_filter.hpp"
#include "diffedge/layers.hpp"

namespace diffedge {

struct DenoiserConfig {
  int64_t latent_channels = 4;
  // Latent geometry the FFT filter is built for (crop size / 4).
  int64_t latent_height = 80;
  int64_t latent_width = 80;
  int64_t base_width = 64;
  int64_t cond_width = 32;
  int64_t time_dim = 128;
  bool use_fft_filter = true;
  // Also filter the bottleneck feature (per-stage placement hook).
  bool fft_at_bottleneck = false;

  void validate() const;
  // Channels of the three condition pyramid levels (strides 4, 8, 16).
  std::vector<int64_t> condition_channels() const;
};

// Feature pyramid at 1/4, 1/8 and 1/16 of the image resolution.
struct ConditionFeatures {
  std::vector<torch::Tensor> levels;

  // Batch slice [begin, end) of every level.
  ConditionFeatures slice(int64_t begin, int64_t end) const;
  // Repeats every level `times` along the batch dimension.
  ConditionFeatures repeat(int64_t times) const;
};

class ConditionEncoderImpl : public torch::nn::Module {
 public:
  explicit ConditionEncoderImpl(const DenoiserConfig& config);

  // `image` is [N, 3, H, W] in [0, 1]; throws std::invalid_argument unless H, W are divisible by 4.
  ConditionFeatures forward(const torch::Tensor& image);

 private:
  torch::nn::Conv2d stem_{nullptr};
  Downsample down0_{nullptr}, down1_{nullptr}, down2_{nullptr}, down3_{nullptr};
  ResBlock block0_{nullptr}, block1_{nullptr}, block2_{nullptr}, block3_{nullptr};
};
TORCH_MODULE(ConditionEncoder);

class DenoisingUNetImpl : public torch::nn::Module {
 public:
  explicit DenoisingUNetImpl(const DenoiserConfig& config);

  // `t` is [N] (or a scalar broadcast to the batch). Throws std::invalid_argument
  // when z_t does not match the configured latent geometry.
  DenoiserOutput forward(const torch::Tensor& z_t, const torch::Tensor& t, const ConditionFeatures& cond);

  const DenoiserConfig& config() const { return config_; }
  AdaptiveFFTFilter trunk_filter() const { return trunk_filter_; }

 private:
  DenoiserConfig config_;
  TimeEmbedding time_embed_{nullptr};
  torch::nn::Conv2d in_conv_{nullptr};
  ResBlock enc0_{nullptr};
  Downsample down0_{nullptr};
  ResBlock enc1_{nullptr};
  Downsample down1_{nullptr};
  ResBlock enc2_{nullptr}, mid_{nullptr};
  AdaptiveFFTFilter mid_filter_{nullptr};
  Upsample up1_{nullptr};
  ResBlock dec1_{nullptr};
  Upsample up0_{nullptr};
  ResBlock dec0_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
  AdaptiveFFTFilter trunk_filter_{nullptr};
  torch::nn::Conv2d f_head_{nullptr}, n_head_{nullptr};
};
TORCH_MODULE(DenoisingUNet);

// Image condition encoder and U-Net trained together as one unit.
class EdgeDenoiserImpl : public torch::nn::Module {
 public:
  explicit EdgeDenoiserImpl(const DenoiserConfig& config);

  ConditionFeatures encode_condition(const torch::Tensor& image);
  DenoiserOutput denoise(const torch::Tensor& z_t, const torch::Tensor& t, const ConditionFeatures& cond);

  const DenoiserConfig& config() const { return config_; }
  ConditionEncoder condition_encoder() const { return cond_; }
  DenoisingUNet unet() const { return unet_; }

 private:
  DenoiserConfig config_;
  ConditionEncoder cond_{nullptr};
  DenoisingUNet unet_{nullptr};
};
TORCH_MODULE(EdgeDenoiser);

}  // namespace diffedge
