#pragma once

// Small convolutional building blocks shared by the autoencoder, the
// condition encoder and the denoising U-Net.

#include <torch/torch.h>

namespace diffedge {

// Number of GroupNorm groups for a channel count (largest of 8, 4, 2, 1 that divides it).
int norm_groups(int64_t channels);

// Sinusoidal features of a per-sample scalar t in [0, 1]; returns [N, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim);

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1);
torch::nn::Conv2d conv1x1(int64_t in, int64_t out);

// Pre-activation residual block: norm -> SiLU -> conv -> (+ time) -> norm -> SiLU -> conv, plus skip.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim = 0);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& time_embedding = {});

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear time_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

// Stride-2 convolution.
class DownsampleImpl : public torch::nn::Module {
 public:
  DownsampleImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(Downsample);

// Nearest-neighbour upsampling followed by a 3x3 convolution. Without an
// explicit target size the input is doubled.
class UpsampleImpl : public torch::nn::Module {
 public:
  UpsampleImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x, std::vector<int64_t> size = {});

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(Upsample);

// Sinusoidal features followed by a two-layer MLP.
class TimeEmbeddingImpl : public torch::nn::Module {
 public:
  TimeEmbeddingImpl(int64_t feature_dim, int64_t embed_dim);
  torch::Tensor forward(const torch::Tensor& t);
  int64_t embed_dim() const { return embed_dim_; }

 private:
  int64_t feature_dim_;
  int64_t embed_dim_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(TimeEmbedding);

}  // namespace diffedge
