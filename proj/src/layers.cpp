#include "diffedge/layers.hpp"

#include <cmath>

namespace diffedge {

namespace F = torch::nn::functional;

int norm_groups(int64_t channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim) {
  const int64_t half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, t.options()) / static_cast<double>(half));
  // Scale t so the lowest frequencies still resolve the small-t end of (0, 1].
  auto args = (t.view({-1, 1}) * 1000.0) * freqs.view({1, -1});
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
  if (dim % 2 == 1) emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, emb.options())}, 1);
  return emb;
}

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1x1(int64_t in, int64_t out) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)); }

ResBlockImpl::ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim) {
  norm1_ = register_module("norm1", torch::nn::GroupNorm(norm_groups(in_channels), in_channels));
  conv1_ = register_module("conv1", conv3x3(in_channels, out_channels));
  norm2_ = register_module("norm2", torch::nn::GroupNorm(norm_groups(out_channels), out_channels));
  conv2_ = register_module("conv2", conv3x3(out_channels, out_channels));
  if (in_channels != out_channels) skip_ = register_module("skip", conv1x1(in_channels, out_channels));
  if (time_dim > 0) time_proj_ = register_module("time_proj", torch::nn::Linear(time_dim, out_channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& time_embedding) {
  auto h = conv1_(F::silu(norm1_(x)));
  if (time_proj_ && time_embedding.defined()) {
    h = h + time_proj_(F::silu(time_embedding)).unsqueeze(-1).unsqueeze(-1);
  }
  h = conv2_(F::silu(norm2_(h)));
  return (skip_ ? skip_(x) : x) + h;
}

DownsampleImpl::DownsampleImpl(int64_t in_channels, int64_t out_channels) {
  conv_ = register_module("conv", conv3x3(in_channels, out_channels, 2));
}

torch::Tensor DownsampleImpl::forward(const torch::Tensor& x) { return conv_(x); }

UpsampleImpl::UpsampleImpl(int64_t in_channels, int64_t out_channels) {
  conv_ = register_module("conv", conv3x3(in_channels, out_channels));
}

torch::Tensor UpsampleImpl::forward(const torch::Tensor& x, std::vector<int64_t> size) {
  if (size.empty()) size = {2 * x.size(-2), 2 * x.size(-1)};
  auto up = F::interpolate(x, F::InterpolateFuncOptions().size(size).mode(torch::kNearest));
  return conv_(up);
}

TimeEmbeddingImpl::TimeEmbeddingImpl(int64_t feature_dim, int64_t embed_dim)
    : feature_dim_(feature_dim), embed_dim_(embed_dim) {
  fc1_ = register_module("fc1", torch::nn::Linear(feature_dim, embed_dim));
  fc2_ = register_module("fc2", torch::nn::Linear(embed_dim, embed_dim));
}

torch::Tensor TimeEmbeddingImpl::forward(const torch::Tensor& t) {
  return fc2_(F::silu(fc1_(sinusoidal_embedding(t, feature_dim_))));
}

}  // namespace diffedge
