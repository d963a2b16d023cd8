#include "diffedge/autoencoder.hpp"

#include <stdexcept>

namespace diffedge {

namespace F = torch::nn::functional;

void AutoencoderConfig::validate() const {
  if (latent_channels < 1) throw std::invalid_argument("autoencoder latent_channels must be >= 1");
  if (base_width < 1) throw std::invalid_argument("autoencoder base_width must be >= 1");
  if (!(normalization_scale > 0.0)) throw std::invalid_argument("autoencoder normalization_scale must be > 0");
  if (!(density_gain >= 0.0)) throw std::invalid_argument("autoencoder density_gain must be >= 0");
}

void check_edge_batch(const torch::Tensor& edges) {
  if (edges.dim() != 4 || edges.size(1) != 1)
    throw std::invalid_argument("edge maps must be shaped [N, 1, H, W]");
  if (edges.size(2) % 4 != 0 || edges.size(3) % 4 != 0)
    throw std::invalid_argument("edge map height and width must be divisible by 4");
}

EdgeAutoencoderImpl::EdgeAutoencoderImpl(const AutoencoderConfig& config) : config_(config) {
  config_.validate();
  const auto w = config_.base_width;
  const auto c = config_.latent_channels;
  scale_ = register_buffer("normalization_scale", torch::tensor(config_.normalization_scale, torch::kFloat64));

  enc_in_ = register_module("enc_in", conv3x3(1, w));
  enc_block0_ = register_module("enc_block0", ResBlock(w, w));
  enc_down0_ = register_module("enc_down0", Downsample(w, 2 * w));
  enc_block1_ = register_module("enc_block1", ResBlock(2 * w, 2 * w));
  enc_down1_ = register_module("enc_down1", Downsample(2 * w, 4 * w));
  enc_block2_ = register_module("enc_block2", ResBlock(4 * w, 4 * w));
  enc_norm_ = register_module("enc_norm", torch::nn::GroupNorm(norm_groups(4 * w), 4 * w));
  enc_out_ = register_module("enc_out", conv3x3(4 * w, c));

  dec_in_ = register_module("dec_in", conv3x3(c, 4 * w));
  dec_block0_ = register_module("dec_block0", ResBlock(4 * w, 4 * w));
  dec_up0_ = register_module("dec_up0", Upsample(4 * w, 2 * w));
  dec_block1_ = register_module("dec_block1", ResBlock(2 * w, 2 * w));
  dec_up1_ = register_module("dec_up1", Upsample(2 * w, w));
  dec_block2_ = register_module("dec_block2", ResBlock(w, w));
  dec_norm_ = register_module("dec_norm", torch::nn::GroupNorm(norm_groups(w), w));
  dec_out_ = register_module("dec_out", conv3x3(w, 1));
}

torch::Tensor EdgeAutoencoderImpl::encode_unscaled(const torch::Tensor& edges) {
  check_edge_batch(edges);
  auto h = enc_in_(edges);
  h = enc_block0_(h);
  h = enc_block1_(enc_down0_(h));
  h = enc_block2_(enc_down1_(h));
  return enc_out_(F::silu(enc_norm_(h)));
}

torch::Tensor EdgeAutoencoderImpl::encode(const torch::Tensor& edges) {
  return encode_unscaled(edges) * normalization_scale();
}

torch::Tensor EdgeAutoencoderImpl::decode_logits(const torch::Tensor& latent) {
  if (latent.dim() != 4 || latent.size(1) != config_.latent_channels)
    throw std::invalid_argument("latent must be shaped [N, latent_channels, h, w]");
  const auto z = latent / normalization_scale();
  auto h = dec_block0_(dec_in_(z));
  h = dec_block1_(dec_up0_(h));
  h = dec_block2_(dec_up1_(h));
  auto logits = dec_out_(F::silu(dec_norm_(h)));
  if (config_.density_gain > 0.0) {
    const auto density = F::interpolate(
        z.mean(1, true), F::InterpolateFuncOptions().size(std::vector<int64_t>{logits.size(2), logits.size(3)}).mode(torch::kNearest));
    logits = logits + config_.density_gain * density;
  }
  return logits;
}

torch::Tensor EdgeAutoencoderImpl::decode(const torch::Tensor& latent) { return torch::sigmoid(decode_logits(latent)); }

double EdgeAutoencoderImpl::normalization_scale() const { return scale_.item<double>(); }

void EdgeAutoencoderImpl::set_normalization_scale(double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("normalization scale must be > 0");
  torch::NoGradGuard no_grad;
  scale_.fill_(scale);
  config_.normalization_scale = scale;
}

void EdgeAutoencoderImpl::freeze() {
  for (auto& p : parameters()) p.set_requires_grad(false);
}

}  // namespace diffedge
