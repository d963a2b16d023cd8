#include "diffedge/denoiser.hpp"

#include <sstream>
#include <stdexcept>

namespace diffedge {

namespace F = torch::nn::functional;

void DenoiserConfig::validate() const {
  if (latent_channels < 1) throw std::invalid_argument("denoiser latent_channels must be >= 1");
  if (latent_height < 1 || latent_width < 1) throw std::invalid_argument("denoiser latent geometry must be positive");
  if (base_width < 1 || cond_width < 1 || time_dim < 2)
    throw std::invalid_argument("denoiser widths must be positive (time_dim >= 2)");
}

std::vector<int64_t> DenoiserConfig::condition_channels() const { return {cond_width, 2 * cond_width, 2 * cond_width}; }

ConditionFeatures ConditionFeatures::slice(int64_t begin, int64_t end) const {
  ConditionFeatures out;
  for (const auto& level : levels) out.levels.push_back(level.slice(0, begin, end));
  return out;
}

ConditionFeatures ConditionFeatures::repeat(int64_t times) const {
  ConditionFeatures out;
  for (const auto& level : levels) {
    std::vector<int64_t> reps(static_cast<size_t>(level.dim()), 1);
    reps[0] = times;
    out.levels.push_back(level.repeat(reps));
  }
  return out;
}

ConditionEncoderImpl::ConditionEncoderImpl(const DenoiserConfig& config) {
  config.validate();
  const auto ch = config.condition_channels();
  const auto stem = std::max<int64_t>(8, config.cond_width / 2);
  stem_ = register_module("stem", conv3x3(3, stem));
  down0_ = register_module("down0", Downsample(stem, config.cond_width));
  block0_ = register_module("block0", ResBlock(config.cond_width, config.cond_width));
  down1_ = register_module("down1", Downsample(config.cond_width, ch[0]));
  block1_ = register_module("block1", ResBlock(ch[0], ch[0]));
  down2_ = register_module("down2", Downsample(ch[0], ch[1]));
  block2_ = register_module("block2", ResBlock(ch[1], ch[1]));
  down3_ = register_module("down3", Downsample(ch[1], ch[2]));
  block3_ = register_module("block3", ResBlock(ch[2], ch[2]));
}

ConditionFeatures ConditionEncoderImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) throw std::invalid_argument("condition image must be [N, 3, H, W]");
  if (image.size(2) % 4 != 0 || image.size(3) % 4 != 0)
    throw std::invalid_argument("condition image height and width must be divisible by 4");
  auto h = F::silu(stem_(image * 2.0 - 1.0));
  h = block0_(down0_(h));
  ConditionFeatures out;
  h = block1_(down1_(h));
  out.levels.push_back(h);
  h = block2_(down2_(h));
  out.levels.push_back(h);
  h = block3_(down3_(h));
  out.levels.push_back(h);
  return out;
}

DenoisingUNetImpl::DenoisingUNetImpl(const DenoiserConfig& config) : config_(config) {
  config_.validate();
  const auto c = config_.latent_channels;
  const auto w = config_.base_width;
  const auto td = config_.time_dim;
  const auto cond = config_.condition_channels();
  const auto w1 = w * 3 / 2;
  const auto w2 = 2 * w;

  time_embed_ = register_module("time_embed", TimeEmbedding(td / 2 * 2, td));
  in_conv_ = register_module("in_conv", conv3x3(c + cond[0], w));
  enc0_ = register_module("enc0", ResBlock(w, w, td));
  down0_ = register_module("down0", Downsample(w, w1));
  enc1_ = register_module("enc1", ResBlock(w1 + cond[1], w1, td));
  down1_ = register_module("down1", Downsample(w1, w2));
  enc2_ = register_module("enc2", ResBlock(w2 + cond[2], w2, td));
  mid_ = register_module("mid", ResBlock(w2, w2, td));
  if (config_.use_fft_filter && config_.fft_at_bottleneck) {
    // Bottleneck is the latent size halved twice (ceil).
    const auto bh = (config_.latent_height + 3) / 4;
    const auto bw = (config_.latent_width + 3) / 4;
    mid_filter_ = register_module("mid_filter", AdaptiveFFTFilter(w2, bh, bw));
  }
  up1_ = register_module("up1", Upsample(w2, w1));
  dec1_ = register_module("dec1", ResBlock(2 * w1, w1, td));
  up0_ = register_module("up0", Upsample(w1, w));
  dec0_ = register_module("dec0", ResBlock(2 * w, w, td));
  out_norm_ = register_module("out_norm", torch::nn::GroupNorm(norm_groups(w), w));
  if (config_.use_fft_filter) {
    trunk_filter_ =
        register_module("trunk_filter", AdaptiveFFTFilter(w, config_.latent_height, config_.latent_width));
  }
  f_head_ = register_module("f_head", conv3x3(w, c));
  n_head_ = register_module("n_head", conv3x3(w, c));
}

DenoiserOutput DenoisingUNetImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t,
                                          const ConditionFeatures& cond) {
  if (z_t.dim() != 4 || z_t.size(1) != config_.latent_channels || z_t.size(2) != config_.latent_height ||
      z_t.size(3) != config_.latent_width) {
    std::ostringstream msg;
    msg << "denoiser expects latents [N, " << config_.latent_channels << ", " << config_.latent_height << ", "
        << config_.latent_width << "], got " << z_t.sizes();
    throw std::invalid_argument(msg.str());
  }
  if (cond.levels.size() != 3) throw std::invalid_argument("denoiser expects a three-level condition pyramid");
  if (cond.levels[0].size(2) != z_t.size(2) || cond.levels[0].size(3) != z_t.size(3) ||
      cond.levels[0].size(0) != z_t.size(0))
    throw std::invalid_argument("condition features do not align with the latent");

  const auto n = z_t.size(0);
  auto tt = t.dim() == 0 ? t.expand({n}) : t;
  const auto temb = time_embed_(tt.to(z_t.dtype()));

  auto h = in_conv_(torch::cat({z_t, cond.levels[0]}, 1));
  const auto skip0 = enc0_(h, temb);
  h = down0_(skip0);
  const auto skip1 = enc1_(torch::cat({h, cond.levels[1]}, 1), temb);
  h = down1_(skip1);
  h = enc2_(torch::cat({h, cond.levels[2]}, 1), temb);
  h = mid_(h, temb);
  if (mid_filter_) h = mid_filter_(h);
  h = up1_->forward(h, {skip1.size(2), skip1.size(3)});
  h = dec1_(torch::cat({h, skip1}, 1), temb);
  h = up0_->forward(h, {skip0.size(2), skip0.size(3)});
  h = dec0_(torch::cat({h, skip0}, 1), temb);
  h = F::silu(out_norm_(h));
  if (trunk_filter_) h = trunk_filter_(h);
  return {f_head_(h), n_head_(h)};
}

EdgeDenoiserImpl::EdgeDenoiserImpl(const DenoiserConfig& config) : config_(config) {
  cond_ = register_module("condition", ConditionEncoder(config));
  unet_ = register_module("unet", DenoisingUNet(config));
}

ConditionFeatures EdgeDenoiserImpl::encode_condition(const torch::Tensor& image) { return cond_(image); }

DenoiserOutput EdgeDenoiserImpl::denoise(const torch::Tensor& z_t, const torch::Tensor& t,
                                         const ConditionFeatures& cond) {
  return unet_(z_t, t, cond);
}

}  // namespace diffedge
