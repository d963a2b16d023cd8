#include "diffedge/objective.hpp"

#include <torch/autograd.h>

#include <stdexcept>

namespace diffedge {

namespace F = torch::nn::functional;
using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

void WCEConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("wce lambda must be > 0");
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("wce eta must lie in (0, 1)");
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw std::invalid_argument("wce epsilon must lie in (0, 0.5)");
  if (!(weight >= 0.0)) throw std::invalid_argument("wce weight must be >= 0");
}

namespace {

torch::Tensor as_batch(const torch::Tensor& x) {
  if (x.dim() == 2) return x.unsqueeze(0).unsqueeze(0);
  if (x.dim() == 3) return x.unsqueeze(1);
  return x;
}

void check_gt_range(const torch::Tensor& gt) {
  if (gt.numel() == 0) return;
  const auto lo = gt.min().item<double>();
  const auto hi = gt.max().item<double>();
  if (lo < 0.0 || hi > 1.0) throw std::invalid_argument("ground-truth edge values must lie in [0, 1]");
}

}  // namespace

WCEWeights wce_weights(const torch::Tensor& gt, const WCEConfig& cfg) {
  WCEWeights w;
  w.positives = (gt >= cfg.eta).sum().item<int64_t>();
  w.negatives = (gt == 0).sum().item<int64_t>();
  const auto supervised = w.positives + w.negatives;
  if (supervised > 0) {
    w.alpha = cfg.lambda * static_cast<double>(w.positives) / static_cast<double>(supervised);
    w.beta = static_cast<double>(w.negatives) / static_cast<double>(supervised);
  }
  return w;
}

torch::Tensor wce_loss_per_image(const torch::Tensor& pred_in, const torch::Tensor& gt_in, const WCEConfig& cfg,
                                 WCEReduction reduction) {
  cfg.validate();
  if (!pred_in.sizes().equals(gt_in.sizes())) throw std::invalid_argument("wce_loss: pred and gt shapes differ");
  check_gt_range(gt_in);
  const auto pred = as_batch(pred_in);
  const auto gt = as_batch(gt_in).to(pred.dtype());
  const auto n = pred.size(0);

  const auto pos = (gt >= cfg.eta).to(pred.dtype());
  const auto neg = (gt == 0).to(pred.dtype());
  const auto n_pos = pos.flatten(1).sum(1);
  const auto n_neg = neg.flatten(1).sum(1);
  const auto supervised = n_pos + n_neg;
  const auto safe = supervised.clamp_min(1.0);
  const auto alpha = (cfg.lambda * n_pos / safe).view({n, 1, 1, 1});
  const auto beta = (n_neg / safe).view({n, 1, 1, 1});

  const auto p = pred.clamp(cfg.epsilon, 1.0 - cfg.epsilon);
  const auto terms = -alpha * neg * torch::log1p(-p) - beta * pos * torch::log(p);
  auto per_image = terms.flatten(1).sum(1);
  if (reduction == WCEReduction::kSupervisedMean) per_image = per_image / safe;
  return per_image;
}

torch::Tensor wce_loss(const torch::Tensor& pred, const torch::Tensor& gt, const WCEConfig& cfg,
                       WCEReduction reduction) {
  return wce_loss_per_image(pred, gt, cfg, reduction).sum();
}

torch::Tensor surrogate_latent_gradient(const torch::Tensor& image_grad, int64_t latent_channels) {
  if (image_grad.dim() != 4 || image_grad.size(1) != 1)
    throw std::invalid_argument("surrogate_latent_gradient expects [N, 1, H, W]");
  // avg_pool * 16 == 4x4 sum pooling
  const auto pooled = F::avg_pool2d(image_grad, F::AvgPool2dFuncOptions(4).stride(4)) * 16.0;
  return (pooled / static_cast<double>(latent_channels))
      .expand({image_grad.size(0), latent_channels, pooled.size(2), pooled.size(3)})
      .contiguous();
}

namespace {

struct DistilledDecode : public torch::autograd::Function<DistilledDecode> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& z0_pred, EdgeAutoencoderImpl* decoder) {
    ctx->saved_data["channels"] = z0_pred.size(1);
    return decoder->decode(z0_pred);
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    const auto channels = ctx->saved_data["channels"].toInt();
    return {surrogate_latent_gradient(grad_outputs[0], channels), torch::Tensor()};
  }
};

}  // namespace

torch::Tensor distilled_decode(const torch::Tensor& z0_pred, EdgeAutoencoder& autoencoder) {
  return DistilledDecode::apply(z0_pred, autoencoder.get());
}

torch::Tensor wce_time_weight(const torch::Tensor& t) { return (1.0 - t).square(); }

double wce_time_weight(double t) { return (1.0 - t) * (1.0 - t); }

LossBreakdown combined_loss(const DenoiserOutput& out, const torch::Tensor& f_target, const torch::Tensor& n_target,
                            const torch::Tensor& z0_pred, const torch::Tensor& gt, const torch::Tensor& t,
                            EdgeAutoencoder& autoencoder, const WCEConfig& cfg, DecoderGradient mode) {
  if (t.numel() == 0) throw std::invalid_argument("combined_loss: empty time tensor");
  const auto t_lo = t.min().item<double>();
  const auto t_hi = t.max().item<double>();
  if (!(t_lo > 0.0) || t_hi > 1.0) throw std::invalid_argument("combined_loss: t must lie in (0, 1]");
  if (!out.f_pred.sizes().equals(f_target.sizes()) || !out.n_pred.sizes().equals(n_target.sizes()))
    throw std::invalid_argument("combined_loss: prediction and target shapes differ");

  LossBreakdown loss;
  loss.f_loss = (out.f_pred - f_target).square().mean();
  loss.n_loss = (out.n_pred - n_target).square().mean();

  const auto decoded =
      mode == DecoderGradient::kDistilled ? distilled_decode(z0_pred, autoencoder) : autoencoder->decode(z0_pred);
  const auto wce = wce_loss_per_image(decoded, gt, cfg, WCEReduction::kSupervisedMean);
  const auto batch = wce.size(0);
  auto sigma = wce_time_weight(t.to(wce.dtype()));
  if (sigma.dim() == 0) sigma = sigma.expand({batch});
  if (sigma.size(0) != batch) throw std::invalid_argument("combined_loss: one time per sample required");

  loss.wce_loss = wce.mean();
  loss.sigma_t = sigma.mean();
  loss.total = loss.f_loss + loss.n_loss + cfg.weight * (sigma * wce).mean();
  return loss;
}

}  // namespace diffedge
