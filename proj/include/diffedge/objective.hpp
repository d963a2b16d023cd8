#pragma once

// Training objective: uncertainty-aware weighted cross-entropy on decoded edge
// maps, a decoder pass whose backward skips the autoencoder, and the combined
// decoupled-diffusion loss.

#include <torch/torch.h>

#include "diffedge/autoencoder.hpp"
#include "diffedge/diffusion.hpp"

namespace diffedge {

struct WCEConfig {
  double lambda = 1.1;
  double eta = 0.3;
  // Predictions are clamped to [epsilon, 1 - epsilon] before the logs.
  double epsilon = 1e-6;
  // Multiplier of the time-weighted WCE term in the combined objective.
  double weight = 1.0;

  void validate() const;
};

enum class WCEReduction {
  kSum,              // plain sum of the per-pixel terms
  kSupervisedMean,   // per-image sum divided by the number of supervised pixels
};

// Class-balance weights of one ground-truth map.
struct WCEWeights {
  int64_t positives = 0;  // gt >= eta
  int64_t negatives = 0;  // gt == 0
  double alpha = 0.0;     // weight of the negative term
  double beta = 0.0;      // weight of the positive term
};

WCEWeights wce_weights(const torch::Tensor& gt, const WCEConfig& cfg);

// Per-image loss, shape [N], for [N, 1, H, W] (or [N, H, W]) inputs:
//   gt == 0       : alpha * -log(1 - p)
//   0 < gt < eta  : 0
//   gt >= eta     : beta * -log(p)
// with alpha = lambda |E+| / (|E+| + |E-|) and beta = |E-| / (|E+| + |E-|)
// counted per image. Throws std::invalid_argument on shape mismatch or gt
// values outside [0, 1].
torch::Tensor wce_loss_per_image(const torch::Tensor& pred, const torch::Tensor& gt, const WCEConfig& cfg,
                                 WCEReduction reduction = WCEReduction::kSum);

// Single-map convenience: accepts [H, W] or [1, 1, H, W] and returns a scalar.
torch::Tensor wce_loss(const torch::Tensor& pred, const torch::Tensor& gt, const WCEConfig& cfg,
                       WCEReduction reduction = WCEReduction::kSum);

// Fixed linear surrogate for the transposed decoder Jacobian: 4x4 sum pooling
// of the image-space gradient, shared equally by the C latent channels.
// [N, 1, H, W] -> [N, C, H/4, W/4].
torch::Tensor surrogate_latent_gradient(const torch::Tensor& image_grad, int64_t latent_channels);

// decode(z0_pred) in the forward pass. In the backward pass the decoder is
// skipped: the gradient reaching the decoded map is mapped to the latent by
// surrogate_latent_gradient and nothing flows into the decoder weights.
torch::Tensor distilled_decode(const torch::Tensor& z0_pred, EdgeAutoencoder& autoencoder);

enum class DecoderGradient {
  kDistilled,     // distilled_decode
  kFullBackprop,  // ordinary backprop through the (frozen) decoder
};

struct LossBreakdown {
  torch::Tensor f_loss;    // mean squared error of the transition head
  torch::Tensor n_loss;    // mean squared error of the noise head
  torch::Tensor wce_loss;  // batch mean of the per-image WCE (supervised-mean reduction)
  torch::Tensor sigma_t;   // batch mean of (1 - t)^2
  torch::Tensor total;     // f_loss + n_loss + weight * mean_b(sigma_b * wce_b)
};

// Time-variant WCE weight (1 - t)^2.
torch::Tensor wce_time_weight(const torch::Tensor& t);
double wce_time_weight(double t);

// Combined objective. `t` is a scalar or one time per sample in (0, 1];
// throws std::invalid_argument otherwise.
LossBreakdown combined_loss(const DenoiserOutput& out, const torch::Tensor& f_target, const torch::Tensor& n_target,
                            const torch::Tensor& z0_pred, const torch::Tensor& gt, const torch::Tensor& t,
                            EdgeAutoencoder& autoencoder, const WCEConfig& cfg,
                            DecoderGradient mode = DecoderGradient::kDistilled);

}  // namespace diffedge
