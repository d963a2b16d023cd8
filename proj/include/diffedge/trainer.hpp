#pragma once

// Two-stage training: the edge autoencoder first, then the conditional
// denoiser in the frozen autoencoder's latent space.

#include <torch/torch.h>

#include <json.hpp>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diffedge/autoencoder.hpp"
#include "diffedge/checkpoint.hpp"
#include "diffedge/datasets.hpp"
#include "diffedge/denoiser.hpp"
#include "diffedge/diffusion.hpp"
#include "diffedge/objective.hpp"

namespace diffedge {

struct TrainConfig {
  int64_t batch_size = 16;
  int64_t iterations = 25000;
  double lr_start = 5e-5;
  double lr_end = 5e-6;
  double weight_decay = 1e-4;
  double ema_decay = 0.999;
  int64_t ema_warmup = 200;
  uint64_t seed = 0;
  int64_t crop = 320;
  int64_t checkpoint_every = 1000;
  int64_t log_every = 1;

  void validate() const;
};

struct AETrainConfig {
  int64_t epochs = 30;
  int64_t batch_size = 16;
  double lr = 1e-3;
  uint64_t seed = 0;
  // Positive-class balancing weight of the reconstruction loss.
  double lambda = 1.1;
  // Class-balanced loss (weighted by lambda); plain per-pixel BCE when false.
  bool balanced = false;
  // Edge maps used to estimate the latent normalization scale.
  int64_t scale_samples = 64;

  void validate() const;
};

// Cosine decay from lr_start (step 0) to lr_end (step == iterations); steps
// outside [0, iterations] are clamped.
double lr_at(int64_t step, const TrainConfig& cfg);

// Decoupled-weight-decay Adam.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW(std::vector<torch::Tensor> params, Options options);

  void zero_grad();
  // Parameters without a gradient are skipped.
  void step(double lr);

  int64_t steps() const { return steps_; }
  NamedTensors state(const std::string& prefix) const;
  void load_state(const Checkpoint& ckpt, const std::string& prefix);

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> exp_avg_, exp_avg_sq_;
  Options options_;
  int64_t steps_ = 0;
};

// Exponential moving average of a parameter list. During the first `warmup`
// updates the shadow copies the weights; afterwards
// shadow <- decay * shadow + (1 - decay) * w.
class EMAState {
 public:
  EMAState(const std::vector<torch::Tensor>& params, double decay, int64_t warmup = 0);

  void update(const std::vector<torch::Tensor>& params);
  const std::vector<torch::Tensor>& shadow() const { return shadow_; }
  std::vector<torch::Tensor>& shadow() { return shadow_; }
  int64_t updates() const { return updates_; }
  void set_updates(int64_t n) { updates_ = n; }
  double decay() const { return decay_; }

  // Copies the shadow weights into `params`.
  void copy_to(const std::vector<torch::Tensor>& params) const;

 private:
  std::vector<torch::Tensor> shadow_;
  double decay_;
  int64_t warmup_;
  int64_t updates_ = 0;
};

// Binary cross-entropy on decoder logits, per pixel mean; class-balanced
// (positives weighted by the negative fraction, negatives by lambda times the
// positive fraction) unless `balanced` is false.
torch::Tensor reconstruction_loss(const torch::Tensor& logits, const torch::Tensor& gt, double lambda,
                                  bool balanced = true);

struct AETrainResult {
  EdgeAutoencoder model{nullptr};
  std::vector<double> epoch_losses;
};

// Trains on [1, H, W] edge maps (random flips and crops of `crop` pixels when
// the maps are larger). Sets the normalization scale to 1 / std of the
// unscaled latents over a corpus sample. Throws std::invalid_argument for an
// empty corpus.
AETrainResult train_autoencoder(const std::vector<torch::Tensor>& corpus, const AutoencoderConfig& config,
                                const AETrainConfig& train, int64_t crop,
                                const std::function<void(int64_t epoch, double loss)>& on_epoch = {});

struct StepStats {
  int64_t step = 0;
  double lr = 0.0;
  double f_loss = 0.0, n_loss = 0.0, wce_loss = 0.0, sigma_t = 0.0, total = 0.0;
};

// Raised when a loss turns non-finite; what() carries the batch ids and the loss breakdown.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DiffusionTrainerOptions {
  TrainConfig train;
  TransitionSchedule schedule;
  WCEConfig wce;
  AugmentationPolicy augment;
  DecoderGradient decoder_gradient = DecoderGradient::kDistilled;
  // Checkpoints, CSV log and divergence dumps go here; empty disables all file output.
  std::string run_dir;
  // Stored inline in every checkpoint.
  nlohmann::json config_snapshot = nlohmann::json::object();
};

class DiffusionTrainer {
 public:
  // The autoencoder is frozen on construction.
  DiffusionTrainer(std::vector<Sample> data, EdgeAutoencoder autoencoder, EdgeDenoiser net,
                   DiffusionTrainerOptions options);

  // One optimization step: batch, encode, targets, denoise, loss, AdamW, EMA.
  StepStats step();
  // Steps until `until` (default: the configured iteration count), logging and checkpointing.
  void run(int64_t until = -1, const std::function<void(const StepStats&)>& on_step = {});

  int64_t current_step() const { return step_; }
  EdgeDenoiser net() const { return net_; }
  // Fresh denoiser holding the EMA weights.
  EdgeDenoiser ema_net() const;
  const EMAState& ema() const { return *ema_; }

  // Writes net_{step}.ckpt, net_ema_{step}.ckpt and state_{step}.ckpt under run_dir.
  void save_checkpoints() const;
  // Restores weights, optimizer, EMA and generator state from a run directory at `step`.
  void resume(const std::string& run_dir, int64_t step);

  Checkpoint net_checkpoint() const;
  Checkpoint ema_checkpoint() const;
  Checkpoint state_checkpoint() const;

 private:
  std::vector<Sample> data_;
  EdgeAutoencoder ae_;
  EdgeDenoiser net_;
  DiffusionTrainerOptions options_;
  std::vector<torch::Tensor> params_;
  std::unique_ptr<AdamW> optimizer_;
  std::unique_ptr<EMAState> ema_;
  at::Generator gen_;
  int64_t step_ = 0;

  void append_log(const StepStats& stats) const;
};

// Checkpoint helpers shared with inference and the CLI.
Checkpoint autoencoder_checkpoint(EdgeAutoencoder& ae, const nlohmann::json& config_snapshot);
EdgeAutoencoder autoencoder_from_checkpoint(const Checkpoint& ckpt);
Checkpoint denoiser_checkpoint(const EdgeDenoiser& net, const std::string& kind, int64_t step,
                               const nlohmann::json& config_snapshot);
EdgeDenoiser denoiser_from_checkpoint(const Checkpoint& ckpt);

nlohmann::json to_json(const AutoencoderConfig& c);
AutoencoderConfig autoencoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

// Largest k such that {run_dir}/net_ema_{k}.ckpt exists, or -1.
int64_t latest_checkpoint_step(const std::string& run_dir);

std::vector<torch::Tensor> parameter_list(const torch::nn::Module& module);

}  // namespace diffedge
