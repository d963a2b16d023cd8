#include "diffedge/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace diffedge {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (iterations < 1) throw std::invalid_argument("train.iterations must be >= 1");
  if (!(lr_start > 0.0) || !(lr_end > 0.0) || lr_end > lr_start)
    throw std::invalid_argument("train learning rates must satisfy 0 < lr_end <= lr_start");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw std::invalid_argument("train.ema_decay must lie in (0, 1)");
  if (ema_warmup < 0) throw std::invalid_argument("train.ema_warmup must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (crop <= 0 || crop % 4 != 0) throw std::invalid_argument("train.crop must be a positive multiple of 4");
  if (checkpoint_every < 1 || log_every < 1) throw std::invalid_argument("train intervals must be >= 1");
}

void AETrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("autoencoder training needs epochs, batch_size >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("autoencoder lr must be > 0");
  if (!(lambda > 0.0)) throw std::invalid_argument("autoencoder lambda must be > 0");
  if (scale_samples < 1) throw std::invalid_argument("autoencoder scale_samples must be >= 1");
}

double lr_at(int64_t step, const TrainConfig& cfg) {
  const auto s = std::clamp<int64_t>(step, 0, cfg.iterations);
  const double phase = static_cast<double>(s) / static_cast<double>(cfg.iterations);
  return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(std::numbers::pi * phase));
}

std::vector<torch::Tensor> parameter_list(const torch::nn::Module& module) { return module.parameters(true); }

AdamW::AdamW(std::vector<torch::Tensor> params, Options options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    exp_avg_.push_back(torch::zeros_like(p));
    exp_avg_sq_.push_back(torch::zeros_like(p));
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
  }
}

void AdamW::step(double lr) {
  torch::NoGradGuard no_grad;
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto& g = p.grad();
    if (!g.defined()) continue;
    if (options_.weight_decay > 0.0) p.mul_(1.0 - lr * options_.weight_decay);
    exp_avg_[i].mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
    exp_avg_sq_[i].mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
    const auto denom = (exp_avg_sq_[i] / bc2).sqrt_().add_(options_.eps);
    p.addcdiv_(exp_avg_[i], denom, -lr / bc1);
  }
}

NamedTensors AdamW::state(const std::string& prefix) const {
  NamedTensors out;
  out.emplace_back(prefix + "steps", torch::tensor(steps_, torch::kInt64));
  for (size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(prefix + "exp_avg." + std::to_string(i), exp_avg_[i]);
    out.emplace_back(prefix + "exp_avg_sq." + std::to_string(i), exp_avg_sq_[i]);
  }
  return out;
}

void AdamW::load_state(const Checkpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  steps_ = ckpt.tensor(prefix + "steps").item<int64_t>();
  for (size_t i = 0; i < params_.size(); ++i) {
    exp_avg_[i].copy_(ckpt.tensor(prefix + "exp_avg." + std::to_string(i)));
    exp_avg_sq_[i].copy_(ckpt.tensor(prefix + "exp_avg_sq." + std::to_string(i)));
  }
}

EMAState::EMAState(const std::vector<torch::Tensor>& params, double decay, int64_t warmup)
    : decay_(decay), warmup_(warmup) {
  for (const auto& p : params) shadow_.push_back(p.detach().clone());
}

void EMAState::update(const std::vector<torch::Tensor>& params) {
  torch::NoGradGuard no_grad;
  if (params.size() != shadow_.size()) throw std::invalid_argument("EMA update: parameter count changed");
  const bool copy = updates_ < warmup_;
  for (size_t i = 0; i < params.size(); ++i) {
    if (copy)
      shadow_[i].copy_(params[i]);
    else
      shadow_[i].mul_(decay_).add_(params[i].detach(), 1.0 - decay_);
  }
  ++updates_;
}

void EMAState::copy_to(const std::vector<torch::Tensor>& params) const {
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < params.size(); ++i) params[i].copy_(shadow_[i]);
}

torch::Tensor reconstruction_loss(const torch::Tensor& logits, const torch::Tensor& gt, double lambda, bool balanced) {
  if (!balanced) return F::binary_cross_entropy_with_logits(logits, gt);
  const auto n = gt.size(0);
  const auto pos = (gt > 0).to(logits.dtype()).flatten(1).sum(1);
  const auto neg = (gt == 0).to(logits.dtype()).flatten(1).sum(1);
  const auto total = (pos + neg).clamp_min(1.0);
  const auto alpha = (lambda * pos / total).view({n, 1, 1, 1});
  const auto beta = (neg / total).view({n, 1, 1, 1});
  const auto terms = -beta * gt * F::logsigmoid(logits) - alpha * (1.0 - gt) * F::logsigmoid(-logits);
  return terms.mean();
}

namespace {

torch::Tensor random_gt_view(const torch::Tensor& gt, int64_t crop, at::Generator& gen) {
  const auto u = torch::rand({4}, gen, torch::kFloat64);
  auto out = gt;
  if (u[0].item<double>() < 0.5) out = out.flip({-1});
  if (u[1].item<double>() < 0.5) out = out.flip({-2});
  if (out.size(1) < crop || out.size(2) < crop) {
    Sample s{torch::zeros({3, out.size(1), out.size(2)}), out, ""};
    out = pad_reflect(s, crop).gt;
  }
  const auto max_top = out.size(1) - crop, max_left = out.size(2) - crop;
  const auto top = std::min(max_top, static_cast<int64_t>(u[2].item<double>() * static_cast<double>(max_top + 1)));
  const auto left =
      std::min(max_left, static_cast<int64_t>(u[3].item<double>() * static_cast<double>(max_left + 1)));
  return out.slice(1, top, top + crop).slice(2, left, left + crop);
}

torch::Tensor center_view(const torch::Tensor& gt, int64_t crop) {
  auto out = gt;
  if (out.size(1) < crop || out.size(2) < crop) {
    Sample s{torch::zeros({3, out.size(1), out.size(2)}), out, ""};
    out = pad_reflect(s, crop).gt;
  }
  const auto top = (out.size(1) - crop) / 2, left = (out.size(2) - crop) / 2;
  return out.slice(1, top, top + crop).slice(2, left, left + crop);
}

}  // namespace

AETrainResult train_autoencoder(const std::vector<torch::Tensor>& corpus, const AutoencoderConfig& config,
                                const AETrainConfig& train, int64_t crop,
                                const std::function<void(int64_t, double)>& on_epoch) {
  if (corpus.empty()) throw std::invalid_argument("train_autoencoder: empty corpus");
  train.validate();
  if (crop <= 0 || crop % 4 != 0) throw std::invalid_argument("train_autoencoder: crop must be a multiple of 4");

  AETrainResult result;
  result.model = EdgeAutoencoder(config);
  auto& model = result.model;
  model->train();
  auto gen = make_generator(train.seed);
  AdamW optimizer(model->parameters(), {0.9, 0.999, 1e-8, 0.0});

  const auto n = static_cast<int64_t>(corpus.size());
  const auto batches_per_epoch = (n + train.batch_size - 1) / train.batch_size;
  const auto total_steps = train.epochs * batches_per_epoch;
  TrainConfig schedule;
  schedule.iterations = total_steps;
  schedule.lr_start = train.lr;
  schedule.lr_end = train.lr * 0.05;
  int64_t global = 0;
  for (int64_t epoch = 0; epoch < train.epochs; ++epoch) {
    const auto perm = torch::randperm(n, gen, torch::kInt64);
    double loss_sum = 0.0;
    for (int64_t b = 0; b < batches_per_epoch; ++b) {
      std::vector<torch::Tensor> batch;
      for (int64_t k = b * train.batch_size; k < std::min(n, (b + 1) * train.batch_size); ++k)
        batch.push_back(random_gt_view(corpus[static_cast<size_t>(perm[k].item<int64_t>())], crop, gen));
      const auto gt = torch::stack(batch).to(torch::kFloat32);
      const auto logits = model->decode_logits(model->encode(gt));
      const auto loss = reconstruction_loss(logits, gt, train.lambda, train.balanced);
      optimizer.zero_grad();
      loss.backward();
      optimizer.step(lr_at(global++, schedule));
      loss_sum += loss.item<double>();
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(batches_per_epoch));
    if (on_epoch) on_epoch(epoch, result.epoch_losses.back());
  }

  model->eval();
  {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> views;
    for (int64_t i = 0; i < std::min(n, train.scale_samples); ++i)
      views.push_back(center_view(corpus[static_cast<size_t>(i)], crop));
    const auto latents = model->encode_unscaled(torch::stack(views).to(torch::kFloat32));
    const auto std = latents.std().item<double>();
    model->set_normalization_scale(std > 0.0 ? 1.0 / std : 1.0);
  }
  return result;
}

nlohmann::json to_json(const AutoencoderConfig& c) {
  return {{"latent_channels", c.latent_channels},
          {"base_width", c.base_width},
          {"normalization_scale", c.normalization_scale},
          {"density_gain", c.density_gain}};
}

AutoencoderConfig autoencoder_config_from_json(const nlohmann::json& j) {
  AutoencoderConfig c;
  c.latent_channels = j.at("latent_channels").get<int64_t>();
  c.base_width = j.at("base_width").get<int64_t>();
  c.normalization_scale = j.at("normalization_scale").get<double>();
  c.density_gain = j.at("density_gain").get<double>();
  return c;
}

nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"latent_channels", c.latent_channels}, {"latent_height", c.latent_height},
          {"latent_width", c.latent_width},       {"base_width", c.base_width},
          {"cond_width", c.cond_width},           {"time_dim", c.time_dim},
          {"use_fft_filter", c.use_fft_filter},   {"fft_at_bottleneck", c.fft_at_bottleneck}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.latent_channels = j.at("latent_channels").get<int64_t>();
  c.latent_height = j.at("latent_height").get<int64_t>();
  c.latent_width = j.at("latent_width").get<int64_t>();
  c.base_width = j.at("base_width").get<int64_t>();
  c.cond_width = j.at("cond_width").get<int64_t>();
  c.time_dim = j.at("time_dim").get<int64_t>();
  c.use_fft_filter = j.at("use_fft_filter").get<bool>();
  c.fft_at_bottleneck = j.at("fft_at_bottleneck").get<bool>();
  return c;
}

Checkpoint autoencoder_checkpoint(EdgeAutoencoder& ae, const nlohmann::json& config_snapshot) {
  Checkpoint ckpt;
  ckpt.kind = "autoencoder";
  auto cfg = ae->config();
  cfg.normalization_scale = ae->normalization_scale();
  ckpt.meta["autoencoder"] = to_json(cfg);
  ckpt.meta["config"] = config_snapshot;
  ckpt.tensors = module_state(*ae);
  return ckpt;
}

EdgeAutoencoder autoencoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "autoencoder") throw std::runtime_error("expected an autoencoder checkpoint, got " + ckpt.kind);
  EdgeAutoencoder ae(autoencoder_config_from_json(ckpt.meta.at("autoencoder")));
  load_module_state(*ae, ckpt);
  ae->set_normalization_scale(ae->normalization_scale());
  ae->eval();
  ae->freeze();
  return ae;
}

Checkpoint denoiser_checkpoint(const EdgeDenoiser& net, const std::string& kind, int64_t step,
                               const nlohmann::json& config_snapshot) {
  Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.meta["denoiser"] = to_json(net->config());
  ckpt.meta["step"] = step;
  ckpt.meta["config"] = config_snapshot;
  ckpt.tensors = module_state(*net);
  return ckpt;
}

EdgeDenoiser denoiser_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "denoiser" && ckpt.kind != "denoiser_ema")
    throw std::runtime_error("expected a denoiser checkpoint, got " + ckpt.kind);
  EdgeDenoiser net(denoiser_config_from_json(ckpt.meta.at("denoiser")));
  load_module_state(*net, ckpt);
  net->eval();
  return net;
}

int64_t latest_checkpoint_step(const std::string& run_dir) {
  if (!fs::is_directory(run_dir)) return -1;
  static const std::regex pattern(R"(net_ema_(\d+)\.ckpt)");
  int64_t best = -1;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) best = std::max<int64_t>(best, std::stoll(m[1].str()));
  }
  return best;
}

DiffusionTrainer::DiffusionTrainer(std::vector<Sample> data, EdgeAutoencoder autoencoder, EdgeDenoiser net,
                                   DiffusionTrainerOptions options)
    : data_(std::move(data)),
      ae_(std::move(autoencoder)),
      net_(std::move(net)),
      options_(std::move(options)),
      gen_(make_generator(options_.train.seed)) {
  if (data_.empty()) throw std::invalid_argument("train_diffusion: empty dataset");
  options_.train.validate();
  options_.schedule.validate();
  options_.wce.validate();
  options_.augment.crop_size = options_.train.crop;
  options_.augment.validate();
  if (net_->config().latent_height * 4 != options_.train.crop || net_->config().latent_width * 4 != options_.train.crop)
    throw std::invalid_argument("denoiser latent geometry does not match the training crop");
  ae_->eval();
  ae_->freeze();
  params_ = parameter_list(*net_);
  optimizer_ = std::make_unique<AdamW>(params_, AdamW::Options{0.9, 0.999, 1e-8, options_.train.weight_decay});
  ema_ = std::make_unique<EMAState>(params_, options_.train.ema_decay, options_.train.ema_warmup);
}

StepStats DiffusionTrainer::step() {
  net_->train();
  const auto& cfg = options_.train;
  const auto n = static_cast<int64_t>(data_.size());
  const auto picks = torch::randint(n, {cfg.batch_size}, gen_, torch::kInt64);
  std::vector<torch::Tensor> images, gts;
  std::vector<std::string> ids;
  for (int64_t b = 0; b < cfg.batch_size; ++b) {
    const auto s = augment(data_[static_cast<size_t>(picks[b].item<int64_t>())], options_.augment, gen_);
    images.push_back(s.image);
    gts.push_back(s.gt);
    ids.push_back(s.id);
  }
  const auto image = torch::stack(images).to(torch::kFloat32);
  const auto gt = torch::stack(gts).to(torch::kFloat32);

  torch::Tensor z0;
  {
    torch::NoGradGuard no_grad;
    z0 = ae_->encode(gt);
  }
  const auto targets = make_training_targets(z0, options_.schedule, gen_);
  const auto cond = net_->encode_condition(image);
  const auto out = net_->denoise(targets.z_t, targets.t, cond);
  const auto z0_pred = reconstruct_z0(targets.z_t, targets.t, out);
  const auto loss = combined_loss(out, targets.f_target, targets.n_target, z0_pred, gt, targets.t, ae_, options_.wce,
                                  options_.decoder_gradient);

  StepStats stats;
  stats.step = step_ + 1;
  stats.lr = lr_at(step_, cfg);
  stats.f_loss = loss.f_loss.item<double>();
  stats.n_loss = loss.n_loss.item<double>();
  stats.wce_loss = loss.wce_loss.item<double>();
  stats.sigma_t = loss.sigma_t.item<double>();
  stats.total = loss.total.item<double>();
  if (!std::isfinite(stats.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << stats.step << " (f=" << stats.f_loss << " n=" << stats.n_loss
        << " wce=" << stats.wce_loss << " sigma=" << stats.sigma_t << ") batch ids:";
    for (const auto& id : ids) msg << ' ' << id;
    if (!options_.run_dir.empty()) {
      std::ofstream dump(fs::path(options_.run_dir) / ("divergence_" + std::to_string(stats.step) + ".txt"));
      dump << msg.str() << '\n';
    }
    throw TrainingDiverged(msg.str());
  }

  optimizer_->zero_grad();
  loss.total.backward();
  optimizer_->step(stats.lr);
  ema_->update(params_);
  ++step_;
  return stats;
}

void DiffusionTrainer::append_log(const StepStats& stats) const {
  if (options_.run_dir.empty()) return;
  const auto path = fs::path(options_.run_dir) / "train_log.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream log(path, std::ios::app);
  if (fresh) log << "step,lr,f_loss,n_loss,wce_loss,total\n";
  log << std::setprecision(9) << stats.step << ',' << stats.lr << ',' << stats.f_loss << ',' << stats.n_loss << ','
      << stats.wce_loss << ',' << stats.total << '\n';
}

void DiffusionTrainer::run(int64_t until, const std::function<void(const StepStats&)>& on_step) {
  const auto& cfg = options_.train;
  if (until < 0) until = cfg.iterations;
  if (!options_.run_dir.empty()) fs::create_directories(options_.run_dir);
  while (step_ < until) {
    const auto stats = step();
    if (stats.step % cfg.log_every == 0) append_log(stats);
    if (on_step) on_step(stats);
    if (!options_.run_dir.empty() && (step_ % cfg.checkpoint_every == 0 || step_ == until)) save_checkpoints();
  }
}

EdgeDenoiser DiffusionTrainer::ema_net() const {
  EdgeDenoiser copy(net_->config());
  ema_->copy_to(parameter_list(*copy));
  copy->eval();
  return copy;
}

Checkpoint DiffusionTrainer::net_checkpoint() const {
  return denoiser_checkpoint(net_, "denoiser", step_, options_.config_snapshot);
}

Checkpoint DiffusionTrainer::ema_checkpoint() const {
  return denoiser_checkpoint(ema_net(), "denoiser_ema", step_, options_.config_snapshot);
}

Checkpoint DiffusionTrainer::state_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "trainer_state";
  ckpt.meta["step"] = step_;
  ckpt.meta["ema_updates"] = ema_->updates();
  ckpt.meta["config"] = options_.config_snapshot;
  ckpt.tensors = optimizer_->state("adamw.");
  for (size_t i = 0; i < ema_->shadow().size(); ++i)
    ckpt.tensors.emplace_back("ema." + std::to_string(i), ema_->shadow()[i]);
  ckpt.tensors.emplace_back("generator", gen_.get_state());
  return ckpt;
}

void DiffusionTrainer::save_checkpoints() const {
  const fs::path dir(options_.run_dir);
  const auto tag = std::to_string(step_);
  save_checkpoint((dir / ("net_" + tag + ".ckpt")).string(), net_checkpoint());
  save_checkpoint((dir / ("net_ema_" + tag + ".ckpt")).string(), ema_checkpoint());
  save_checkpoint((dir / ("state_" + tag + ".ckpt")).string(), state_checkpoint());
}

void DiffusionTrainer::resume(const std::string& run_dir, int64_t step) {
  const fs::path dir(run_dir);
  const auto tag = std::to_string(step);
  const auto net = load_checkpoint((dir / ("net_" + tag + ".ckpt")).string());
  load_module_state(*net_, net);
  const auto state = load_checkpoint((dir / ("state_" + tag + ".ckpt")).string());
  if (state.kind != "trainer_state") throw std::runtime_error("expected a trainer_state checkpoint");
  optimizer_->load_state(state, "adamw.");
  {
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < ema_->shadow().size(); ++i)
      ema_->shadow()[i].copy_(state.tensor("ema." + std::to_string(i)));
  }
  ema_->set_updates(state.meta.at("ema_updates").get<int64_t>());
  gen_.set_state(state.tensor("generator"));
  step_ = state.meta.at("step").get<int64_t>();
}

}  // namespace diffedge
