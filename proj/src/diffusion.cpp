#include "diffedge/diffusion.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <stdexcept>
#include <string>

namespace diffedge {

namespace {

// Reshapes a per-sample time vector so it broadcasts against [N, ...].
torch::Tensor broadcast_time(const torch::Tensor& t, const torch::Tensor& like) {
  if (t.dim() == 0) return t.to(like.dtype());
  if (t.dim() != 1 || t.size(0) != like.size(0))
    throw std::invalid_argument("time tensor must be a scalar or have one entry per sample");
  std::vector<int64_t> shape(static_cast<size_t>(like.dim()), 1);
  shape[0] = t.size(0);
  return t.to(like.dtype()).view(shape);
}

void check_time_range(const torch::Tensor& t) {
  const auto lo = t.min().item<double>();
  const auto hi = t.max().item<double>();
  if (!(lo > 0.0) || hi > 1.0) throw std::invalid_argument("diffusion time must lie in (0, 1]");
}

}  // namespace

void TransitionSchedule::validate() const {
  if (!(t_min > 0.0) || !(t_min < t_max) || t_max > 1.0)
    throw std::invalid_argument("schedule requires 0 < t_min < t_max <= 1");
  if (num_steps < 1) throw std::invalid_argument("schedule requires num_steps >= 1");
}

std::vector<double> TransitionSchedule::time_grid() const {
  validate();
  std::vector<double> grid(static_cast<size_t>(num_steps));
  if (num_steps == 1) {
    grid[0] = t_max;
    return grid;
  }
  const double span = t_max - t_min;
  for (int k = 0; k < num_steps; ++k) grid[static_cast<size_t>(k)] = t_max - span * k / (num_steps - 1);
  grid.back() = t_min;
  return grid;
}

torch::Tensor integrate_transition(const torch::Tensor& f, double t0, double t1) { return (t1 - t0) * f; }

torch::Tensor forward_sample(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& noise) {
  if (!z0.sizes().equals(noise.sizes()))
    throw std::invalid_argument("forward_sample: z0 and noise shapes differ");
  check_time_range(t);
  const auto tt = broadcast_time(t, z0);
  // z0 + \int_0^t (-z0) ds + sqrt(t) n
  return z0 - tt * z0 + tt.sqrt() * noise;
}

torch::Tensor forward_sample(const torch::Tensor& z0, double t, const torch::Tensor& noise) {
  if (!z0.sizes().equals(noise.sizes()))
    throw std::invalid_argument("forward_sample: z0 and noise shapes differ");
  if (!(t > 0.0) || t > 1.0) throw std::invalid_argument("diffusion time must lie in (0, 1]");
  return z0 + integrate_transition(-z0, 0.0, t) + std::sqrt(t) * noise;
}

double reverse_step_stddev(double t, double dt) {
  if (dt == t) return 0.0;
  return std::sqrt(dt * (t - dt) / t);
}

torch::Tensor reverse_step(const torch::Tensor& z_t, double t, double dt, const DenoiserOutput& out,
                           const torch::Tensor& noise) {
  if (!(dt > 0.0) || dt > t || t > 1.0)
    throw std::invalid_argument("reverse_step requires 0 < dt <= t <= 1 (got t=" + std::to_string(t) +
                                ", dt=" + std::to_string(dt) + ")");
  if (!out.f_pred.sizes().equals(z_t.sizes()) || !out.n_pred.sizes().equals(z_t.sizes()))
    throw std::invalid_argument("reverse_step: prediction shapes differ from z_t");
  auto mean = z_t + integrate_transition(out.f_pred, t, t - dt) - (dt / std::sqrt(t)) * out.n_pred;
  const double stddev = reverse_step_stddev(t, dt);
  if (stddev == 0.0 || !noise.defined()) return mean;
  if (!noise.sizes().equals(z_t.sizes())) throw std::invalid_argument("reverse_step: noise shape differs from z_t");
  return mean + stddev * noise;
}

torch::Tensor reconstruct_z0(const torch::Tensor& z_t, const torch::Tensor& t, const DenoiserOutput& out) {
  const auto tt = broadcast_time(t, z_t);
  return z_t - tt.sqrt() * out.n_pred - tt * out.f_pred;
}

TrainingTargets make_training_targets(const torch::Tensor& z0, const TransitionSchedule& schedule,
                                      at::Generator& gen) {
  schedule.validate();
  const auto n = z0.size(0);
  const auto opts = z0.options();
  // u in [0, 1) maps to t in (t_min, 1].
  auto u = torch::rand({n}, gen, opts);
  auto t = 1.0 - (1.0 - schedule.t_min) * u;
  auto noise = torch::randn(z0.sizes(), gen, opts);
  TrainingTargets targets;
  targets.t = t;
  targets.n_target = noise;
  targets.f_target = -z0;
  targets.z_t = forward_sample(z0, t, noise);
  return targets;
}

torch::Tensor sample_from(const torch::Tensor& z_start, const DenoiseFn& denoise, const TransitionSchedule& schedule,
                          at::Generator& gen) {
  const auto grid = schedule.time_grid();
  auto z = z_start;
  for (size_t k = 0; k < grid.size(); ++k) {
    const double t = grid[k];
    const double t_next = k + 1 < grid.size() ? grid[k + 1] : 0.0;
    const double dt = t - t_next;
    const auto out = denoise(z, t);
    torch::Tensor noise;
    if (schedule.stochastic && t_next > 0.0) noise = torch::randn(z.sizes(), gen, z.options());
    z = reverse_step(z, t, dt, out, noise);
  }
  return z;
}

torch::Tensor sample(const DenoiseFn& denoise, const TransitionSchedule& schedule, at::IntArrayRef latent_shape,
                     at::Generator& gen) {
  auto z = torch::randn(latent_shape, gen, torch::kFloat32);
  return sample_from(z, denoise, schedule, gen);
}

at::Generator make_generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

}  // namespace diffedge
