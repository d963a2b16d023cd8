#pragma once

// Decoupled continuous-time diffusion over latent codes.
//
// The forward process splits into an explicit transition plus a Wiener term,
//   z_t = z_0 + \int_0^t f ds + sqrt(t) n,
// and with the constant transition f = -z_0 the marginal is (1 - t) z_0 + sqrt(t) n,
// which reaches pure noise at t = 1.

#include <torch/torch.h>

#include <functional>
#include <vector>

namespace diffedge {

enum class TransitionKind { kConstant };

struct TransitionSchedule {
  double t_min = 1e-4;
  double t_max = 1.0;
  int num_steps = 5;
  TransitionKind transition = TransitionKind::kConstant;
  // Inject the reverse-step noise at intermediate steps. When false every
  // step uses its mean, which makes sampling deterministic given z_{t_max}.
  bool stochastic = true;

  // Throws std::invalid_argument when an invariant is violated.
  void validate() const;

  // Start times of the reverse steps. Uniform from t_max down to t_min (a
  // single step starts at t_max). Step k runs from grid[k] to grid[k+1]; the
  // last step runs to zero.
  std::vector<double> time_grid() const;
};

struct DenoiserOutput {
  torch::Tensor f_pred;  // transition component
  torch::Tensor n_pred;  // noise component
};

struct TrainingTargets {
  torch::Tensor z_t;
  torch::Tensor t;  // [N], one time per sample
  torch::Tensor f_target;
  torch::Tensor n_target;
};

// Integral of the constant transition f over [t0, t1], i.e. (t1 - t0) * f.
torch::Tensor integrate_transition(const torch::Tensor& f, double t0, double t1);

// Samples q(z_t | z_0). `t` is either a scalar or one time per sample ([N]).
torch::Tensor forward_sample(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& noise);
torch::Tensor forward_sample(const torch::Tensor& z0, double t, const torch::Tensor& noise);

// One transition z_t -> z_{t-dt} of the reverse process given the network's
// decoupled predictions. `noise` may be undefined, in which case the step is
// deterministic. The injected standard deviation is sqrt(dt (t - dt) / t),
// which vanishes when dt == t.
torch::Tensor reverse_step(const torch::Tensor& z_t, double t, double dt, const DenoiserOutput& out,
                           const torch::Tensor& noise);

// Standard deviation injected by reverse_step.
double reverse_step_stddev(double t, double dt);

// Inverts the forward marginal with the network's estimates:
// z0 = z_t - sqrt(t) n_pred - t f_pred. `t` is scalar or per-sample.
torch::Tensor reconstruct_z0(const torch::Tensor& z_t, const torch::Tensor& t, const DenoiserOutput& out);

// Draws t ~ U(t_min, 1] and n ~ N(0, I) per sample and builds the regression
// targets f = -z_0, n.
TrainingTargets make_training_targets(const torch::Tensor& z0, const TransitionSchedule& schedule,
                                      at::Generator& gen);

// Maps (z_t, t) to the decoupled predictions; conditioning is captured by the
// callable.
using DenoiseFn = std::function<DenoiserOutput(const torch::Tensor& z_t, double t)>;

// Reverse-time sampler. Starts from z ~ N(0, I) with the requested shape at
// t_max and walks the schedule grid down to t = 0.
torch::Tensor sample(const DenoiseFn& denoise, const TransitionSchedule& schedule, at::IntArrayRef latent_shape,
                     at::Generator& gen);

// Same as sample() but starting from a caller-supplied z_{t_max}.
torch::Tensor sample_from(const torch::Tensor& z_start, const DenoiseFn& denoise, const TransitionSchedule& schedule,
                          at::Generator& gen);

// Seeded CPU generator.
at::Generator make_generator(uint64_t seed);

}  // namespace diffedge
