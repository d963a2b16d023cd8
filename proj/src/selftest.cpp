#include "diffedge/selftest.hpp"

#include <torch/torch.h>

#include <cmath>
#include <sstream>

#include "diffedge/diffusion.hpp"
#include "diffedge/fft_filter.hpp"
#include "diffedge/objective.hpp"

namespace diffedge {

namespace {

CheckResult make(const std::string& name, bool ok, const std::string& detail) { return {name, ok, detail}; }

std::string fmt(const char* label, double v) {
  std::ostringstream s;
  s << label << '=' << v;
  return s.str();
}

double rel_err(const torch::Tensor& got, const torch::Tensor& want) {
  const auto denom = want.abs().max().item<double>();
  return (got - want).abs().max().item<double>() / std::max(denom, 1e-300);
}

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

}  // namespace

std::vector<CheckResult> diffusion_identity_checks(uint64_t seed) {
  std::vector<CheckResult> out;
  auto gen = make_generator(seed);

  {
    const auto z0 = torch::randn({2, 4, 8, 8}, gen, kF64);
    const auto n = torch::randn({2, 4, 8, 8}, gen, kF64);
    const auto z1 = forward_sample(z0, 1.0, n);
    const auto noise = torch::randn({2, 4, 8, 8}, gen, kF64);
    const auto rec = reverse_step(z1, 1.0, 1.0, {-z0, n}, noise);
    const auto err = rel_err(rec, z0);
    out.push_back(make("one-step oracle recovery", err <= 1e-6, fmt("rel_err", err)));

    const DenoiseFn oracle = [&](const torch::Tensor&, double) { return DenoiserOutput{-z0, n}; };
    TransitionSchedule one;
    one.num_steps = 1;
    const auto sampled = sample_from(z1, oracle, one, gen);
    const auto err_s = rel_err(sampled, z0);
    out.push_back(make("single-step sampler oracle recovery", err_s <= 1e-6, fmt("rel_err", err_s)));
  }

  {
    bool zero = true;
    double worst = 0.0;
    for (const double t : {1.0, 0.5, 0.2, 1e-4}) {
      const auto s = reverse_step_stddev(t, t);
      worst = std::max(worst, std::abs(s));
      zero = zero && s == 0.0;
    }
    out.push_back(make("final-step variance is zero", zero, fmt("max_stddev", worst)));
  }

  {
    const int64_t draws = 10000;
    const double t = 0.5, dt = 0.25, s = t - dt;
    bool ok = true;
    double worst = 0.0;
    for (const double z : {1.0, -0.7, 2.5}) {
      const auto z0 = torch::full({draws}, z, kF64);
      const auto n = torch::randn({draws}, gen, kF64);
      const auto zt = forward_sample(z0, t, n);
      const auto zs = reverse_step(zt, t, dt, {-z0, n}, torch::randn({draws}, gen, kF64));
      const double mean = zs.mean().item<double>();
      const double var = zs.var().item<double>();
      const double se_mean = std::sqrt(s / static_cast<double>(draws));
      const double se_var = s * std::sqrt(2.0 / static_cast<double>(draws - 1));
      const double zm = std::abs(mean - (1.0 - s) * z) / se_mean;
      const double zv = std::abs(var - s) / se_var;
      worst = std::max({worst, zm, zv});
      ok = ok && zm <= 3.0 && zv <= 3.0;
    }
    out.push_back(make("reverse step matches forward marginal (1e4 draws)", ok, fmt("max_z_score", worst)));
  }

  {
    const int64_t draws = 100000;
    const double t = 0.3, z = 1.7;
    const auto z0 = torch::full({draws}, z, kF64);
    const auto zt = forward_sample(z0, t, torch::randn({draws}, gen, kF64));
    const double zm = std::abs(zt.mean().item<double>() - (1.0 - t) * z) / std::sqrt(t / static_cast<double>(draws));
    out.push_back(make("forward marginal mean (1e5 draws)", zm <= 3.0, fmt("z_score", zm)));
  }
  return out;
}

std::vector<CheckResult> fft_filter_checks(uint64_t seed) {
  std::vector<CheckResult> out;
  auto gen = make_generator(seed);
  const int64_t c = 3, h = 8, w = 10;
  const auto spec = half_spectrum_shape(c, h, w);
  const auto feats = torch::randn({2, c, h, w}, gen, kF64);
  const auto cplx = torch::TensorOptions().dtype(torch::kComplexDouble);

  {
    const auto y = adaptive_fft_filter(feats, torch::zeros(spec, cplx));
    out.push_back(make("zero weights give the identity", torch::equal(y, feats), ""));
  }
  {
    const auto y = adaptive_fft_filter(feats, torch::ones(spec, cplx));
    const auto err = rel_err(y, 2.0 * feats);
    out.push_back(make("unit weights double the input", err <= 1e-5, fmt("rel_err", err)));
  }
  {
    auto wdc = torch::zeros(spec, cplx);
    wdc.select(1, 0).select(1, 0).fill_(1.0);
    const auto y = adaptive_fft_filter(feats, wdc);
    const auto want = feats + feats.mean({2, 3}, true);
    const auto err = rel_err(y, want);
    out.push_back(make("DC-bin weights add the channel mean", err <= 1e-5, fmt("rel_err", err)));
  }
  {
    const auto wr = torch::complex(torch::randn(spec, gen, kF64), torch::randn(spec, gen, kF64));
    const auto f2 = torch::randn({2, c, h, w}, gen, kF64);
    const double a = 0.7, b = -1.3;
    const auto mix = a * feats + b * f2;
    const auto lhs = adaptive_fft_filter(mix, wr) - mix;
    const auto rhs = a * (adaptive_fft_filter(feats, wr) - feats) + b * (adaptive_fft_filter(f2, wr) - f2);
    const auto err = (lhs - rhs).abs().max().item<double>();
    out.push_back(make("filter branch is linear", err <= 1e-5, fmt("max_abs_err", err)));
  }
  return out;
}

namespace {

// Per-pixel loop in double precision, independent of the tensor implementation.
double brute_force_wce(const torch::Tensor& pred, const torch::Tensor& gt, const WCEConfig& cfg, bool supervised_mean) {
  const auto p = pred.to(torch::kFloat64).contiguous();
  const auto g = gt.to(torch::kFloat64).contiguous();
  const auto* pp = p.data_ptr<double>();
  const auto* gp = g.data_ptr<double>();
  const auto n = p.numel();
  double pos = 0, neg = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (gp[i] >= cfg.eta) pos += 1;
    if (gp[i] == 0.0) neg += 1;
  }
  const double total = pos + neg;
  const double alpha = total > 0 ? cfg.lambda * pos / total : 0.0;
  const double beta = total > 0 ? neg / total : 0.0;
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double q = std::min(std::max(pp[i], cfg.epsilon), 1.0 - cfg.epsilon);
    if (gp[i] == 0.0)
      loss += -alpha * std::log(1.0 - q);
    else if (gp[i] >= cfg.eta)
      loss += -beta * std::log(q);
  }
  return supervised_mean && total > 0 ? loss / total : loss;
}

}  // namespace

std::vector<CheckResult> wce_oracle_checks(uint64_t seed) {
  std::vector<CheckResult> out;
  auto gen = make_generator(seed);
  const WCEConfig cfg;

  {
    const auto gt = torch::tensor({{1.0, 0.0}, {0.0, 0.0}}, kF64);
    const auto pred = torch::tensor({{0.8, 0.1}, {0.1, 0.1}}, kF64);
    const auto w = wce_weights(gt, cfg);
    const double loss = wce_loss(pred, gt, cfg).item<double>();
    const double want = 0.75 * -std::log(0.8) + 0.275 * 3 * -std::log(0.9);
    const bool ok = w.positives == 1 && w.negatives == 3 && std::abs(w.alpha - 0.275) < 1e-12 &&
                    std::abs(w.beta - 0.75) < 1e-12 && std::abs(loss - want) < 1e-9 && std::abs(loss - 0.2543) < 5e-5;
    out.push_back(make("2x2 worked example", ok, fmt("loss", loss)));
  }

  {
    const std::vector<double> levels = {0.0, 0.0, 0.0, 0.1, 0.2, 0.29, 0.3, 0.5, 0.8, 1.0};
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const auto h = 2 + torch::randint(5, {1}, gen).item<int64_t>();
      const auto w = 2 + torch::randint(5, {1}, gen).item<int64_t>();
      const auto idx = torch::randint(static_cast<int64_t>(levels.size()), {h, w}, gen);
      const auto gt = torch::tensor(levels, kF64).index({idx});
      const auto pred = torch::rand({h, w}, gen, kF64);
      for (const bool mean : {false, true}) {
        const auto reduction = mean ? WCEReduction::kSupervisedMean : WCEReduction::kSum;
        const double got = wce_loss(pred, gt, cfg, reduction).item<double>();
        worst = std::max(worst, std::abs(got - brute_force_wce(pred, gt, cfg, mean)));
      }
    }
    out.push_back(make("matches per-pixel oracle on 100 random maps", worst <= 1e-6, fmt("max_abs_err", worst)));
  }

  {
    const auto gt = torch::tensor({{1.0, 0.2, 0.0}, {0.1, 0.0, 0.25}, {0.0, 1.0, 0.0}}, kF64);
    const auto band = (gt > 0) & (gt < cfg.eta);
    auto pred = torch::rand({3, 3}, gen, kF64).mul(0.8).add(0.1).requires_grad_(true);
    wce_loss(pred, gt, cfg).backward();
    const double grad_band = pred.grad().masked_select(band).abs().max().item<double>();
    double worst_fd = 0.0;
    const double step = 1e-4;
    const auto base = pred.detach();
    for (int64_t i = 0; i < 9; ++i) {
      if (!band.flatten()[i].item<bool>()) continue;
      auto up = base.clone(), down = base.clone();
      up.view(-1)[i] += step;
      down.view(-1)[i] -= step;
      const double fd = (wce_loss(up, gt, cfg).item<double>() - wce_loss(down, gt, cfg).item<double>()) / (2 * step);
      worst_fd = std::max(worst_fd, std::abs(fd));
    }
    const bool ok = grad_band == 0.0 && worst_fd <= 1e-8;
    std::ostringstream d;
    d << "autograd=" << grad_band << " finite_diff=" << worst_fd;
    out.push_back(make("ignore-band pixels have zero gradient", ok, d.str()));
  }
  return out;
}

SelfTestSummary run_selftest(std::ostream& out, uint64_t seed) {
  SelfTestSummary summary;
  const std::vector<std::pair<const char*, std::vector<CheckResult>>> groups = {
      {"diffusion", diffusion_identity_checks(seed)},
      {"fft-filter", fft_filter_checks(seed)},
      {"wce", wce_oracle_checks(seed)},
  };
  for (const auto& [group, checks] : groups) {
    for (const auto& c : checks) {
      out << (c.passed ? "PASS" : "FAIL") << "  " << group << ": " << c.name;
      if (!c.detail.empty()) out << " (" << c.detail << ')';
      out << '\n';
      (c.passed ? summary.passed : summary.failed) += 1;
    }
  }
  out << "selftest: " << summary.passed << " passed, " << summary.failed << " failed\n";
  return summary;
}

}  // namespace diffedge
