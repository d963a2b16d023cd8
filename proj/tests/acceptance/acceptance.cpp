// Acceptance runner: one PASS/FAIL line per criterion, exit code 1 if any fails.
//
// Criteria 6 and 7 read a finished desk-scale run (see tools/desk_run.sh) from
// $DIFFEDGE_DESK_DIR, default <source>/runs/desk:
//   data/heldout/{images,edges}, run/{ae.ckpt, net_ema_*.ckpt}, run/timings.txt

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "diffedge/config.hpp"
#include "diffedge/datasets.hpp"
#include "diffedge/diffusion.hpp"
#include "diffedge/evaluation.hpp"
#include "diffedge/inference.hpp"
#include "diffedge/memory_tracker.hpp"
#include "diffedge/objective.hpp"
#include "diffedge/selftest.hpp"
#include "diffedge/trainer.hpp"

using namespace diffedge;
namespace fs = std::filesystem;
namespace F = torch::nn::functional;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;
  void fail(const std::string& why) {
    passed = false;
    detail += (detail.empty() ? "" : "; ") + why;
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

void add_checks(Outcome& o, const std::vector<CheckResult>& checks) {
  for (const auto& c : checks)
    if (!c.passed) o.fail(c.name + " (" + c.detail + ")");
}

Outcome timed_checks(const std::vector<CheckResult>& checks, Clock::time_point start, double budget) {
  Outcome o;
  add_checks(o, checks);
  const double s = seconds_since(start);
  if (s >= budget) o.fail("took " + fmt(s) + " s");
  o.note(std::to_string(checks.size()) + " checks in " + fmt(s) + " s");
  return o;
}

Outcome criterion_diffusion() {
  const auto start = Clock::now();
  return timed_checks(diffusion_identity_checks(0), start, 30.0);
}

Outcome criterion_fft() {
  const auto start = Clock::now();
  return timed_checks(fft_filter_checks(0), start, 10.0);
}

Outcome criterion_wce() {
  const auto start = Clock::now();
  return timed_checks(wce_oracle_checks(0), start, 30.0);
}

// Channel mean followed by 4x nearest upsampling; its adjoint is the surrogate.
torch::Tensor surrogate_forward(const torch::Tensor& z) {
  return F::interpolate(z.mean(1, true),
                        F::InterpolateFuncOptions().scale_factor(std::vector<double>{4.0, 4.0}).mode(torch::kNearest));
}

Outcome criterion_distillation() {
  Outcome o;
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  AutoencoderConfig small;
  small.base_width = 4;
  {
    torch::manual_seed(5);
    EdgeAutoencoder ae(small);
    ae->to(torch::kFloat64);
    ae->eval();
    auto gen = make_generator(5);
    const WCEConfig cfg;
    const auto z_ref = torch::randn({2, 4, 4, 4}, gen, f64);
    auto gt = (torch::rand({2, 1, 16, 16}, gen, f64) > 0.75).to(torch::kFloat64);
    gt.index_put_({0, 0, 3, 3}, 0.15);
    auto z = z_ref.clone().requires_grad_(true);
    wce_loss_per_image(distilled_decode(z, ae), gt, cfg, WCEReduction::kSupervisedMean).sum().backward();
    const auto analytic = z.grad().clone();

    double decoder_grad = 0.0;
    for (const auto& p : ae->parameters())
      if (p.grad().defined()) decoder_grad += p.grad().abs().sum().item<double>();
    if (decoder_grad != 0.0) o.fail("decoder gradient " + fmt(decoder_grad));

    torch::NoGradGuard no_grad;
    const auto e_ref = ae->decode(z_ref);
    const auto loss_at = [&](const torch::Tensor& zz) {
      return wce_loss_per_image(e_ref + surrogate_forward(zz - z_ref), gt, cfg, WCEReduction::kSupervisedMean)
          .sum()
          .item<double>();
    };
    auto fd = torch::zeros_like(z_ref);
    const double h = 1e-6;
    for (int64_t i = 0; i < z_ref.numel(); ++i) {
      auto up = z_ref.clone(), down = z_ref.clone();
      up.view(-1)[i] += h;
      down.view(-1)[i] -= h;
      fd.view(-1)[i] = (loss_at(up) - loss_at(down)) / (2 * h);
    }
    const double rel = ((analytic - fd).norm() / fd.norm()).item<double>();
    if (!(rel <= 1e-3)) o.fail("surrogate relative error " + fmt(rel));
    o.note("surrogate rel err " + fmt(rel) + ", decoder grad " + fmt(decoder_grad));
  }

  memory::install();
  torch::manual_seed(11);
  AutoencoderConfig cfg;
  cfg.base_width = 16;
  EdgeAutoencoder ae(cfg);
  ae->eval();
  ae->freeze();
  auto gen = make_generator(11);
  const auto z = torch::randn({4, 4, 16, 16}, gen, torch::kFloat32);
  const auto gt = (torch::rand({4, 1, 64, 64}, gen) > 0.85).to(torch::kFloat32);
  const auto t = torch::full({4}, 0.3f);
  const auto peak_for = [&](DecoderGradient mode) {
    auto leaf = z.clone().requires_grad_(true);
    memory::reset_peak();
    const auto base = memory::current_bytes();
    const DenoiserOutput out{leaf * 1.0, leaf * 1.0};
    combined_loss(out, z, z, leaf * 1.0, gt, t, ae, WCEConfig{}, mode).total.backward();
    return memory::peak_bytes() - base;
  };
  const auto distilled = peak_for(DecoderGradient::kDistilled);
  const auto full = peak_for(DecoderGradient::kFullBackprop);
  if (!(distilled < full)) o.fail("peak distilled " + std::to_string(distilled) + " >= full " + std::to_string(full));
  o.note("peak bytes " + std::to_string(distilled) + " vs " + std::to_string(full));
  return o;
}

// Maximum-cardinality matching within `radius` by DP over subsets of gt pixels.
int64_t optimal_matches(const torch::Tensor& pred, const torch::Tensor& gt, double radius) {
  const auto p = torch::nonzero(pred), g = torch::nonzero(gt);
  const auto np = p.size(0), ng = g.size(0);
  std::vector<int> dp(size_t{1} << ng, -1);
  dp[0] = 0;
  for (int64_t i = 0; i < np; ++i) {
    auto next = dp;
    for (size_t mask = 0; mask < dp.size(); ++mask) {
      if (dp[mask] < 0) continue;
      for (int64_t j = 0; j < ng; ++j) {
        if (mask & (size_t{1} << j)) continue;
        const double dy = static_cast<double>(p[i][0].item<int64_t>() - g[j][0].item<int64_t>());
        const double dx = static_cast<double>(p[i][1].item<int64_t>() - g[j][1].item<int64_t>());
        if (dy * dy + dx * dx > radius * radius) continue;
        auto& slot = next[mask | (size_t{1} << j)];
        slot = std::max(slot, dp[mask] + 1);
      }
    }
    dp = std::move(next);
  }
  return *std::max_element(dp.begin(), dp.end());
}

Outcome criterion_metrics() {
  Outcome o;
  auto gen = make_generator(2);
  int checked = 0, worst = 0, over = 0;
  while (checked < 50) {
    const auto pred = torch::rand({8, 8}, gen) < 0.25;
    const auto gt = torch::rand({8, 8}, gen) < 0.2;
    const auto n_gt = gt.sum().item<int64_t>();
    if (n_gt > 16 || n_gt == 0) continue;
    const double radius = checked % 2 ? 1.5 : 2.0;
    const auto gap = static_cast<int>(optimal_matches(pred, gt, radius) - match_edges(pred, gt, radius).tp);
    worst = std::max(worst, gap);
    if (gap < 0) o.fail("greedy above optimum on instance " + std::to_string(checked));
    over += gap > 1;
    ++checked;
  }
  if (over > 0) o.fail("matching gap > 1 on " + std::to_string(over) + "/50 instances");
  o.note("matching worst gap " + std::to_string(worst));

  // OIS >= ODS on several random sets of blurred, shifted predictions.
  for (int set = 0; set < 4; ++set) {
    std::vector<torch::Tensor> preds, gts;
    for (int i = 0; i < 6; ++i) {
      auto g = torch::zeros({48, 48});
      const auto row = torch::randint(4, 44, {1}, gen).item<int64_t>();
      const auto col = torch::randint(4, 44, {1}, gen).item<int64_t>();
      g[row].fill_(1.0);
      g.select(1, col).fill_(1.0);
      auto p = F::avg_pool2d(g.view({1, 1, 48, 48}), F::AvgPool2dFuncOptions(3).stride(1).padding(1))[0][0];
      p = (p * (0.5 + torch::rand({1}, gen)) + 0.3 * torch::rand({48, 48}, gen)).clamp(0, 1);
      preds.push_back(p);
      gts.push_back(g);
    }
    const auto r = evaluate(preds, gts, MatchConfig{}, Protocol::kBoth);
    if (r.ois_seval < r.ods_seval || r.ois_ceval < r.ods_ceval)
      o.fail("set " + std::to_string(set) + " OIS < ODS");
  }

  auto band = torch::zeros({64, 64});
  band.slice(0, 30, 33).fill_(1.0);
  const double ac_band = average_crispness(band);
  if (std::abs(ac_band - 1.0 / 3.0) > 0.02) o.fail("band AC " + fmt(ac_band));

  auto thin = torch::zeros({32, 32});
  thin[5].slice(0, 3, 29).fill_(0.8);
  for (int i = 0; i < 20; ++i) thin[8 + i][4 + i] = 1.0;
  const double ac_thin = average_crispness(thin);
  if (ac_thin != 1.0) o.fail("thin AC " + fmt(ac_thin));
  o.note("band AC " + fmt(ac_band) + ", thin AC " + fmt(ac_thin));
  return o;
}

fs::path desk_dir() {
  if (const char* env = std::getenv("DIFFEDGE_DESK_DIR")) return env;
  return fs::path(DIFFEDGE_SOURCE_DIR) / "runs" / "desk";
}

std::map<std::string, double> read_timings(const fs::path& path) {
  std::map<std::string, double> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
  }
  return out;
}

struct DeskModel {
  LoadedModel model;
  Config config;
  std::vector<Sample> heldout;
};

std::optional<DeskModel> load_desk(Outcome& o) {
  const auto root = desk_dir();
  if (!fs::exists(root / "run" / "ae.ckpt") || latest_checkpoint_step((root / "run").string()) < 0 ||
      !fs::exists(root / "data" / "heldout")) {
    o.fail("no finished desk run under " + root.string() + " (run tools/desk_run.sh)");
    return std::nullopt;
  }
  DeskModel d;
  d.model = load_model((root / "run").string());
  d.config = config_from_json(d.model.config);
  d.heldout = load_dataset((root / "data" / "heldout").string(), DatasetLayout::kPairedPng).load_all();
  return d;
}

EvalReport evaluate_desk(const DeskModel& d, int steps) {
  const Predictor predictor(d.model.autoencoder, d.model.net, d.config.diffusion);
  TileConfig tile = d.config.inference;
  tile.steps = steps;
  std::vector<torch::Tensor> preds, gts;
  for (const auto& s : d.heldout) {
    preds.push_back(predictor.predict(s.image, tile).edges);
    gts.push_back(s.gt);
  }
  MatchConfig match;
  match.max_dist_frac = d.config.eval.max_dist_frac;
  return evaluate(preds, gts, match, Protocol::kBoth);
}

Outcome criterion_desk(std::optional<DeskModel>& desk, std::map<int, EvalReport>& reports) {
  Outcome o;
  desk = load_desk(o);
  if (!desk) return o;
  const auto root = desk_dir();
  const auto timings = read_timings(root / "run" / "timings.txt");
  const auto n_train = load_dataset((root / "data" / "train").string(), DatasetLayout::kPairedPng).size();
  if (n_train < 256) o.fail("only " + std::to_string(n_train) + " training pairs");
  if (desk->heldout.size() < 32) o.fail("only " + std::to_string(desk->heldout.size()) + " held-out pairs");
  if (desk->model.step < 5000) o.fail("denoiser trained for " + std::to_string(desk->model.step) + " iterations");
  if (!timings.count("ae_seconds") || !timings.count("diffusion_seconds")) {
    o.fail("timings.txt missing");
  } else {
    if (timings.at("ae_seconds") > 600) o.fail("AE training " + fmt(timings.at("ae_seconds")) + " s");
    if (timings.at("diffusion_seconds") > 6 * 3600) o.fail("diffusion training " + fmt(timings.at("diffusion_seconds")) + " s");
    o.note("AE " + fmt(timings.at("ae_seconds")) + " s, diffusion " + fmt(timings.at("diffusion_seconds")) + " s");
  }
  const auto& r = reports[desk->config.inference.steps] = evaluate_desk(*desk, desk->config.inference.steps);
  if (!(r.ods_seval >= 0.85)) o.fail("SEval ODS " + fmt(r.ods_seval));
  if (!(std::abs(r.ods_ceval - r.ods_seval) <= 0.05)) o.fail("|CEval - SEval| " + fmt(std::abs(r.ods_ceval - r.ods_seval)));
  if (!(r.mean_ac >= 0.75)) o.fail("mean AC " + fmt(r.mean_ac));
  o.note("ODS SEval " + fmt(r.ods_seval) + ", CEval " + fmt(r.ods_ceval) + ", AC " + fmt(r.mean_ac));
  return o;
}

Outcome criterion_steps(std::optional<DeskModel>& desk, std::map<int, EvalReport>& reports) {
  Outcome o;
  if (!desk) {
    o.fail("no finished desk run under " + desk_dir().string());
    return o;
  }
  double lo = 1e9, hi = -1e9;
  for (int steps : {1, 5, 50}) {
    if (!reports.count(steps)) reports[steps] = evaluate_desk(*desk, steps);
    const double ods = reports[steps].ods_seval;
    lo = std::min(lo, ods);
    hi = std::max(hi, ods);
    o.note(std::to_string(steps) + " steps ODS " + fmt(ods));
  }
  if (!(hi - lo < 0.02)) o.fail("ODS spread " + fmt(hi - lo));
  return o;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string(DIFFEDGE_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  std::array<char, 4096> buf{};
  std::string out;
  while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int raw = pclose(pipe);
  if (output) *output = out;
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome criterion_determinism() {
  Outcome o;
  const auto root = fs::temp_directory_path() / ("diffedge_accept_" + std::to_string(std::random_device{}()));
  fs::create_directories(root);
  const std::string sets =
      " --set train.crop=32 --set inference.window=32 --set inference.stride=24 --set autoencoder.base_width=4"
      " --set denoiser.base_width=8 --set denoiser.cond_width=4 --set denoiser.time_dim=16 --set ae_train.epochs=2"
      " --set ae_train.batch_size=4 --set train.batch_size=2 --set train.iterations=20 --set train.checkpoint_every=10"
      " --set seed=7";
  const auto data = (root / "data").string();
  std::string log;
  if (run_cli("synth-data --n 8 --size 48 --seed 7 --out " + data, &log) != 0) {
    o.fail("synth-data failed: " + log);
    return o;
  }
  for (const char* name : {"a", "b"}) {
    const auto run = (root / name).string();
    if (run_cli("train-ae --data " + data + " --run " + run + sets, &log) != 0 ||
        run_cli("train-diffusion --data " + data + " --run " + run + sets, &log) != 0 ||
        run_cli("predict --checkpoint " + run + " --input " + data + "/images --output " + run + "/pred --seed 0",
                &log) != 0) {
      o.fail(std::string("run ") + name + " failed: " + log);
      fs::remove_all(root);
      return o;
    }
  }
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    const auto rel = fs::relative(entry.path(), root / "a");
    const auto ext = rel.extension();
    if (!entry.is_regular_file() || (ext != ".ckpt" && ext != ".png")) continue;
    ++compared;
    if (read_bytes(entry.path()) != read_bytes(root / "b" / rel)) o.fail(rel.string() + " differs");
  }
  if (compared < 8) o.fail("only " + std::to_string(compared) + " files compared");
  o.note(std::to_string(compared) + " checkpoint and prediction files compared");
  fs::remove_all(root);
  return o;
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  std::optional<DeskModel> desk;
  std::map<int, EvalReport> reports;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 diffusion identities", criterion_diffusion},
      {"2 fft filter identities", criterion_fft},
      {"3 wce oracle", criterion_wce},
      {"4 distillation gradient contract", criterion_distillation},
      {"5 metrics", criterion_metrics},
      {"6 desk-scale run", [&] { return criterion_desk(desk, reports); }},
      {"7 step-count robustness", [&] { return criterion_steps(desk, reports); }},
      {"8 determinism", criterion_determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    failed += !o.passed;
    std::cout << (o.passed ? "PASS" : "FAIL") << "  criterion " << name << ": " << o.detail << std::endl;
  }
  std::cout << "acceptance: " << criteria.size() - failed << " passed, " << failed << " failed" << std::endl;
  return failed ? 1 : 0;
}
