// diffedge: command-line entry point.
//
//   diffedge synth-data --n 64 --size 160 --out data/
//   diffedge train-ae --data data/ --run runs/toy [--config cfg.json] [--set train.crop=160]
//   diffedge train-diffusion --data data/ --run runs/toy [--resume]
//   diffedge predict --checkpoint runs/toy --input img_dir --output out/
//   diffedge evaluate --pred out/ --gt data/edges --report eval.txt
//   diffedge selftest
//   diffedge print-config [--config cfg.json] [--set key=value]

#include <CLI11.hpp>
#include <torch/torch.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "diffedge/checkpoint.hpp"
#include "diffedge/config.hpp"
#include "diffedge/datasets.hpp"
#include "diffedge/evaluation.hpp"
#include "diffedge/image_io.hpp"
#include "diffedge/inference.hpp"
#include "diffedge/selftest.hpp"
#include "diffedge/trainer.hpp"

namespace fs = std::filesystem;
using namespace diffedge;

namespace {

// Exit statuses: 0 success, 1 runtime failure, 2 usage or configuration error.
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

std::string env_checkpoint_dir() {
  const char* v = std::getenv("DIFFEDGE_CHECKPOINT_DIR");
  return v ? v : "";
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* app, ConfigArgs& args) {
  app->add_option("--config", args.path, "JSON config file (defaults apply to missing keys)");
  app->add_option("--set", args.sets, "Override one key, e.g. --set train.iterations=100");
}

Config resolve_config(const ConfigArgs& args, std::vector<std::string>& overrides) {
  nlohmann::json tree = nlohmann::json::object();
  if (!args.path.empty()) {
    std::vector<std::string> file_keys;
    load_config(args.path, &file_keys);
    std::ifstream in(args.path);
    std::stringstream buf;
    buf << in.rdbuf();
    if (buf.str().find_first_not_of(" \t\r\n") != std::string::npos) tree = nlohmann::json::parse(buf.str());
  }
  for (const auto& s : args.sets) apply_assignment(tree, s);
  return config_from_json(tree, &overrides);
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

void ensure_manifest(const std::string& run, const Config& cfg, const std::vector<std::string>& overrides,
                     const Dataset& data, const std::string& command) {
  RunManifest m;
  m.config = to_json(cfg);
  m.seed = cfg.seed;
  m.dataset_fingerprint = data.fingerprint();
  m.overrides = overrides;
  m.command = command;
  if (!write_manifest(run, m)) {
    const auto existing = read_manifest(run);
    if (existing.config != m.config || existing.dataset_fingerprint != m.dataset_fingerprint)
      throw ConfigError("run directory " + run + " was created with a different config or dataset");
  }
}

std::vector<torch::Tensor> edge_corpus(const std::vector<Sample>& samples) {
  std::vector<torch::Tensor> out;
  for (const auto& s : samples) out.push_back(s.gt);
  return out;
}

int cmd_synth(int n, int64_t size, const std::string& out, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("--n must be >= 1");
  const auto samples = generate_synthetic(n, size, seed);
  write_paired_png(samples, out);
  std::cout << "wrote " << samples.size() << " samples to " << out << '\n';
  return 0;
}

int cmd_train_ae(const std::string& data_dir, const std::string& layout, const std::string& run,
                 const ConfigArgs& cargs, const std::string& command) {
  std::vector<std::string> overrides;
  const auto cfg = resolve_config(cargs, overrides);
  const auto data = load_dataset(data_dir, parse_layout(layout));
  ensure_manifest(run, cfg, overrides, data, command);
  const auto samples = data.load_all();
  torch::manual_seed(cfg.seed);
  auto result = train_autoencoder(edge_corpus(samples), cfg.autoencoder, cfg.ae_train, cfg.train.crop,
                                  [](int64_t epoch, double loss) {
                                    std::cout << "epoch " << epoch + 1 << " loss " << loss << std::endl;
                                  });
  const auto path = (fs::path(run) / "ae.ckpt").string();
  save_checkpoint(path, autoencoder_checkpoint(result.model, to_json(cfg)));
  std::cout << "normalization_scale " << result.model->normalization_scale() << "\nsaved " << path << '\n';
  return 0;
}

int cmd_train_diffusion(const std::string& data_dir, const std::string& layout, const std::string& run, bool resume,
                        const ConfigArgs& cargs, const std::string& command) {
  std::vector<std::string> overrides;
  const auto cfg = resolve_config(cargs, overrides);
  const auto data = load_dataset(data_dir, parse_layout(layout));
  ensure_manifest(run, cfg, overrides, data, command);
  const auto ae_path = (fs::path(run) / "ae.ckpt").string();
  if (!fs::exists(ae_path)) throw std::runtime_error("missing " + ae_path + "; run train-ae first");
  auto ae = autoencoder_from_checkpoint(load_checkpoint(ae_path));

  torch::manual_seed(cfg.seed);
  auto net_cfg = cfg.denoiser;
  net_cfg.latent_channels = ae->config().latent_channels;
  EdgeDenoiser net(net_cfg);

  DiffusionTrainerOptions opts;
  opts.train = cfg.train;
  opts.schedule = cfg.diffusion;
  opts.wce = cfg.loss;
  opts.augment = cfg.augment;
  opts.decoder_gradient = cfg.decoder_gradient;
  opts.run_dir = run;
  opts.config_snapshot = to_json(cfg);
  DiffusionTrainer trainer(data.load_all(), ae, net, opts);
  if (resume) {
    const auto step = latest_checkpoint_step(run);
    if (step < 0) throw std::runtime_error("--resume: no checkpoint in " + run);
    trainer.resume(run, step);
    std::cout << "resumed at step " << step << '\n';
  }
  const auto every = std::max<int64_t>(1, cfg.train.iterations / 100);
  trainer.run(-1, [&](const StepStats& s) {
    if (s.step % every == 0 || s.step == 1)
      std::cout << "step " << s.step << " lr " << s.lr << " f " << s.f_loss << " n " << s.n_loss << " wce "
                << s.wce_loss << " total " << s.total << std::endl;
  });
  std::cout << "finished at step " << trainer.current_step() << '\n';
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& input, const std::string& output,
                const std::map<std::string, int64_t>& given) {
  if (checkpoint.empty()) throw std::invalid_argument("--checkpoint is required (or set DIFFEDGE_CHECKPOINT_DIR)");
  const auto with_flags = [&](TileConfig tile) {
    if (given.count("steps")) tile.steps = static_cast<int>(given.at("steps"));
    if (given.count("window")) tile.window = given.at("window");
    if (given.count("stride")) tile.stride = given.at("stride");
    if (given.count("seed")) {
      if (given.at("seed") < 0) throw std::invalid_argument("--seed must be non-negative");
      tile.seed = static_cast<uint64_t>(given.at("seed"));
    }
    tile.validate();
    return tile;
  };
  if (given.count("window") && given.count("stride")) with_flags(TileConfig{});
  auto model = load_model(checkpoint);
  Config stored;
  if (!model.config.empty()) stored = config_from_json(model.config);
  const auto tile = with_flags(stored.inference);
  const Predictor predictor(model.autoencoder, model.net, stored.diffusion);
  const auto inputs = collect_images(input);
  if (inputs.empty()) throw std::runtime_error("no images found in " + input);
  const auto result = predict_batch(predictor, inputs, output, tile);
  std::cout << "wrote " << result.written << " maps to " << output << " (" << result.failed << " failed)\n";
  return result.failed == 0 ? 0 : kRuntimeError;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_in, double max_dist_frac,
                 const std::string& protocol, const std::string& report_path, int thresholds) {
  MatchConfig cfg;
  cfg.max_dist_frac = max_dist_frac;
  cfg.thresholds = thresholds;
  cfg.validate();
  const auto proto = parse_protocol(protocol);
  std::string gt_dir = gt_in;
  if (fs::is_directory(fs::path(gt_in) / "edges")) gt_dir = (fs::path(gt_in) / "edges").string();
  if (!fs::is_directory(gt_dir)) throw std::runtime_error("ground-truth directory not found: " + gt_in);
  std::vector<torch::Tensor> preds, gts;
  std::vector<std::string> ids;
  for (const auto& gt_path : collect_images(gt_dir)) {
    const auto id = fs::path(gt_path).stem().string();
    const auto pred_path = fs::path(pred_dir) / (id + ".png");
    if (!fs::exists(pred_path)) throw std::runtime_error("missing prediction for " + id + " in " + pred_dir);
    preds.push_back(read_gray(pred_path.string())[0]);
    gts.push_back(read_gray(gt_path)[0]);
    ids.push_back(id);
  }
  if (ids.empty()) throw std::runtime_error("no ground-truth maps in " + gt_dir);
  const auto report = evaluate(preds, gts, cfg, proto, ids);
  if (!report_path.empty()) write_report(report, report_path);
  std::cout << "images " << ids.size() << "\nmatcher " << report.matcher << '\n';
  if (report.has_seval) std::cout << "seval_ods " << report.ods_seval << "\nseval_ois " << report.ois_seval << '\n';
  if (report.has_ceval) std::cout << "ceval_ods " << report.ods_ceval << "\nceval_ois " << report.ois_ceval << '\n';
  std::cout << "mean_ac " << report.mean_ac << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-based crisp edge detection"};
  app.require_subcommand(1);
  const auto command = command_line(argc, argv);

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic shapes dataset");
  int synth_n = 64;
  int64_t synth_size = 160;
  uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--n", synth_n, "Number of samples")->capture_default_str();
  synth->add_option("--size", synth_size, "Image side in pixels (multiple of 4)")->capture_default_str();
  synth->add_option("--out", synth_out, "Output root")->required();
  synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();

  std::string data_dir, layout = "paired_png", run = env_checkpoint_dir();
  ConfigArgs cargs;
  auto* train_ae = app.add_subcommand("train-ae", "Train the edge autoencoder");
  train_ae->add_option("--data", data_dir, "Dataset root")->required();
  train_ae->add_option("--layout", layout, "paired_png or list_file")->capture_default_str();
  train_ae->add_option("--run", run, "Run directory (default: $DIFFEDGE_CHECKPOINT_DIR)");
  add_config_options(train_ae, cargs);

  bool resume = false;
  auto* train_diff = app.add_subcommand("train-diffusion", "Train the latent denoiser");
  train_diff->add_option("--data", data_dir, "Dataset root")->required();
  train_diff->add_option("--layout", layout, "paired_png or list_file")->capture_default_str();
  train_diff->add_option("--run", run, "Run directory containing ae.ckpt (default: $DIFFEDGE_CHECKPOINT_DIR)");
  train_diff->add_flag("--resume", resume, "Continue from the latest checkpoint in the run directory");
  add_config_options(train_diff, cargs);

  std::string checkpoint = env_checkpoint_dir(), input, output;
  int64_t steps = 0, window = 0, stride = 0, seed = 0;
  auto* predict = app.add_subcommand("predict", "Predict edge maps for images");
  predict->add_option("--checkpoint", checkpoint, "Run directory or net_ema_*.ckpt (default: $DIFFEDGE_CHECKPOINT_DIR)");
  predict->add_option("--input", input, "Image file or directory")->required();
  predict->add_option("--output", output, "Output directory")->required();
  auto* o_steps = predict->add_option("--steps", steps, "Sampling steps (default from checkpoint config)");
  auto* o_window = predict->add_option("--window", window, "Tile size in pixels");
  auto* o_stride = predict->add_option("--stride", stride, "Tile stride in pixels");
  auto* o_seed = predict->add_option("--seed", seed, "Sampling seed");

  std::string pred_dir, gt_dir, protocol = "both", report;
  double max_dist_frac = 0.0075;
  int thresholds = 99;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against ground truth");
  evaluate_cmd->add_option("--pred", pred_dir, "Directory of predicted PNGs")->required();
  evaluate_cmd->add_option("--gt", gt_dir, "Directory of ground-truth PNGs (or a dataset root)")->required();
  evaluate_cmd->add_option("--max-dist-frac", max_dist_frac, "Matching radius / image diagonal")->capture_default_str();
  evaluate_cmd->add_option("--protocol", protocol, "seval, ceval or both")->capture_default_str();
  evaluate_cmd->add_option("--thresholds", thresholds, "Number of thresholds")->capture_default_str();
  evaluate_cmd->add_option("--report", report, "Report path (key=value; CSVs alongside)");

  ConfigArgs print_args;
  auto* print_cfg = app.add_subcommand("print-config", "Print the resolved configuration as JSON");
  add_config_options(print_cfg, print_args);

  uint64_t selftest_seed = 0;
  auto* selftest = app.add_subcommand("selftest", "Run the analytic invariant suite");
  selftest->add_option("--seed", selftest_seed, "Random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return kUsageError;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_n, synth_size, synth_out, synth_seed);
    if (train_ae->parsed() || train_diff->parsed()) {
      if (run.empty()) throw std::invalid_argument("--run is required (or set DIFFEDGE_CHECKPOINT_DIR)");
      if (train_ae->parsed()) return cmd_train_ae(data_dir, layout, run, cargs, command);
      return cmd_train_diffusion(data_dir, layout, run, resume, cargs, command);
    }
    if (predict->parsed()) {
      std::map<std::string, int64_t> given;
      if (o_steps->count()) given["steps"] = steps;
      if (o_window->count()) given["window"] = window;
      if (o_stride->count()) given["stride"] = stride;
      if (o_seed->count()) given["seed"] = seed;
      return cmd_predict(checkpoint, input, output, given);
    }
    if (evaluate_cmd->parsed()) return cmd_evaluate(pred_dir, gt_dir, max_dist_frac, protocol, report, thresholds);
    if (print_cfg->parsed()) {
      std::vector<std::string> overrides;
      std::cout << to_json(resolve_config(print_args, overrides)).dump(2) << '\n';
      return 0;
    }
    if (selftest->parsed()) return run_selftest(std::cout, selftest_seed).failed == 0 ? 0 : kRuntimeError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
