#include "diffedge/inference.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <stdexcept>

#include "diffedge/checkpoint.hpp"
#include "diffedge/image_io.hpp"
#include "diffedge/trainer.hpp"

namespace diffedge {

namespace fs = std::filesystem;

void TileConfig::validate() const {
  if (window <= 0 || window % 4 != 0) throw std::invalid_argument("window must be a positive multiple of 4");
  if (stride <= 0 || stride > window) throw std::invalid_argument("stride must satisfy 0 < stride <= window");
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (batch < 1) throw std::invalid_argument("tile batch must be >= 1");
}

std::vector<int64_t> tile_origins(int64_t length, int64_t window, int64_t stride) {
  if (length < window) throw std::invalid_argument("tile_origins: length shorter than the window");
  if (stride <= 0 || stride > window) throw std::invalid_argument("tile_origins: stride must satisfy 0 < stride <= window");
  std::vector<int64_t> origins;
  int64_t pos = 0;
  while (pos + window < length) {
    origins.push_back(pos);
    pos += stride;
  }
  origins.push_back(length - window);
  return origins;
}

TiledPrediction predict_tiled(const torch::Tensor& image, const TileConfig& tile, const TileFn& fn) {
  tile.validate();
  if (image.dim() != 3 || image.size(0) != 3) throw std::invalid_argument("predict: image must be [3, H, W]");
  const auto h = image.size(1), w = image.size(2);
  auto padded = image;
  int64_t off_y = 0, off_x = 0;
  while (padded.size(1) < tile.window || padded.size(2) < tile.window) {
    const auto ch = padded.size(1), cw = padded.size(2);
    const auto need_h = std::max<int64_t>(0, tile.window - ch), need_w = std::max<int64_t>(0, tile.window - cw);
    const bool reflect = need_h <= ch - 1 && need_w <= cw - 1;
    const auto step_h = reflect ? need_h : std::min(need_h, std::max<int64_t>(0, ch - 1));
    const auto step_w = reflect ? need_w : std::min(need_w, std::max<int64_t>(0, cw - 1));
    if (step_h == 0 && step_w == 0) {
      padded = torch::nn::functional::pad(
                   padded.unsqueeze(0),
                   torch::nn::functional::PadFuncOptions({0, need_w, 0, need_h}).mode(torch::kReplicate))[0];
      break;
    }
    padded = torch::nn::functional::pad(padded.unsqueeze(0),
                                        torch::nn::functional::PadFuncOptions(
                                            {step_w / 2, step_w - step_w / 2, step_h / 2, step_h - step_h / 2})
                                            .mode(torch::kReflect))[0];
    off_y += step_h / 2;
    off_x += step_w / 2;
  }
  const auto ph = padded.size(1), pw = padded.size(2);
  const auto ys = tile_origins(ph, tile.window, tile.stride);
  const auto xs = tile_origins(pw, tile.window, tile.stride);
  std::vector<std::pair<int64_t, int64_t>> rects;
  for (const auto y : ys)
    for (const auto x : xs) rects.emplace_back(y, x);

  auto sum = torch::zeros({ph, pw}, torch::kFloat32);
  auto count = torch::zeros({ph, pw}, torch::kFloat32);
  for (size_t first = 0; first < rects.size(); first += static_cast<size_t>(tile.batch)) {
    const auto last = std::min(rects.size(), first + static_cast<size_t>(tile.batch));
    std::vector<torch::Tensor> windows;
    for (size_t i = first; i < last; ++i) {
      const auto [y, x] = rects[i];
      windows.push_back(padded.slice(1, y, y + tile.window).slice(2, x, x + tile.window));
    }
    const auto out = fn(torch::stack(windows).to(torch::kFloat32));
    for (size_t i = first; i < last; ++i) {
      const auto [y, x] = rects[i];
      sum.slice(0, y, y + tile.window).slice(1, x, x + tile.window) += out[static_cast<int64_t>(i - first)][0];
      count.slice(0, y, y + tile.window).slice(1, x, x + tile.window) += 1.0;
    }
  }
  const auto edges = (sum / count).clamp(0.0, 1.0);
  TiledPrediction result;
  result.edges = edges.slice(0, off_y, off_y + h).slice(1, off_x, off_x + w).unsqueeze(0).contiguous();
  result.count = count.slice(0, off_y, off_y + h).slice(1, off_x, off_x + w).contiguous();
  return result;
}

Predictor::Predictor(EdgeAutoencoder autoencoder, EdgeDenoiser net, TransitionSchedule schedule)
    : ae_(std::move(autoencoder)), net_(std::move(net)), schedule_(schedule) {
  ae_->eval();
  ae_->freeze();
  net_->eval();
}

torch::Tensor Predictor::sample_windows(const torch::Tensor& windows, int steps, at::Generator& gen) const {
  torch::NoGradGuard no_grad;
  auto net = net_;
  auto ae = ae_;
  const auto& cfg = net->config();
  const auto n = windows.size(0);
  auto schedule = schedule_;
  schedule.num_steps = steps;
  schedule.validate();
  const auto cond = net->encode_condition(windows);
  const DenoiseFn denoise = [&](const torch::Tensor& z, double t) {
    return net->denoise(z, torch::full({n}, t, torch::kFloat32), cond);
  };
  const auto z0 = sample(denoise, schedule, {n, cfg.latent_channels, cfg.latent_height, cfg.latent_width}, gen);
  return ae->decode(z0);
}

TiledPrediction Predictor::predict(const torch::Tensor& image, const TileConfig& tile) const {
  tile.validate();
  const auto& cfg = net_->config();
  if (tile.window != cfg.latent_height * 4 || tile.window != cfg.latent_width * 4)
    throw std::invalid_argument("window " + std::to_string(tile.window) + " does not match the denoiser's " +
                                std::to_string(cfg.latent_height * 4) + "-pixel input size");
  auto gen = make_generator(tile.seed);
  return predict_tiled(image, tile, [&](const torch::Tensor& windows) { return sample_windows(windows, tile.steps, gen); });
}

LoadedModel load_model(const std::string& checkpoint) {
  fs::path dir(checkpoint);
  fs::path denoiser;
  if (fs::is_regular_file(dir)) {
    denoiser = dir;
    dir = dir.parent_path();
    if (dir.empty()) dir = ".";
  } else {
    if (!fs::is_directory(dir)) throw std::runtime_error("checkpoint directory not found: " + checkpoint);
    const auto step = latest_checkpoint_step(dir.string());
    if (step < 0) throw std::runtime_error("no net_ema_*.ckpt in " + checkpoint);
    denoiser = dir / ("net_ema_" + std::to_string(step) + ".ckpt");
  }
  LoadedModel model;
  model.autoencoder = autoencoder_from_checkpoint(load_checkpoint((dir / "ae.ckpt").string()));
  const auto ckpt = load_checkpoint(denoiser.string());
  model.net = denoiser_from_checkpoint(ckpt);
  model.denoiser_path = denoiser.string();
  model.step = ckpt.meta.value("step", int64_t{0});
  model.config = ckpt.meta.value("config", nlohmann::json::object());
  return model;
}

std::vector<std::string> collect_images(const std::string& path) {
  std::vector<std::string> out;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (!entry.is_regular_file()) continue;
      auto ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
  } else {
    out.push_back(path);
  }
  return out;
}

BatchResult predict_batch(const Predictor& predictor, const std::vector<std::string>& inputs,
                          const std::string& output_dir, const TileConfig& tile) {
  fs::create_directories(output_dir);
  std::ofstream timing(fs::path(output_dir) / "timing.csv", std::ios::trunc);
  timing << "image,height,width,tiles,steps,seconds\n";
  BatchResult result;
  for (const auto& path : inputs) {
    try {
      const auto image = read_rgb(path);
      const auto start = std::chrono::steady_clock::now();
      const auto pred = predictor.predict(image, tile);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const auto stem = fs::path(path).stem().string();
      write_gray_png((fs::path(output_dir) / (stem + ".png")).string(), pred.edges);
      const auto ph = std::max(image.size(1), tile.window), pw = std::max(image.size(2), tile.window);
      const auto tiles = tile_origins(ph, tile.window, tile.stride).size() * tile_origins(pw, tile.window, tile.stride).size();
      timing << stem << ',' << image.size(1) << ',' << image.size(2) << ',' << tiles << ',' << tile.steps << ','
             << std::fixed << std::setprecision(4) << seconds << '\n';
      timing.unsetf(std::ios::floatfield);
      ++result.written;
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception& e) {
      std::cerr << "error: " << path << ": " << e.what() << '\n';
      ++result.failed;
    }
  }
  return result;
}

}  // namespace diffedge
