#pragma once

// Full-resolution prediction by sliding-window latent sampling. Each window is
// sampled and decoded independently; overlapping outputs are averaged.

#include <torch/torch.h>

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

#include "diffedge/autoencoder.hpp"
#include "diffedge/denoiser.hpp"
#include "diffedge/diffusion.hpp"

namespace diffedge {

struct TileConfig {
  int64_t window = 320;
  int64_t stride = 240;
  int steps = 5;
  uint64_t seed = 0;
  // Windows sampled together in one network call.
  int64_t batch = 4;

  void validate() const;
};

// Window origins along one axis: 0, stride, 2*stride, ... with the last window
// snapped to the border so that it ends at `length`. Requires length >= window.
std::vector<int64_t> tile_origins(int64_t length, int64_t window, int64_t stride);

struct TiledPrediction {
  torch::Tensor edges;  // [1, H, W] in [0, 1]
  torch::Tensor count;  // [H, W] number of windows covering each pixel
};

// Maps a batch of windows [T, 3, w, w] to edge maps [T, 1, w, w].
using TileFn = std::function<torch::Tensor(const torch::Tensor& windows)>;

// Reflect-pads `image` ([3, H, W]) up to the window size if needed, runs
// `fn` over the stride grid in batches and averages overlaps. The result has
// the input's dimensions.
TiledPrediction predict_tiled(const torch::Tensor& image, const TileConfig& tile, const TileFn& fn);

class Predictor {
 public:
  // `schedule` supplies t_min/t_max and the stochastic flag; the step count
  // comes from the TileConfig.
  Predictor(EdgeAutoencoder autoencoder, EdgeDenoiser net, TransitionSchedule schedule = {});

  // Throws std::invalid_argument when the window does not match the
  // denoiser's latent geometry.
  TiledPrediction predict(const torch::Tensor& image, const TileConfig& tile) const;

  // Samples and decodes one batch of windows with the given generator.
  torch::Tensor sample_windows(const torch::Tensor& windows, int steps, at::Generator& gen) const;

  const EdgeDenoiser& net() const { return net_; }
  const EdgeAutoencoder& autoencoder() const { return ae_; }

 private:
  EdgeAutoencoder ae_;
  EdgeDenoiser net_;
  TransitionSchedule schedule_;
};

// Loads {dir}/ae.ckpt and the latest {dir}/net_ema_{k}.ckpt. A path to a
// single .ckpt file selects that denoiser checkpoint inside its directory.
struct LoadedModel {
  EdgeAutoencoder autoencoder{nullptr};
  EdgeDenoiser net{nullptr};
  std::string denoiser_path;
  int64_t step = 0;
  nlohmann::json config;  // snapshot stored in the denoiser checkpoint
};
LoadedModel load_model(const std::string& checkpoint);

struct BatchResult {
  int64_t written = 0;
  int64_t failed = 0;
};

// Predicts every image in `inputs` (files, or directories scanned for
// .png/.jpg/.jpeg/.bmp), writing {output}/{stem}.png and {output}/timing.csv.
// Per-file failures are reported on stderr and counted.
BatchResult predict_batch(const Predictor& predictor, const std::vector<std::string>& inputs,
                          const std::string& output_dir, const TileConfig& tile);

std::vector<std::string> collect_images(const std::string& path);

}  // namespace diffedge
