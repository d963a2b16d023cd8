#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <string>

#include "diffedge/autoencoder.hpp"
#include "diffedge/denoiser.hpp"

namespace diffedge::testutil {

inline AutoencoderConfig tiny_autoencoder() {
  AutoencoderConfig c;
  c.latent_channels = 4;
  c.base_width = 4;
  return c;
}

// Denoiser for `size` x `size` inputs.
inline DenoiserConfig tiny_denoiser(int64_t size = 32) {
  DenoiserConfig c;
  c.latent_channels = 4;
  c.latent_height = size / 4;
  c.latent_width = size / 4;
  c.base_width = 8;
  c.cond_width = 4;
  c.time_dim = 16;
  return c;
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("diffedge_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace diffedge::testutil
