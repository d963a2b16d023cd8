#pragma once

// Run configuration (JSON text) and the per-run manifest.

#include <json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

#include "diffedge/autoencoder.hpp"
#include "diffedge/datasets.hpp"
#include "diffedge/denoiser.hpp"
#include "diffedge/diffusion.hpp"
#include "diffedge/evaluation.hpp"
#include "diffedge/inference.hpp"
#include "diffedge/objective.hpp"
#include "diffedge/trainer.hpp"

namespace diffedge {

inline constexpr const char* kVersion = "0.1.0";

// Invalid or unknown configuration values; the CLI maps it to a usage error.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Config {
  uint64_t seed = 0;
  TransitionSchedule diffusion;
  AutoencoderConfig autoencoder;
  AETrainConfig ae_train;
  DenoiserConfig denoiser;
  WCEConfig loss;
  DecoderGradient decoder_gradient = DecoderGradient::kDistilled;
  TrainConfig train;
  AugmentationPolicy augment;
  TileConfig inference;
  MatchConfig eval;

  Config();

  // Throws ConfigError naming the violated invariant.
  void validate() const;
  // Copies the seed into the training sections and the crop into the
  // denoiser geometry and augmentation policy.
  void sync();
};

// Full tree with every key; serialize(parse(serialize(c))) == serialize(c).
nlohmann::json to_json(const Config& c);
std::string serialize(const Config& c);

// Applies `overrides` on top of the defaults. Unknown keys raise a ConfigError
// listing all of them; type mismatches name the key path. Each applied leaf is
// appended to `applied` as "section.key".
Config config_from_json(const nlohmann::json& overrides, std::vector<std::string>* applied = nullptr);
// An empty (or whitespace-only) file yields the defaults.
Config load_config(const std::string& path, std::vector<std::string>* applied = nullptr);

// Parses "section.key=value" (value as JSON, falling back to a string) into
// `tree`.
void apply_assignment(nlohmann::json& tree, const std::string& assignment);

struct RunManifest {
  nlohmann::json config;
  uint64_t seed = 0;
  std::string version = kVersion;
  std::string dataset_fingerprint;
  std::vector<std::string> overrides;
  std::string created_at;  // UTC, ISO 8601
  std::string command;
};

// Writes {run_dir}/manifest.json unless it already exists (manifests are never
// rewritten). Returns true when written.
bool write_manifest(const std::string& run_dir, const RunManifest& manifest);
RunManifest read_manifest(const std::string& run_dir);

std::string utc_timestamp();

}  // namespace diffedge
