#pragma once

// Checkpoint container shared by every stored model.
//
// Layout (all integers little-endian):
//   8 bytes   magic "DFEDGCKP"
//   u32       format version
//   u64       metadata length M
//   M bytes   UTF-8 JSON metadata: kind, config snapshot, tensor index
//   ...       raw tensor bytes, in index order, contiguous
//
// The JSON is written with sorted keys and no timestamps so identical models
// produce byte-identical files.

#include <torch/torch.h>

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace diffedge {

inline constexpr char kCheckpointMagic[8] = {'D', 'F', 'E', 'D', 'G', 'C', 'K', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  NamedTensors tensors;

  const torch::Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Throws std::runtime_error on a bad magic string, unsupported version or truncated file.
Checkpoint load_checkpoint(const std::string& path);

// Parameters followed by buffers, in registration order, with `prefix` prepended.
NamedTensors module_state(const torch::nn::Module& module, const std::string& prefix = "");
// Copies matching tensors into the module. Throws when a name is missing or a shape differs.
void load_module_state(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace diffedge
