#include "diffedge/config.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace diffedge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string gradient_name(DecoderGradient g) { return g == DecoderGradient::kDistilled ? "distilled" : "full_backprop"; }

DecoderGradient parse_gradient(const std::string& s) {
  if (s == "distilled") return DecoderGradient::kDistilled;
  if (s == "full_backprop") return DecoderGradient::kFullBackprop;
  throw ConfigError("loss.decoder_gradient must be 'distilled' or 'full_backprop', got '" + s + "'");
}

enum class Kind { kBool, kInt, kFloat, kString, kArray, kObject };

Kind kind_of(const json& j) {
  if (j.is_boolean()) return Kind::kBool;
  if (j.is_number_integer()) return Kind::kInt;
  if (j.is_number_float()) return Kind::kFloat;
  if (j.is_string()) return Kind::kString;
  if (j.is_array()) return Kind::kArray;
  return Kind::kObject;
}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kBool: return "a boolean";
    case Kind::kInt: return "an integer";
    case Kind::kFloat: return "a number";
    case Kind::kString: return "a string";
    case Kind::kArray: return "an array of numbers";
    case Kind::kObject: return "an object";
  }
  return "?";
}

bool compatible(const json& def, const json& value) {
  const auto want = kind_of(def);
  switch (want) {
    case Kind::kFloat: return value.is_number();
    case Kind::kInt: return value.is_number_integer() || (value.is_number_float() && value.get<double>() == std::floor(value.get<double>()));
    case Kind::kArray:
      if (!value.is_array()) return false;
      for (const auto& v : value)
        if (!v.is_number()) return false;
      return true;
    default: return kind_of(value) == want;
  }
}

void merge(json& tree, const json& overrides, const std::string& path, std::vector<std::string>& unknown,
           std::vector<std::string>& applied) {
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    const auto key = path.empty() ? it.key() : path + "." + it.key();
    if (!tree.contains(it.key())) {
      unknown.push_back(key);
      continue;
    }
    auto& slot = tree[it.key()];
    if (slot.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + key + "' must be an object");
      merge(slot, it.value(), key, unknown, applied);
      continue;
    }
    if (!compatible(slot, it.value()))
      throw ConfigError("config key '" + key + "' must be " + kind_name(kind_of(slot)));
    if (kind_of(slot) == Kind::kInt)
      slot = static_cast<int64_t>(it.value().get<double>());
    else
      slot = it.value();
    applied.push_back(key);
  }
}

template <class F>
void check(const char* section, F&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(section) + ": " + e.what());
  }
}

}  // namespace

Config::Config() {
  train.iterations = 5000;
  sync();
}

void Config::sync() {
  train.seed = seed;
  ae_train.seed = seed;
  denoiser.latent_height = train.crop / 4;
  denoiser.latent_width = train.crop / 4;
  augment.crop_size = train.crop;
}

void Config::validate() const {
  check("diffusion", [&] { diffusion.validate(); });
  check("autoencoder", [&] { autoencoder.validate(); });
  check("ae_train", [&] { ae_train.validate(); });
  check("denoiser", [&] { denoiser.validate(); });
  check("loss", [&] { loss.validate(); });
  check("train", [&] { train.validate(); });
  check("augment", [&] { augment.validate(); });
  check("inference", [&] { inference.validate(); });
  check("eval", [&] { eval.validate(); });
  if (inference.window != train.crop)
    throw ConfigError("inference.window (" + std::to_string(inference.window) + ") must equal train.crop (" +
                      std::to_string(train.crop) + "), the denoiser input size");
}

json to_json(const Config& c) {
  json j;
  j["seed"] = c.seed;
  j["diffusion"] = {{"t_min", c.diffusion.t_min},
                    {"t_max", c.diffusion.t_max},
                    {"stochastic", c.diffusion.stochastic},
                    {"transition", "constant"}};
  j["autoencoder"] = {{"latent_channels", c.autoencoder.latent_channels}, {"base_width", c.autoencoder.base_width},
                       {"density_gain", c.autoencoder.density_gain}};
  j["ae_train"] = {{"epochs", c.ae_train.epochs},
                   {"batch_size", c.ae_train.batch_size},
                   {"lr", c.ae_train.lr},
                   {"lambda", c.ae_train.lambda},
                   {"balanced", c.ae_train.balanced},
                   {"scale_samples", c.ae_train.scale_samples}};
  j["denoiser"] = {{"base_width", c.denoiser.base_width},
                   {"cond_width", c.denoiser.cond_width},
                   {"time_dim", c.denoiser.time_dim},
                   {"fft_filter", c.denoiser.use_fft_filter},
                   {"fft_at_bottleneck", c.denoiser.fft_at_bottleneck}};
  j["loss"] = {{"lambda", c.loss.lambda},
               {"eta", c.loss.eta},
               {"epsilon", c.loss.epsilon},
               {"wce_weight", c.loss.weight},
               {"decoder_gradient", gradient_name(c.decoder_gradient)}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"iterations", c.train.iterations},
                {"lr_start", c.train.lr_start},
                {"lr_end", c.train.lr_end},
                {"weight_decay", c.train.weight_decay},
                {"ema_decay", c.train.ema_decay},
                {"ema_warmup", c.train.ema_warmup},
                {"crop", c.train.crop},
                {"checkpoint_every", c.train.checkpoint_every},
                {"log_every", c.train.log_every}};
  j["augment"] = {{"flip", c.augment.random_flip}, {"scale", c.augment.random_scale}, {"scales", c.augment.scales}};
  j["inference"] = {{"window", c.inference.window},
                    {"stride", c.inference.stride},
                    {"steps", c.inference.steps},
                    {"seed", c.inference.seed},
                    {"batch", c.inference.batch}};
  j["eval"] = {{"max_dist_frac", c.eval.max_dist_frac},
               {"thresholds", c.eval.thresholds},
               {"gt_threshold", c.eval.gt_threshold}};
  return j;
}

std::string serialize(const Config& c) { return to_json(c).dump(2) + "\n"; }

Config config_from_json(const json& overrides, std::vector<std::string>* applied) {
  if (!overrides.is_null() && !overrides.is_object()) throw ConfigError("config root must be an object");
  auto tree = to_json(Config{});
  std::vector<std::string> unknown, keys;
  if (overrides.is_object()) merge(tree, overrides, "", unknown, keys);
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  if (tree.at("seed").get<int64_t>() < 0) throw ConfigError("config key 'seed' must be non-negative");
  if (tree.at("inference").at("seed").get<int64_t>() < 0) throw ConfigError("config key 'inference.seed' must be non-negative");

  Config c;
  c.seed = tree.at("seed").get<uint64_t>();
  const auto& d = tree.at("diffusion");
  c.diffusion.t_min = d.at("t_min").get<double>();
  c.diffusion.t_max = d.at("t_max").get<double>();
  c.diffusion.stochastic = d.at("stochastic").get<bool>();
  if (d.at("transition").get<std::string>() != "constant")
    throw ConfigError("diffusion.transition must be 'constant'");
  const auto& a = tree.at("autoencoder");
  c.autoencoder.latent_channels = a.at("latent_channels").get<int64_t>();
  c.autoencoder.base_width = a.at("base_width").get<int64_t>();
  c.autoencoder.density_gain = a.at("density_gain").get<double>();
  const auto& at = tree.at("ae_train");
  c.ae_train.epochs = at.at("epochs").get<int64_t>();
  c.ae_train.batch_size = at.at("batch_size").get<int64_t>();
  c.ae_train.lr = at.at("lr").get<double>();
  c.ae_train.lambda = at.at("lambda").get<double>();
  c.ae_train.balanced = at.at("balanced").get<bool>();
  c.ae_train.scale_samples = at.at("scale_samples").get<int64_t>();
  const auto& n = tree.at("denoiser");
  c.denoiser.latent_channels = c.autoencoder.latent_channels;
  c.denoiser.base_width = n.at("base_width").get<int64_t>();
  c.denoiser.cond_width = n.at("cond_width").get<int64_t>();
  c.denoiser.time_dim = n.at("time_dim").get<int64_t>();
  c.denoiser.use_fft_filter = n.at("fft_filter").get<bool>();
  c.denoiser.fft_at_bottleneck = n.at("fft_at_bottleneck").get<bool>();
  const auto& l = tree.at("loss");
  c.loss.lambda = l.at("lambda").get<double>();
  c.loss.eta = l.at("eta").get<double>();
  c.loss.epsilon = l.at("epsilon").get<double>();
  c.loss.weight = l.at("wce_weight").get<double>();
  c.decoder_gradient = parse_gradient(l.at("decoder_gradient").get<std::string>());
  const auto& t = tree.at("train");
  c.train.batch_size = t.at("batch_size").get<int64_t>();
  c.train.iterations = t.at("iterations").get<int64_t>();
  c.train.lr_start = t.at("lr_start").get<double>();
  c.train.lr_end = t.at("lr_end").get<double>();
  c.train.weight_decay = t.at("weight_decay").get<double>();
  c.train.ema_decay = t.at("ema_decay").get<double>();
  c.train.ema_warmup = t.at("ema_warmup").get<int64_t>();
  c.train.crop = t.at("crop").get<int64_t>();
  c.train.checkpoint_every = t.at("checkpoint_every").get<int64_t>();
  c.train.log_every = t.at("log_every").get<int64_t>();
  const auto& g = tree.at("augment");
  c.augment.random_flip = g.at("flip").get<bool>();
  c.augment.random_scale = g.at("scale").get<bool>();
  c.augment.scales = g.at("scales").get<std::vector<double>>();
  const auto& i = tree.at("inference");
  c.inference.window = i.at("window").get<int64_t>();
  c.inference.stride = i.at("stride").get<int64_t>();
  c.inference.steps = i.at("steps").get<int>();
  c.inference.seed = i.at("seed").get<uint64_t>();
  c.inference.batch = i.at("batch").get<int64_t>();
  const auto& e = tree.at("eval");
  c.eval.max_dist_frac = e.at("max_dist_frac").get<double>();
  c.eval.thresholds = e.at("thresholds").get<int>();
  c.eval.gt_threshold = e.at("gt_threshold").get<double>();
  c.sync();
  c.validate();
  if (applied) *applied = keys;
  return c;
}

Config load_config(const std::string& path, std::vector<std::string>* applied) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto text = buf.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return config_from_json(json::object(), applied);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, applied);
}

void apply_assignment(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &tree;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->contains(path[i])) (*node)[path[i]] = json::object();
    node = &(*node)[path[i]];
  }
  (*node)[path.back()] = value;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool write_manifest(const std::string& run_dir, const RunManifest& m) {
  fs::create_directories(run_dir);
  const auto path = fs::path(run_dir) / "manifest.json";
  if (fs::exists(path)) return false;
  json j = {{"config", m.config},
            {"seed", m.seed},
            {"version", m.version},
            {"dataset_fingerprint", m.dataset_fingerprint},
            {"overrides", m.overrides},
            {"created_at", m.created_at.empty() ? utc_timestamp() : m.created_at},
            {"command", m.command}};
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return true;
}

RunManifest read_manifest(const std::string& run_dir) {
  const auto path = fs::path(run_dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const auto j = json::parse(in);
  RunManifest m;
  m.config = j.at("config");
  m.seed = j.at("seed").get<uint64_t>();
  m.version = j.at("version").get<std::string>();
  m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
  m.overrides = j.at("overrides").get<std::vector<std::string>>();
  m.created_at = j.at("created_at").get<std::string>();
  m.command = j.value("command", std::string());
  return m;
}

}  // namespace diffedge
