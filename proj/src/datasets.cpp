#include "diffedge/datasets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "diffedge/evaluation.hpp"
#include "diffedge/image_io.hpp"

namespace diffedge {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

DatasetLayout parse_layout(const std::string& name) {
  if (name == "paired_png") return DatasetLayout::kPairedPng;
  if (name == "list_file") return DatasetLayout::kListFile;
  throw std::invalid_argument("unknown dataset layout '" + name + "' (expected paired_png or list_file)");
}

Sample Dataset::get(size_t index) const {
  const auto& e = entries_.at(index);
  Sample s;
  s.id = e.id;
  s.image = read_rgb(e.image_path);
  s.gt = read_gray(e.gt_path);
  if (s.image.size(1) != s.gt.size(1) || s.image.size(2) != s.gt.size(2))
    throw std::runtime_error("sample '" + e.id + "': image and edge map dimensions differ");
  return s;
}

std::vector<Sample> Dataset::load_all() const {
  std::vector<Sample> out;
  out.reserve(entries_.size());
  for (size_t i = 0; i < entries_.size(); ++i) out.push_back(get(i));
  return out;
}

std::string Dataset::fingerprint() const {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const char* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= static_cast<uint8_t>(data[i]);
      h *= 1099511628211ULL;
    }
  };
  std::vector<char> buf(1 << 16);
  for (const auto& e : entries_) {
    mix(e.id.data(), e.id.size());
    for (const auto& path : {e.image_path, e.gt_path}) {
      std::ifstream f(path, std::ios::binary);
      while (f) {
        f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        mix(buf.data(), static_cast<size_t>(f.gcount()));
      }
    }
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

namespace {

std::vector<Dataset::Entry> paired_entries(const fs::path& root) {
  const auto images = root / "images";
  const auto edges = root / "edges";
  if (!fs::is_directory(images)) throw std::runtime_error("missing images directory " + images.string());
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(images))
    if (f.is_regular_file()) files.push_back(f.path());
  std::sort(files.begin(), files.end());
  std::vector<Dataset::Entry> entries;
  for (const auto& f : files) {
    const auto id = f.stem().string();
    const auto gt = edges / (id + ".png");
    if (!fs::exists(gt))
      throw std::runtime_error("sample '" + id + "': missing edge map " + gt.string() + " for image " + f.string());
    entries.push_back({id, f.string(), gt.string()});
  }
  return entries;
}

std::vector<Dataset::Entry> list_entries(const fs::path& root) {
  const auto list = fs::is_directory(root) ? root / "list.txt" : root;
  std::ifstream in(list);
  if (!in) throw std::runtime_error("cannot open list file " + list.string());
  const auto base = list.parent_path();
  std::vector<Dataset::Entry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(list.string() + ":" + std::to_string(line_no) + ": expected '<image>\\t<gt>'");
    const auto image = base / line.substr(0, tab);
    const auto gt = base / line.substr(tab + 1);
    const auto id = image.stem().string();
    if (!fs::exists(image)) throw std::runtime_error("sample '" + id + "': missing image " + image.string());
    if (!fs::exists(gt)) throw std::runtime_error("sample '" + id + "': missing edge map " + gt.string());
    entries.push_back({id, image.string(), gt.string()});
  }
  return entries;
}

}  // namespace

Dataset load_dataset(const std::string& root, DatasetLayout layout) {
  if (!fs::exists(root)) throw std::runtime_error("dataset root does not exist: " + root);
  auto entries = layout == DatasetLayout::kPairedPng ? paired_entries(root) : list_entries(root);
  std::vector<Dataset::Entry> usable;
  for (auto& e : entries) {
    const auto image = try_read_rgb(e.image_path);
    const auto gt = try_read_gray(e.gt_path);
    if (!image || !gt) {
      std::cerr << "warning: skipping unreadable sample '" << e.id << "'\n";
      continue;
    }
    if (image->size(1) != gt->size(1) || image->size(2) != gt->size(2))
      throw std::runtime_error("sample '" + e.id + "': image is " + std::to_string(image->size(1)) + "x" +
                               std::to_string(image->size(2)) + " but edge map is " + std::to_string(gt->size(1)) +
                               "x" + std::to_string(gt->size(2)));
    usable.push_back(std::move(e));
  }
  if (usable.empty()) throw std::runtime_error("no readable samples under " + root);
  return Dataset(std::move(usable));
}

void AugmentationPolicy::validate() const {
  if (crop_size <= 0 || crop_size % 4 != 0) throw std::invalid_argument("crop_size must be a positive multiple of 4");
  if (random_scale && scales.empty()) throw std::invalid_argument("scale set must not be empty");
  for (double s : scales)
    if (!(s > 0.0)) throw std::invalid_argument("scales must be positive");
}

Sample flip_horizontal(const Sample& s) { return {s.image.flip({-1}), s.gt.flip({-1}), s.id}; }

Sample flip_vertical(const Sample& s) { return {s.image.flip({-2}), s.gt.flip({-2}), s.id}; }

Sample rescale(const Sample& s, double factor) {
  if (factor == 1.0) return s;
  const auto h = std::max<int64_t>(1, std::llround(s.image.size(1) * factor));
  const auto w = std::max<int64_t>(1, std::llround(s.image.size(2) * factor));
  Sample out;
  out.id = s.id;
  out.image = F::interpolate(s.image.unsqueeze(0), F::InterpolateFuncOptions()
                                                       .size(std::vector<int64_t>{h, w})
                                                       .mode(torch::kBilinear)
                                                       .align_corners(false))[0]
                  .clamp(0.0, 1.0);
  out.gt = F::adaptive_max_pool2d(s.gt.unsqueeze(0), F::AdaptiveMaxPool2dFuncOptions({h, w}))[0];
  return out;
}

Sample pad_reflect(const Sample& s, int64_t size) {
  Sample out = s;
  while (out.image.size(1) < size || out.image.size(2) < size) {
    const auto h = out.image.size(1), w = out.image.size(2);
    const auto need_h = std::min(std::max<int64_t>(0, size - h), 2 * (h - 1));
    const auto need_w = std::min(std::max<int64_t>(0, size - w), 2 * (w - 1));
    if (need_h == 0 && need_w == 0 && (h < size || w < size)) {
      // Single-pixel dimension: reflection is undefined, replicate instead.
      const std::vector<int64_t> pad = {0, std::max<int64_t>(0, size - w), 0, std::max<int64_t>(0, size - h)};
      auto opts = F::PadFuncOptions(pad).mode(torch::kReplicate);
      out.image = F::pad(out.image.unsqueeze(0), opts)[0];
      out.gt = F::pad(out.gt.unsqueeze(0), opts)[0];
      break;
    }
    const std::vector<int64_t> pad = {need_w / 2, need_w - need_w / 2, need_h / 2, need_h - need_h / 2};
    auto opts = F::PadFuncOptions(pad).mode(torch::kReflect);
    out.image = F::pad(out.image.unsqueeze(0), opts)[0];
    out.gt = F::pad(out.gt.unsqueeze(0), opts)[0];
  }
  return out;
}

Sample crop(const Sample& s, int64_t top, int64_t left, int64_t size) {
  return {s.image.slice(1, top, top + size).slice(2, left, left + size).contiguous(),
          s.gt.slice(1, top, top + size).slice(2, left, left + size).contiguous(), s.id};
}

Sample augment(const Sample& s, const AugmentationPolicy& policy, at::Generator& gen) {
  policy.validate();
  // One draw vector keeps the number of generator calls fixed per sample.
  const auto u = torch::rand({5}, gen, torch::kFloat64);
  const auto draw = [&](int i) { return u[i].item<double>(); };
  Sample out = s;
  if (policy.random_flip && draw(0) < 0.5) out = flip_horizontal(out);
  if (policy.random_flip && draw(1) < 0.5) out = flip_vertical(out);
  if (policy.random_scale) {
    const auto k = std::min(policy.scales.size() - 1, static_cast<size_t>(draw(2) * policy.scales.size()));
    out = rescale(out, policy.scales[k]);
  }
  out = pad_reflect(out, policy.crop_size);
  const auto max_top = out.image.size(1) - policy.crop_size;
  const auto max_left = out.image.size(2) - policy.crop_size;
  const auto top = std::min(max_top, static_cast<int64_t>(draw(3) * static_cast<double>(max_top + 1)));
  const auto left = std::min(max_left, static_cast<int64_t>(draw(4) * static_cast<double>(max_left + 1)));
  return crop(out, top, left, policy.crop_size);
}

namespace {

struct Shape {
  bool ellipse = true;
  double cx = 0, cy = 0, rx = 0, ry = 0, angle = 0;
  std::vector<std::pair<double, double>> poly;
  std::array<double, 3> color{};

  bool contains(double x, double y) const {
    if (ellipse) {
      const double dx = x - cx, dy = y - cy;
      const double ca = std::cos(angle), sa = std::sin(angle);
      const double u = (ca * dx + sa * dy) / rx;
      const double v = (-sa * dx + ca * dy) / ry;
      return u * u + v * v <= 1.0;
    }
    bool inside = false;
    for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      const auto [xi, yi] = poly[i];
      const auto [xj, yj] = poly[j];
      if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
    }
    return inside;
  }
};

Sample render_sample(int64_t size, std::mt19937_64& rng, const SyntheticOptions& opt, const std::string& id) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = static_cast<double>(size);

  std::array<double, 3> bg{};
  for (auto& c : bg) c = 0.15 + 0.7 * unit(rng);

  // Low-frequency texture: a few random plane waves per channel.
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::array<std::vector<Wave>, 3> waves;
  for (auto& ch : waves) {
    for (int k = 0; k < 3; ++k) {
      const double freq = 2.0 * std::numbers::pi * (1.0 + 5.0 * unit(rng)) / s;
      const double dir = std::numbers::pi * unit(rng);
      ch.push_back({freq * std::cos(dir), freq * std::sin(dir), 2.0 * std::numbers::pi * unit(rng),
                    opt.texture_amplitude / 3.0});
    }
  }

  std::uniform_int_distribution<int> shape_count(opt.min_shapes, opt.max_shapes);
  const int n_shapes = shape_count(rng);
  std::vector<std::array<double, 3>> used{bg};
  std::vector<Shape> shapes;
  for (int k = 0; k < n_shapes; ++k) {
    Shape sh;
    sh.ellipse = unit(rng) < 0.5;
    sh.cx = (0.15 + 0.7 * unit(rng)) * s;
    sh.cy = (0.15 + 0.7 * unit(rng)) * s;
    if (sh.ellipse) {
      sh.rx = (0.08 + 0.22 * unit(rng)) * s;
      sh.ry = (0.08 + 0.22 * unit(rng)) * s;
      sh.angle = std::numbers::pi * unit(rng);
    } else {
      const int verts = 3 + static_cast<int>(unit(rng) * 5.0);
      const double radius = (0.12 + 0.2 * unit(rng)) * s;
      std::vector<double> angles(static_cast<size_t>(verts));
      for (auto& a : angles) a = 2.0 * std::numbers::pi * unit(rng);
      std::sort(angles.begin(), angles.end());
      for (double a : angles) {
        const double r = radius * (0.5 + 0.5 * unit(rng));
        sh.poly.emplace_back(sh.cx + r * std::cos(a), sh.cy + r * std::sin(a));
      }
    }
    for (int attempt = 0; attempt < 200; ++attempt) {
      for (auto& c : sh.color) c = 0.05 + 0.9 * unit(rng);
      bool distinct = true;
      for (const auto& u : used) {
        double diff = 0.0;
        for (int ch = 0; ch < 3; ++ch) diff = std::max(diff, std::abs(u[static_cast<size_t>(ch)] - sh.color[static_cast<size_t>(ch)]));
        if (diff < opt.min_contrast) distinct = false;
      }
      if (distinct) break;
    }
    used.push_back(sh.color);
    shapes.push_back(std::move(sh));
  }

  auto top_label = [&](double x, double y) {
    for (size_t k = shapes.size(); k-- > 0;)
      if (shapes[k].contains(x, y)) return static_cast<int>(k) + 1;
    return 0;
  };

  std::normal_distribution<double> noise(0.0, opt.pixel_noise);
  auto image = torch::zeros({3, size, size}, torch::kFloat32);
  auto acc = image.accessor<float, 3>();
  std::vector<int> labels(static_cast<size_t>(size * size));
  constexpr int kSuper = 4;
  for (int64_t r = 0; r < size; ++r) {
    for (int64_t c = 0; c < size; ++c) {
      labels[static_cast<size_t>(r * size + c)] = top_label(c + 0.5, r + 0.5);
      std::array<double, 3> sum{};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double x = c + (sx + 0.5) / kSuper, y = r + (sy + 0.5) / kSuper;
          const int lab = top_label(x, y);
          for (size_t ch = 0; ch < 3; ++ch) {
            double v;
            if (lab == 0) {
              v = bg[ch];
              for (const auto& w : waves[ch]) v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
            } else {
              v = shapes[static_cast<size_t>(lab - 1)].color[ch];
            }
            sum[ch] += v;
          }
        }
      }
      for (size_t ch = 0; ch < 3; ++ch) {
        const double v = sum[ch] / (kSuper * kSuper) + noise(rng);
        acc[static_cast<int64_t>(ch)][r][c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  auto boundary = torch::zeros({size, size}, torch::kBool);
  auto b = boundary.accessor<bool, 2>();
  auto label = [&](int64_t r, int64_t c) { return labels[static_cast<size_t>(r * size + c)]; };
  for (int64_t r = 0; r < size; ++r) {
    for (int64_t c = 0; c < size; ++c) {
      const bool right = c + 1 < size && label(r, c) != label(r, c + 1);
      const bool down = r + 1 < size && label(r, c) != label(r + 1, c);
      b[r][c] = right || down;
    }
  }
  Sample out;
  out.id = id;
  out.image = image;
  out.gt = thin_binary(boundary).to(torch::kFloat32).unsqueeze(0);
  return out;
}

}  // namespace

std::vector<Sample> generate_synthetic(int n, int64_t size, uint64_t seed, const SyntheticOptions& options) {
  if (size <= 0 || size % 4 != 0) throw std::invalid_argument("synthetic size must be a positive multiple of 4");
  if (n < 0) throw std::invalid_argument("synthetic sample count must be >= 0");
  if (options.min_shapes < 1 || options.max_shapes < options.min_shapes)
    throw std::invalid_argument("synthetic shape count range is invalid");
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(i)};
    std::mt19937_64 rng(seq);
    std::ostringstream id;
    id << "synth_" << std::setw(5) << std::setfill('0') << i;
    out.push_back(render_sample(size, rng, options, id.str()));
  }
  return out;
}

void write_paired_png(const std::vector<Sample>& samples, const std::string& root) {
  const fs::path base(root);
  fs::create_directories(base / "images");
  fs::create_directories(base / "edges");
  for (const auto& s : samples) {
    write_rgb_png((base / "images" / (s.id + ".png")).string(), s.image);
    write_gray_png((base / "edges" / (s.id + ".png")).string(), s.gt);
  }
}

}  // namespace diffedge
