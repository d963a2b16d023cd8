#pragma once

// Image / edge-label pairs: on-disk loading, geometric augmentation and the
// synthetic geometric-shapes corpus used for desk-scale runs.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace diffedge {

struct Sample {
  torch::Tensor image;  // [3, H, W] in [0, 1]
  torch::Tensor gt;     // [1, H, W] in [0, 1]
  std::string id;
};

enum class DatasetLayout {
  kPairedPng,  // root/images/{id}.png + root/edges/{id}.png
  kListFile,   // text file of tab-separated image and gt paths, relative to the file
};

DatasetLayout parse_layout(const std::string& name);

// Lazily loaded sample collection. Construction resolves and probes every
// pair; undecodable pairs are skipped with a warning on stderr.
class Dataset {
 public:
  struct Entry {
    std::string id;
    std::string image_path;
    std::string gt_path;
  };

  explicit Dataset(std::vector<Entry> entries) : entries_(std::move(entries)) {}

  size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  Sample get(size_t index) const;
  std::vector<Sample> load_all() const;

  // Stable content hash of every file (FNV-1a over ids and bytes).
  std::string fingerprint() const;

 private:
  std::vector<Entry> entries_;
};

// Throws std::runtime_error for a missing root, a missing pair member
// (naming the file), mismatched image/gt dimensions (naming the id) or when
// every pair is unreadable.
Dataset load_dataset(const std::string& root, DatasetLayout layout);

struct AugmentationPolicy {
  bool random_flip = true;
  bool random_scale = true;
  std::vector<double> scales = {0.5, 1.0, 1.5};
  int64_t crop_size = 320;

  void validate() const;
};

// Geometric helpers; the same transform is applied to image and gt.
Sample flip_horizontal(const Sample& s);
Sample flip_vertical(const Sample& s);
// Image: bilinear. Ground truth: adaptive max pooling so one-pixel edges survive downscaling.
Sample rescale(const Sample& s, double factor);
// Reflective padding up to at least `size` in both dimensions.
Sample pad_reflect(const Sample& s, int64_t size);
Sample crop(const Sample& s, int64_t top, int64_t left, int64_t size);

// Random flip, random scale, then a uniformly placed crop_size x crop_size crop
// (reflective padding first when the image is too small).
Sample augment(const Sample& s, const AugmentationPolicy& policy, at::Generator& gen);

struct SyntheticOptions {
  int min_shapes = 2;
  int max_shapes = 6;
  double min_contrast = 0.2;   // per-channel max difference between overlapping regions
  double texture_amplitude = 0.06;
  double pixel_noise = 0.02;
};

// Renders `n` samples of `size` x `size` pixels: 2-6 anti-aliased ellipses or
// polygons with distinct fills over a textured background. The ground truth is
// the one-pixel boundary of the region label map. Sample i depends only on
// (seed, i). Throws std::invalid_argument unless size is divisible by 4.
std::vector<Sample> generate_synthetic(int n, int64_t size, uint64_t seed, const SyntheticOptions& options = {});

// Writes samples in the paired_png layout under `root`.
void write_paired_png(const std::vector<Sample>& samples, const std::string& root);

}  // namespace diffedge
