#pragma once

// Boundary-benchmark style evaluation: NMS thinning, tolerance-radius pixel
// matching, threshold sweeps, ODS/OIS with (SEval) and without (CEval)
// thinning post-processing, and Average Crispness.

#include <torch/torch.h>

#include <string>
#include <vector>

namespace diffedge {

// Identifies the pixel matcher in every report.
inline constexpr const char* kMatcherVersion = "greedy-ascending-distance/1";

enum class Protocol { kSEval, kCEval, kBoth };

struct MatchConfig {
  // Matching radius as a fraction of the image diagonal (0.011 for NYUD-style sets).
  double max_dist_frac = 0.0075;
  // Number of binarization levels, uniform in (0, 1): k / (thresholds + 1).
  int thresholds = 99;
  // Ground-truth pixels at or above this value count as edges.
  double gt_threshold = 0.5;

  void validate() const;
  std::vector<double> threshold_levels() const;
};

struct MatchCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
};

struct PRPoint {
  double threshold = 0.0;
  int64_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f = 0.0;
};

// Fills precision, recall and F from the counts. An empty prediction (or
// ground-truth) set gives precision (recall) 0, as in the BSDS tools.
PRPoint make_pr_point(double threshold, const MatchCounts& counts);
double f_measure(double precision, double recall);

struct ImageScores {
  std::string id;
  double ac = 1.0;
  double best_threshold_seval = 0.0, best_f_seval = 0.0;
  double best_threshold_ceval = 0.0, best_f_ceval = 0.0;
};

struct EvalReport {
  std::string matcher = kMatcherVersion;
  double max_dist_frac = 0.0;
  double ods_seval = 0.0, ois_seval = 0.0, ods_threshold_seval = 0.0;
  double ods_ceval = 0.0, ois_ceval = 0.0, ods_threshold_ceval = 0.0;
  double mean_ac = 0.0;
  bool has_seval = false, has_ceval = false;
  std::vector<PRPoint> curve_seval, curve_ceval;
  std::vector<ImageScores> images;
};

// Morphological thinning of a binary [H, W] map to a one-pixel skeleton
// (two-subiteration parallel thinning, iterated to convergence; pixels outside
// the image count as background). Returns a bool tensor.
torch::Tensor thin_binary(const torch::Tensor& mask);

// Per-pixel edge normal angle (radians) from the structure tensor of
// Gaussian-derivative gradients (sigma = 1 px).
torch::Tensor edge_normal_angle(const torch::Tensor& edges);

// Non-maximum suppression along the edge normal with bilinear neighbours,
// followed by thinning of the surviving support. Survivors keep their value.
torch::Tensor nms_thin(const torch::Tensor& edges);

// sum(nms_thin(e)) / sum(e); 1 for an all-zero map.
double average_crispness(const torch::Tensor& edges);

// One-to-one matching of binary maps within `max_dist` pixels, greedy in
// ascending pair distance (ties: prediction raster order, then offset order).
MatchCounts match_edges(const torch::Tensor& pred_binary, const torch::Tensor& gt_binary, double max_dist);

// Matching radius in pixels for an image of the given size.
double match_radius(const MatchConfig& cfg, int64_t height, int64_t width);

// Evaluates aligned prediction / ground-truth maps ([H, W] or [1, H, W]).
// Throws std::invalid_argument for empty or misaligned input.
EvalReport evaluate(const std::vector<torch::Tensor>& preds, const std::vector<torch::Tensor>& gts,
                    const MatchConfig& cfg, Protocol protocol, const std::vector<std::string>& ids = {});

// Writes `path` as key=value lines, plus `<path>.per_image.csv` and `<path>.pr_curve.csv`.
void write_report(const EvalReport& report, const std::string& path);

std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& name);

}  // namespace diffedge
