#include "diffedge/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <stdexcept>

namespace diffedge {

namespace {

// Row-major float image detached from torch.
struct Plane {
  int64_t rows = 0, cols = 0;
  std::vector<float> v;

  float& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  float at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
  float clamped(int64_t r, int64_t c) const {
    return at(std::clamp<int64_t>(r, 0, rows - 1), std::clamp<int64_t>(c, 0, cols - 1));
  }
};

torch::Tensor as_2d(const torch::Tensor& x) {
  if (x.dim() == 2) return x;
  if (x.dim() == 3 && x.size(0) == 1) return x[0];
  if (x.dim() == 4 && x.size(0) == 1 && x.size(1) == 1) return x[0][0];
  throw std::invalid_argument("expected a single-channel [H, W] map");
}

Plane to_plane(const torch::Tensor& x) {
  auto t = as_2d(x).to(torch::kFloat32).contiguous();
  Plane p;
  p.rows = t.size(0);
  p.cols = t.size(1);
  p.v.assign(t.data_ptr<float>(), t.data_ptr<float>() + t.numel());
  return p;
}

torch::Tensor from_plane(const Plane& p) {
  return torch::from_blob(const_cast<float*>(p.v.data()), {p.rows, p.cols}, torch::kFloat32).clone();
}

std::vector<uint8_t> to_mask(const torch::Tensor& x, int64_t& rows, int64_t& cols) {
  auto t = as_2d(x).ne(0).to(torch::kUInt8).contiguous();
  rows = t.size(0);
  cols = t.size(1);
  return {t.data_ptr<uint8_t>(), t.data_ptr<uint8_t>() + t.numel()};
}

std::vector<float> gaussian_kernel(double sigma, bool derivative) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> k(static_cast<size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += std::exp(-0.5 * i * i / (sigma * sigma));
  for (int i = -radius; i <= radius; ++i) {
    const double g = std::exp(-0.5 * i * i / (sigma * sigma)) / norm;
    k[static_cast<size_t>(i + radius)] = static_cast<float>(derivative ? -i / (sigma * sigma) * g : g);
  }
  return k;
}

// Separable correlation with replicated borders; `along_rows` filters along the column index.
Plane filter1d(const Plane& in, const std::vector<float>& k, bool along_cols) {
  Plane out{in.rows, in.cols, std::vector<float>(in.v.size())};
  const auto radius = static_cast<int64_t>(k.size() / 2);
  for (int64_t r = 0; r < in.rows; ++r) {
    for (int64_t c = 0; c < in.cols; ++c) {
      double acc = 0.0;
      for (int64_t i = -radius; i <= radius; ++i) {
        const float w = k[static_cast<size_t>(i + radius)];
        acc += w * (along_cols ? in.clamped(r, c + i) : in.clamped(r + i, c));
      }
      out.at(r, c) = static_cast<float>(acc);
    }
  }
  return out;
}

float bilinear(const Plane& p, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(p.rows - 1));
  c = std::clamp(c, 0.0, static_cast<double>(p.cols - 1));
  const auto r0 = static_cast<int64_t>(std::floor(r));
  const auto c0 = static_cast<int64_t>(std::floor(c));
  const auto r1 = std::min(r0 + 1, p.rows - 1);
  const auto c1 = std::min(c0 + 1, p.cols - 1);
  const double dr = r - r0, dc = c - c0;
  return static_cast<float>((1 - dr) * ((1 - dc) * p.at(r0, c0) + dc * p.at(r0, c1)) +
                            dr * ((1 - dc) * p.at(r1, c0) + dc * p.at(r1, c1)));
}

Plane orientation(const Plane& e) {
  const auto g = gaussian_kernel(1.0, false);
  const auto dg = gaussian_kernel(1.0, true);
  // d/dx: derivative along columns, smoothing along rows (and vice versa).
  const auto gx = filter1d(filter1d(e, g, false), dg, true);
  const auto gy = filter1d(filter1d(e, dg, false), g, true);
  Plane jxx = gx, jxy = gx, jyy = gy;
  for (size_t i = 0; i < e.v.size(); ++i) {
    jxx.v[i] = gx.v[i] * gx.v[i];
    jxy.v[i] = gx.v[i] * gy.v[i];
    jyy.v[i] = gy.v[i] * gy.v[i];
  }
  auto smooth = [&](const Plane& p) { return filter1d(filter1d(p, g, false), g, true); };
  jxx = smooth(jxx);
  jxy = smooth(jxy);
  jyy = smooth(jyy);
  Plane theta{e.rows, e.cols, std::vector<float>(e.v.size())};
  for (size_t i = 0; i < e.v.size(); ++i)
    theta.v[i] = static_cast<float>(0.5 * std::atan2(2.0 * jxy.v[i], static_cast<double>(jxx.v[i]) - jyy.v[i]));
  return theta;
}

// Neighbour bits p2..p9 as laid out in the thinning literature:
// x1 = E, x2 = NE, x3 = N, x4 = NW, x5 = W, x6 = SW, x7 = S, x8 = SE.
std::array<int, 9> neighbours(const std::vector<uint8_t>& m, int64_t rows, int64_t cols, int64_t r, int64_t c) {
  auto px = [&](int64_t rr, int64_t cc) -> int {
    if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) return 0;
    return m[static_cast<size_t>(rr * cols + cc)] ? 1 : 0;
  };
  return {0,
          px(r, c + 1),
          px(r - 1, c + 1),
          px(r - 1, c),
          px(r - 1, c - 1),
          px(r, c - 1),
          px(r + 1, c - 1),
          px(r + 1, c),
          px(r + 1, c + 1)};
}

bool thin_deletable(const std::array<int, 9>& x, bool first_pass) {
  auto X = [&](int i) { return x[static_cast<size_t>((i - 1) % 8 + 1)]; };
  int crossing = 0;
  for (int i = 1; i <= 4; ++i) crossing += (!X(2 * i - 1) && (X(2 * i) || X(2 * i + 1))) ? 1 : 0;
  if (crossing != 1) return false;
  int n1 = 0, n2 = 0;
  for (int k = 1; k <= 4; ++k) {
    n1 += (X(2 * k - 1) || X(2 * k)) ? 1 : 0;
    n2 += (X(2 * k) || X(2 * k + 1)) ? 1 : 0;
  }
  const int mn = std::min(n1, n2);
  if (mn < 2 || mn > 3) return false;
  if (first_pass) return ((X(2) || X(3) || !X(8)) && X(1)) == 0;
  return ((X(6) || X(7) || !X(4)) && X(5)) == 0;
}

}  // namespace

void MatchConfig::validate() const {
  if (!(max_dist_frac > 0.0)) throw std::invalid_argument("max_dist_frac must be > 0");
  if (thresholds < 1) throw std::invalid_argument("thresholds must be >= 1");
  if (!(gt_threshold > 0.0 && gt_threshold <= 1.0)) throw std::invalid_argument("gt_threshold must lie in (0, 1]");
}

std::vector<double> MatchConfig::threshold_levels() const {
  std::vector<double> levels(static_cast<size_t>(thresholds));
  for (int k = 0; k < thresholds; ++k) levels[static_cast<size_t>(k)] = (k + 1.0) / (thresholds + 1.0);
  return levels;
}

double f_measure(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

PRPoint make_pr_point(double threshold, const MatchCounts& counts) {
  PRPoint p;
  p.threshold = threshold;
  p.tp = counts.tp;
  p.fp = counts.fp;
  p.fn = counts.fn;
  const auto n_pred = counts.tp + counts.fp;
  const auto n_gt = counts.tp + counts.fn;
  p.precision = n_pred > 0 ? static_cast<double>(counts.tp) / static_cast<double>(n_pred) : 0.0;
  p.recall = n_gt > 0 ? static_cast<double>(counts.tp) / static_cast<double>(n_gt) : 0.0;
  p.f = f_measure(p.precision, p.recall);
  return p;
}

torch::Tensor thin_binary(const torch::Tensor& mask) {
  int64_t rows = 0, cols = 0;
  auto m = to_mask(mask, rows, cols);
  std::vector<size_t> remove;
  bool changed = true;
  while (changed) {
    changed = false;
    for (bool first : {true, false}) {
      remove.clear();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
          const auto idx = static_cast<size_t>(r * cols + c);
          if (m[idx] && thin_deletable(neighbours(m, rows, cols, r, c), first)) remove.push_back(idx);
        }
      }
      for (auto idx : remove) m[idx] = 0;
      changed = changed || !remove.empty();
    }
  }
  return torch::from_blob(m.data(), {rows, cols}, torch::kUInt8).to(torch::kBool);
}

torch::Tensor edge_normal_angle(const torch::Tensor& edges) { return from_plane(orientation(to_plane(edges))); }

torch::Tensor nms_thin(const torch::Tensor& edges) {
  const auto e = to_plane(edges);
  const auto theta = orientation(e);
  Plane kept{e.rows, e.cols, std::vector<float>(e.v.size(), 0.0f)};
  // Relative slack so ties on flat ridges survive interpolation rounding.
  constexpr double kSlack = 1e-4;
  for (int64_t r = 0; r < e.rows; ++r) {
    for (int64_t c = 0; c < e.cols; ++c) {
      const float v = e.at(r, c);
      if (v <= 0.0f) continue;
      const double th = theta.at(r, c);
      const double dc = std::cos(th), dr = std::sin(th);
      const float a = bilinear(e, r + dr, c + dc);
      const float b = bilinear(e, r - dr, c - dc);
      const double bar = v * (1.0 + kSlack);
      if (bar < a || bar < b) continue;
      kept.at(r, c) = v;
    }
  }
  auto support = thin_binary(from_plane(kept) > 0);
  return from_plane(kept) * support.to(torch::kFloat32);
}

double average_crispness(const torch::Tensor& edges) {
  const auto total = as_2d(edges).to(torch::kFloat64).sum().item<double>();
  if (total <= 0.0) return 1.0;
  const auto thinned = nms_thin(edges).to(torch::kFloat64).sum().item<double>();
  return std::clamp(thinned / total, 0.0, 1.0);
}

double match_radius(const MatchConfig& cfg, int64_t height, int64_t width) {
  return cfg.max_dist_frac * std::sqrt(static_cast<double>(height * height + width * width));
}

MatchCounts match_edges(const torch::Tensor& pred_binary, const torch::Tensor& gt_binary, double max_dist) {
  int64_t rows = 0, cols = 0, grows = 0, gcols = 0;
  auto pred = to_mask(pred_binary, rows, cols);
  auto gt = to_mask(gt_binary, grows, gcols);
  if (rows != grows || cols != gcols) throw std::invalid_argument("match_edges: maps differ in shape");

  // Offsets within the radius grouped by squared distance; within a group the
  // order is (dr, dc) lexicographic.
  const auto reach = static_cast<int64_t>(std::floor(max_dist));
  const double limit = max_dist * max_dist + 1e-9;
  std::map<int64_t, std::vector<std::pair<int64_t, int64_t>>> rings;
  for (int64_t dr = -reach; dr <= reach; ++dr)
    for (int64_t dc = -reach; dc <= reach; ++dc)
      if (static_cast<double>(dr * dr + dc * dc) <= limit) rings[dr * dr + dc * dc].emplace_back(dr, dc);

  std::vector<int64_t> pred_idx;
  for (int64_t i = 0; i < rows * cols; ++i)
    if (pred[static_cast<size_t>(i)]) pred_idx.push_back(i);
  int64_t n_gt = 0;
  for (auto g : gt) n_gt += g ? 1 : 0;

  std::vector<uint8_t> pred_used(pred.size(), 0), gt_used(gt.size(), 0);
  int64_t tp = 0;
  for (const auto& [d2, offsets] : rings) {
    for (auto p : pred_idx) {
      if (pred_used[static_cast<size_t>(p)]) continue;
      const auto r = p / cols, c = p % cols;
      for (const auto& [dr, dc] : offsets) {
        const auto rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
        const auto g = static_cast<size_t>(rr * cols + cc);
        if (gt[g] && !gt_used[g]) {
          gt_used[g] = 1;
          pred_used[static_cast<size_t>(p)] = 1;
          ++tp;
          break;
        }
      }
    }
  }
  return {tp, static_cast<int64_t>(pred_idx.size()) - tp, n_gt - tp};
}

namespace {

struct SweepResult {
  std::vector<MatchCounts> counts;  // per threshold
  double best_f = 0.0;
  double best_threshold = 0.0;
};

SweepResult sweep(const torch::Tensor& pred, const torch::Tensor& gt_binary, const MatchConfig& cfg) {
  SweepResult out;
  const auto levels = cfg.threshold_levels();
  const double radius = match_radius(cfg, pred.size(0), pred.size(1));
  for (double thr : levels) {
    const auto counts = match_edges(pred >= thr, gt_binary, radius);
    const auto point = make_pr_point(thr, counts);
    if (point.f > out.best_f || out.counts.empty()) {
      out.best_f = point.f;
      out.best_threshold = thr;
    }
    out.counts.push_back(counts);
  }
  return out;
}

void aggregate(const std::vector<SweepResult>& per_image, const MatchConfig& cfg, std::vector<PRPoint>& curve,
               double& ods, double& ods_threshold, double& ois) {
  const auto levels = cfg.threshold_levels();
  curve.clear();
  ods = 0.0;
  ods_threshold = levels.front();
  for (size_t k = 0; k < levels.size(); ++k) {
    MatchCounts sum;
    for (const auto& img : per_image) {
      sum.tp += img.counts[k].tp;
      sum.fp += img.counts[k].fp;
      sum.fn += img.counts[k].fn;
    }
    curve.push_back(make_pr_point(levels[k], sum));
    if (curve.back().f > ods) {
      ods = curve.back().f;
      ods_threshold = levels[k];
    }
  }
  double acc = 0.0;
  for (const auto& img : per_image) acc += img.best_f;
  ois = acc / static_cast<double>(per_image.size());
}

}  // namespace

EvalReport evaluate(const std::vector<torch::Tensor>& preds, const std::vector<torch::Tensor>& gts,
                    const MatchConfig& cfg, Protocol protocol, const std::vector<std::string>& ids) {
  cfg.validate();
  if (preds.empty()) throw std::invalid_argument("evaluate: no predictions");
  if (preds.size() != gts.size()) throw std::invalid_argument("evaluate: prediction and ground-truth counts differ");
  if (!ids.empty() && ids.size() != preds.size()) throw std::invalid_argument("evaluate: id count differs");

  EvalReport report;
  report.max_dist_frac = cfg.max_dist_frac;
  report.has_seval = protocol != Protocol::kCEval;
  report.has_ceval = protocol != Protocol::kSEval;

  std::vector<SweepResult> seval, ceval;
  double ac_sum = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto pred = as_2d(preds[i]).to(torch::kFloat32);
    const auto gt = as_2d(gts[i]).to(torch::kFloat32);
    if (!pred.sizes().equals(gt.sizes()))
      throw std::invalid_argument("evaluate: prediction and ground truth differ in shape at index " +
                                  std::to_string(i));
    const auto gt_binary = gt >= cfg.gt_threshold;
    ImageScores scores;
    scores.id = ids.empty() ? std::to_string(i) : ids[i];
    scores.ac = average_crispness(pred);
    ac_sum += scores.ac;
    if (report.has_seval) {
      seval.push_back(sweep(nms_thin(pred), gt_binary, cfg));
      scores.best_f_seval = seval.back().best_f;
      scores.best_threshold_seval = seval.back().best_threshold;
    }
    if (report.has_ceval) {
      ceval.push_back(sweep(pred, gt_binary, cfg));
      scores.best_f_ceval = ceval.back().best_f;
      scores.best_threshold_ceval = ceval.back().best_threshold;
    }
    report.images.push_back(scores);
  }
  report.mean_ac = ac_sum / static_cast<double>(preds.size());
  if (report.has_seval)
    aggregate(seval, cfg, report.curve_seval, report.ods_seval, report.ods_threshold_seval, report.ois_seval);
  if (report.has_ceval)
    aggregate(ceval, cfg, report.curve_ceval, report.ods_ceval, report.ods_threshold_ceval, report.ois_ceval);
  return report;
}

void write_report(const EvalReport& report, const std::string& path) {
  const std::filesystem::path out(path);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write report " + path);
    f << std::setprecision(6) << std::fixed;
    f << "matcher=" << report.matcher << '\n';
    f << "max_dist_frac=" << report.max_dist_frac << '\n';
    f << "images=" << report.images.size() << '\n';
    if (report.has_seval) {
      f << "ods_seval=" << report.ods_seval << '\n';
      f << "ods_threshold_seval=" << report.ods_threshold_seval << '\n';
      f << "ois_seval=" << report.ois_seval << '\n';
    }
    if (report.has_ceval) {
      f << "ods_ceval=" << report.ods_ceval << '\n';
      f << "ods_threshold_ceval=" << report.ods_threshold_ceval << '\n';
      f << "ois_ceval=" << report.ois_ceval << '\n';
    }
    f << "mean_ac=" << report.mean_ac << '\n';
  }
  {
    std::ofstream f(path + ".per_image.csv");
    f << std::setprecision(6) << std::fixed;
    f << "id,ac,best_f_seval,best_threshold_seval,best_f_ceval,best_threshold_ceval\n";
    for (const auto& img : report.images)
      f << img.id << ',' << img.ac << ',' << img.best_f_seval << ',' << img.best_threshold_seval << ','
        << img.best_f_ceval << ',' << img.best_threshold_ceval << '\n';
  }
  {
    std::ofstream f(path + ".pr_curve.csv");
    f << std::setprecision(6) << std::fixed;
    f << "protocol,threshold,tp,fp,fn,precision,recall,f\n";
    auto dump = [&](const char* name, const std::vector<PRPoint>& curve) {
      for (const auto& p : curve)
        f << name << ',' << p.threshold << ',' << p.tp << ',' << p.fp << ',' << p.fn << ',' << p.precision << ','
          << p.recall << ',' << p.f << '\n';
    };
    dump("seval", report.curve_seval);
    dump("ceval", report.curve_ceval);
  }
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kSEval: return "seval";
    case Protocol::kCEval: return "ceval";
    case Protocol::kBoth: return "both";
  }
  return "both";
}

Protocol parse_protocol(const std::string& name) {
  if (name == "seval" || name == "SEval") return Protocol::kSEval;
  if (name == "ceval" || name == "CEval") return Protocol::kCEval;
  if (name == "both") return Protocol::kBoth;
  throw std::invalid_argument("unknown protocol '" + name + "' (expected seval, ceval or both)");
}

}  // namespace diffedge
