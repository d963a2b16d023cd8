#include "diffedge/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <filesystem>
#include <stdexcept>

namespace diffedge {

namespace {

void ensure_parent(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

torch::Tensor mat_to_tensor(const cv::Mat& m) {
  cv::Mat contiguous = m.isContinuous() ? m : m.clone();
  auto t = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, contiguous.channels()}, torch::kUInt8)
               .clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

}  // namespace

std::optional<torch::Tensor> try_read_rgb(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) return std::nullopt;
  auto t = mat_to_tensor(bgr);
  return t.flip({0}).contiguous();  // BGR -> RGB
}

torch::Tensor read_rgb(const std::string& path) {
  auto t = try_read_rgb(path);
  if (!t) throw std::runtime_error("cannot read image " + path);
  return *t;
}

std::optional<torch::Tensor> try_read_gray(const std::string& path) {
  cv::Mat gray = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (gray.empty()) return std::nullopt;
  return mat_to_tensor(gray);
}

torch::Tensor read_gray(const std::string& path) {
  auto t = try_read_gray(path);
  if (!t) throw std::runtime_error("cannot read edge map " + path);
  return *t;
}

torch::Tensor quantize_u8(const torch::Tensor& map) {
  auto m = map.dim() == 3 ? map[0] : map;
  return m.to(torch::kFloat64).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).contiguous();
}

void write_gray_png(const std::string& path, const torch::Tensor& map) {
  if (!(map.dim() == 2 || (map.dim() == 3 && map.size(0) == 1)))
    throw std::invalid_argument("write_gray_png expects [H, W] or [1, H, W]");
  auto q = quantize_u8(map);
  cv::Mat m(static_cast<int>(q.size(0)), static_cast<int>(q.size(1)), CV_8UC1, q.data_ptr<uint8_t>());
  ensure_parent(path);
  if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write " + path);
}

void write_rgb_png(const std::string& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw std::invalid_argument("write_rgb_png expects [3, H, W]");
  auto q = image.to(torch::kFloat64).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
  auto hwc = q.flip({0}).permute({1, 2, 0}).contiguous();  // RGB -> BGR
  cv::Mat m(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<uint8_t>());
  ensure_parent(path);
  if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write " + path);
}

}  // namespace diffedge
