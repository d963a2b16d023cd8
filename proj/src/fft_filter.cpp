#include "diffedge/fft_filter.hpp"

#include <sstream>
#include <stdexcept>

namespace diffedge {

std::vector<int64_t> half_spectrum_shape(int64_t channels, int64_t height, int64_t width) {
  return {channels, height, width / 2 + 1};
}

torch::Tensor adaptive_fft_filter(const torch::Tensor& features, const torch::Tensor& weights) {
  if (features.dim() < 3) throw std::invalid_argument("adaptive_fft_filter expects [.., C, H, W] features");
  const auto c = features.size(-3);
  const auto h = features.size(-2);
  const auto w = features.size(-1);
  const auto expected = half_spectrum_shape(c, h, w);
  if (!weights.is_complex() || weights.sizes().vec() != expected) {
    std::ostringstream msg;
    msg << "adaptive_fft_filter: weights must be complex with shape " << at::IntArrayRef(expected) << ", got "
        << weights.sizes() << (weights.is_complex() ? "" : " (real)");
    throw std::invalid_argument(msg.str());
  }
  auto spectrum = torch::fft::rfft2(features);
  auto filtered = torch::fft::irfft2(spectrum * weights, std::vector<int64_t>{h, w});
  return features + filtered;
}

AdaptiveFFTFilterImpl::AdaptiveFFTFilterImpl(int64_t channels, int64_t height, int64_t width) {
  auto shape = half_spectrum_shape(channels, height, width);
  shape.push_back(2);
  weights_ = register_parameter("weights", torch::zeros(shape));
}

torch::Tensor AdaptiveFFTFilterImpl::complex_weights() const { return torch::view_as_complex(weights_); }

torch::Tensor AdaptiveFFTFilterImpl::forward(const torch::Tensor& features) {
  auto w = weights_;
  if (features.scalar_type() != w.scalar_type()) w = w.to(features.scalar_type());
  return adaptive_fft_filter(features, torch::view_as_complex(w));
}

}  // namespace diffedge
