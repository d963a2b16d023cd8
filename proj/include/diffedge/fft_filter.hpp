#pragma once

#include <torch/torch.h>

namespace diffedge {

// Shape [C, H, W/2 + 1] of the real-input half spectrum of a [.., C, H, W] feature map.
std::vector<int64_t> half_spectrum_shape(int64_t channels, int64_t height, int64_t width);

// Residual spectral filter
//
//   F_o = F + IFFT(W o FFT(F))
//
// over the two spatial dimensions of `features` ([N, C, H, W] or [C, H, W]).
// `weights` is a complex tensor of shape [C, H, W/2 + 1] acting on the
// real-input half spectrum, so the output is real by construction. The
// imaginary parts of W on the self-conjugate bins (rows 0 and H/2 of columns 0
// and W/2) cannot influence a real output and are ignored.
//
// Throws std::invalid_argument when `weights` does not match the half spectrum.
torch::Tensor adaptive_fft_filter(const torch::Tensor& features, const torch::Tensor& weights);

// Learnable adaptive FFT filter bound to one feature-map geometry. The complex
// weights are stored as a real [C, H, W/2 + 1, 2] parameter and start at zero,
// so a fresh filter is the identity.
class AdaptiveFFTFilterImpl : public torch::nn::Module {
 public:
  AdaptiveFFTFilterImpl(int64_t channels, int64_t height, int64_t width);

  torch::Tensor forward(const torch::Tensor& features);

  // Complex view of the weights.
  torch::Tensor complex_weights() const;
  torch::Tensor& raw_weights() { return weights_; }

 private:
  torch::Tensor weights_;
};
TORCH_MODULE(AdaptiveFFTFilter);

}  // namespace diffedge
