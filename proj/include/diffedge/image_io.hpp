#pragma once

// PNG/JPEG I/O for images and edge maps as float tensors in [0, 1].

#include <torch/torch.h>

#include <optional>
#include <string>

namespace diffedge {

// [3, H, W] RGB in [0, 1]. Grayscale files are replicated to three channels.
// Returns std::nullopt when the file cannot be decoded.
std::optional<torch::Tensor> try_read_rgb(const std::string& path);
torch::Tensor read_rgb(const std::string& path);

// [1, H, W] in [0, 1] (8-bit values divided by 255; colour files are converted to gray).
std::optional<torch::Tensor> try_read_gray(const std::string& path);
torch::Tensor read_gray(const std::string& path);

// Writes an 8-bit grayscale PNG with values round(v * 255), v clamped to [0, 1].
// Accepts [H, W] or [1, H, W].
void write_gray_png(const std::string& path, const torch::Tensor& map);

// Writes an 8-bit RGB PNG from a [3, H, W] tensor in [0, 1].
void write_rgb_png(const std::string& path, const torch::Tensor& image);

// round(v * 255) as uint8, [H, W].
torch::Tensor quantize_u8(const torch::Tensor& map);

}  // namespace diffedge
