#include <gtest/gtest.h>

#include "diffedge/diffusion.hpp"
#include "diffedge/fft_filter.hpp"

using namespace diffedge;

namespace {
const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);
const auto kC128 = torch::TensorOptions().dtype(torch::kComplexDouble);
}  // namespace

TEST(FFTFilter, HalfSpectrumShape) {
  EXPECT_EQ(half_spectrum_shape(3, 8, 10), (std::vector<int64_t>{3, 8, 6}));
  EXPECT_EQ(half_spectrum_shape(2, 5, 7), (std::vector<int64_t>{2, 5, 4}));
}

TEST(FFTFilter, ZeroWeightsAreIdentity) {
  auto gen = make_generator(0);
  const auto f = torch::randn({2, 3, 8, 10}, gen, kF64);
  EXPECT_TRUE(torch::equal(adaptive_fft_filter(f, torch::zeros({3, 8, 6}, kC128)), f));
}

TEST(FFTFilter, UnitWeightsDouble) {
  auto gen = make_generator(1);
  for (const auto& shape : {std::vector<int64_t>{2, 3, 8, 10}, std::vector<int64_t>{1, 2, 7, 9}}) {
    const auto f = torch::randn(shape, gen, kF64);
    const auto w = torch::ones(half_spectrum_shape(shape[1], shape[2], shape[3]), kC128);
    const auto y = adaptive_fft_filter(f, w);
    EXPECT_LE(((y - 2 * f).abs().max() / (2 * f).abs().max()).item<double>(), 1e-5);
  }
}

TEST(FFTFilter, DcBinAddsChannelMean) {
  auto gen = make_generator(2);
  const auto f = torch::randn({2, 3, 8, 10}, gen, kF64);
  auto w = torch::zeros({3, 8, 6}, kC128);
  w.select(1, 0).select(1, 0).fill_(1.0);
  const auto y = adaptive_fft_filter(f, w);
  EXPECT_LE((y - (f + f.mean({2, 3}, true))).abs().max().item<double>(), 1e-5);
}

TEST(FFTFilter, BranchIsLinear) {
  auto gen = make_generator(3);
  const auto w = torch::complex(torch::randn({3, 6, 4}, gen, kF64), torch::randn({3, 6, 4}, gen, kF64));
  const auto f1 = torch::randn({2, 3, 6, 6}, gen, kF64);
  const auto f2 = torch::randn({2, 3, 6, 6}, gen, kF64);
  const auto mix = 2.0 * f1 - 0.5 * f2;
  const auto lhs = adaptive_fft_filter(mix, w) - mix;
  const auto rhs = 2.0 * (adaptive_fft_filter(f1, w) - f1) - 0.5 * (adaptive_fft_filter(f2, w) - f2);
  EXPECT_LE((lhs - rhs).abs().max().item<double>(), 1e-5);
}

TEST(FFTFilter, OutputIsReal) {
  auto gen = make_generator(4);
  const auto w = torch::complex(torch::randn({2, 4, 3}, gen, kF64), torch::randn({2, 4, 3}, gen, kF64));
  const auto y = adaptive_fft_filter(torch::randn({1, 2, 4, 4}, gen, kF64), w);
  EXPECT_FALSE(y.is_complex());
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 2, 4, 4}));
}

TEST(FFTFilter, UnbatchedInput) {
  auto gen = make_generator(5);
  const auto f = torch::randn({3, 8, 8}, gen, kF64);
  const auto w = torch::ones({3, 8, 5}, kC128);
  EXPECT_TRUE(torch::allclose(adaptive_fft_filter(f, w), 2 * f, 1e-9, 1e-9));
}

TEST(FFTFilter, ShapeMismatchThrows) {
  const auto f = torch::zeros({1, 3, 8, 8});
  EXPECT_THROW(adaptive_fft_filter(f, torch::zeros({3, 8, 8}, torch::kComplexFloat)), std::invalid_argument);
  EXPECT_THROW(adaptive_fft_filter(f, torch::zeros({2, 8, 5}, torch::kComplexFloat)), std::invalid_argument);
}

TEST(FFTFilterModule, StartsAsIdentityAndLearns) {
  AdaptiveFFTFilter filter(3, 8, 8);
  EXPECT_EQ(filter->raw_weights().sizes(), (std::vector<int64_t>{3, 8, 5, 2}));
  EXPECT_TRUE(filter->complex_weights().is_complex());
  auto gen = make_generator(6);
  const auto x = torch::randn({2, 3, 8, 8}, gen, torch::kFloat32);
  EXPECT_TRUE(torch::equal(filter(x), x));
  const auto target = torch::randn({2, 3, 8, 8}, gen, torch::kFloat32);
  (filter(x) - target).square().sum().backward();
  const auto g = filter->raw_weights().grad();
  ASSERT_TRUE(g.defined());
  // Real parts of every bin receive a gradient.
  EXPECT_GT(g.select(-1, 0).abs().min().item<double>(), 0.0);
}
