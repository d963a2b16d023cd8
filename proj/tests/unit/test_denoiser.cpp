#include <gtest/gtest.h>

#include "diffedge/denoiser.hpp"
#include "diffedge/diffusion.hpp"
#include "test_util.hpp"

using namespace diffedge;

namespace {

struct Inputs {
  torch::Tensor image, z, t;
};

Inputs random_inputs(int64_t n, int64_t size, uint64_t seed, torch::ScalarType dtype = torch::kFloat32) {
  auto gen = make_generator(seed);
  return {torch::rand({n, 3, size, size}, gen, dtype), torch::randn({n, 4, size / 4, size / 4}, gen, dtype),
          torch::rand({n}, gen, dtype) * 0.9 + 0.05};
}

}  // namespace

TEST(ConditionEncoder, PyramidGeometry) {
  torch::manual_seed(0);
  EdgeDenoiser net(testutil::tiny_denoiser(320));
  torch::NoGradGuard no_grad;
  const auto cond = net->encode_condition(torch::zeros({1, 3, 320, 320}));
  ASSERT_EQ(cond.levels.size(), 3u);
  EXPECT_EQ(cond.levels[0].sizes().slice(2), (std::vector<int64_t>{80, 80}));
  EXPECT_EQ(cond.levels[1].sizes().slice(2), (std::vector<int64_t>{40, 40}));
  EXPECT_EQ(cond.levels[2].sizes().slice(2), (std::vector<int64_t>{20, 20}));
  for (const auto& level : cond.levels) EXPECT_TRUE(torch::isfinite(level).all().item<bool>());
}

TEST(ConditionEncoder, DeterministicAndValidated) {
  torch::manual_seed(1);
  EdgeDenoiser net(testutil::tiny_denoiser());
  const auto in = random_inputs(2, 32, 1);
  const auto a = net->encode_condition(in.image), b = net->encode_condition(in.image);
  for (size_t i = 0; i < 3; ++i) EXPECT_TRUE(torch::equal(a.levels[i], b.levels[i]));
  EXPECT_THROW(net->encode_condition(torch::zeros({1, 3, 30, 32})), std::invalid_argument);
  EXPECT_THROW(net->encode_condition(torch::zeros({1, 1, 32, 32})), std::invalid_argument);
}

TEST(ConditionFeatures, SliceAndRepeat) {
  torch::manual_seed(2);
  EdgeDenoiser net(testutil::tiny_denoiser());
  const auto cond = net->encode_condition(random_inputs(3, 32, 2).image);
  const auto s = cond.slice(1, 3);
  EXPECT_EQ(s.levels[0].size(0), 2);
  EXPECT_TRUE(torch::equal(s.levels[2][0], cond.levels[2][1]));
  const auto r = cond.slice(0, 1).repeat(4);
  EXPECT_EQ(r.levels[1].size(0), 4);
  EXPECT_TRUE(torch::equal(r.levels[1][3], cond.levels[1][0]));
}

TEST(Denoiser, OutputShapes) {
  torch::manual_seed(3);
  EdgeDenoiser net(testutil::tiny_denoiser());
  const auto in = random_inputs(2, 32, 3);
  const auto out = net->denoise(in.z, in.t, net->encode_condition(in.image));
  EXPECT_EQ(out.f_pred.sizes(), in.z.sizes());
  EXPECT_EQ(out.n_pred.sizes(), in.z.sizes());
}

TEST(Denoiser, ScalarTimeBroadcasts) {
  torch::manual_seed(4);
  EdgeDenoiser net(testutil::tiny_denoiser());
  const auto in = random_inputs(2, 32, 4);
  const auto cond = net->encode_condition(in.image);
  const auto a = net->denoise(in.z, torch::tensor(0.3f), cond);
  const auto b = net->denoise(in.z, torch::full({2}, 0.3f), cond);
  EXPECT_TRUE(torch::allclose(a.f_pred, b.f_pred));
}

TEST(Denoiser, NonSquareLatent) {
  torch::manual_seed(5);
  auto cfg = testutil::tiny_denoiser();
  cfg.latent_height = 10;
  cfg.latent_width = 6;
  EdgeDenoiser net(cfg);
  auto gen = make_generator(5);
  const auto z = torch::randn({1, 4, 10, 6}, gen, torch::kFloat32);
  const auto out = net->denoise(z, torch::full({1}, 0.5f), net->encode_condition(torch::rand({1, 3, 40, 24}, gen)));
  EXPECT_EQ(out.f_pred.sizes(), z.sizes());
}

TEST(Denoiser, GeometryMismatchThrows) {
  EdgeDenoiser net(testutil::tiny_denoiser());
  const auto in = random_inputs(1, 32, 6);
  const auto cond = net->encode_condition(in.image);
  EXPECT_THROW(net->denoise(torch::zeros({1, 4, 4, 4}), in.t, cond), std::invalid_argument);
  EXPECT_THROW(net->denoise(torch::zeros({1, 3, 8, 8}), in.t, cond), std::invalid_argument);
}

TEST(Denoiser, ConditionSensitivity) {
  torch::manual_seed(7);
  EdgeDenoiser net(testutil::tiny_denoiser());
  const auto a = random_inputs(1, 32, 7);
  const auto b = random_inputs(1, 32, 8);
  const auto oa = net->denoise(a.z, a.t, net->encode_condition(a.image));
  const auto ob = net->denoise(a.z, a.t, net->encode_condition(b.image));
  EXPECT_GT((oa.f_pred - ob.f_pred).square().sum().item<double>(), 0.0);
  EXPECT_GT((oa.n_pred - ob.n_pred).square().sum().item<double>(), 0.0);
}

TEST(Denoiser, FilterIsTransparentAtInit) {
  torch::manual_seed(9);
  auto with_cfg = testutil::tiny_denoiser();
  auto without_cfg = with_cfg;
  without_cfg.use_fft_filter = false;
  EdgeDenoiser with(with_cfg), without(without_cfg);
  {
    torch::NoGradGuard no_grad;
    auto src = with->named_parameters();
    for (auto& p : without->named_parameters()) p.value().copy_(src[p.key()]);
  }
  EXPECT_EQ(with->parameters().size(), without->parameters().size() + 1);
  const auto in = random_inputs(2, 32, 9);
  const auto a = with->denoise(in.z, in.t, with->encode_condition(in.image));
  const auto b = without->denoise(in.z, in.t, without->encode_condition(in.image));
  EXPECT_TRUE(torch::equal(a.f_pred, b.f_pred));
  EXPECT_TRUE(torch::equal(a.n_pred, b.n_pred));
}

TEST(Denoiser, BottleneckFilterPlacement) {
  auto cfg = testutil::tiny_denoiser();
  cfg.fft_at_bottleneck = true;
  EdgeDenoiser net(cfg);
  int filters = 0;
  for (const auto& p : net->named_parameters())
    if (p.key().find("filter") != std::string::npos) ++filters;
  EXPECT_EQ(filters, 2);
  const auto in = random_inputs(1, 32, 10);
  EXPECT_EQ(net->denoise(in.z, in.t, net->encode_condition(in.image)).f_pred.sizes(), in.z.sizes());
}

TEST(Denoiser, EveryParameterReceivesGradient) {
  torch::manual_seed(11);
  EdgeDenoiser net(testutil::tiny_denoiser());
  const auto in = random_inputs(2, 32, 11);
  const auto out = net->denoise(in.z, in.t, net->encode_condition(in.image));
  (out.f_pred.square().sum() + out.n_pred.square().sum()).backward();
  for (const auto& p : net->named_parameters()) {
    ASSERT_TRUE(p.value().grad().defined()) << p.key();
    EXPECT_GT(p.value().grad().abs().sum().item<double>(), 0.0) << p.key();
  }
}

TEST(Denoiser, GradientMatchesFiniteDifferences) {
  torch::manual_seed(12);
  EdgeDenoiser net(testutil::tiny_denoiser());
  net->to(torch::kFloat64);
  auto gen = make_generator(12);
  {
    torch::NoGradGuard no_grad;
    // Move the FFT weights off zero so the filter branch is exercised.
    for (auto& p : net->named_parameters())
      if (p.key().find("filter") != std::string::npos) p.value().copy_(0.1 * torch::randn(p.value().sizes(), gen, torch::kFloat64));
  }
  const auto in = random_inputs(2, 32, 12, torch::kFloat64);
  const auto wf = torch::randn({2, 4, 8, 8}, gen, torch::kFloat64);
  const auto wn = torch::randn({2, 4, 8, 8}, gen, torch::kFloat64);
  const auto loss_fn = [&] {
    const auto out = net->denoise(in.z, in.t, net->encode_condition(in.image));
    return (out.f_pred * wf).sum() + (out.n_pred * wn).sum();
  };
  net->zero_grad();
  loss_fn().backward();

  auto named = net->named_parameters();
  std::vector<std::string> names;
  for (const auto& p : named) names.push_back(p.key());
  std::vector<std::string> picks = {"unet.trunk_filter.weights"};
  for (int k = 0; k < 5; ++k) picks.push_back(names[static_cast<size_t>(torch::randint(static_cast<int64_t>(names.size()), {1}, gen).item<int64_t>())]);
  for (const auto& name : picks) {
    auto param = named[name];
    const auto flat_index = torch::randint(param.numel(), {1}, gen).item<int64_t>();
    const double analytic = param.grad().view(-1)[flat_index].item<double>();
    const double h = 1e-6;
    double fd;
    {
      torch::NoGradGuard no_grad;
      auto flat = param.view(-1);
      const double orig = flat[flat_index].item<double>();
      flat[flat_index] = orig + h;
      const double up = loss_fn().item<double>();
      flat[flat_index] = orig - h;
      const double down = loss_fn().item<double>();
      flat[flat_index] = orig;
      fd = (up - down) / (2 * h);
    }
    const double scale = std::max({std::abs(analytic), std::abs(fd), 1e-6});
    EXPECT_LT(std::abs(analytic - fd) / scale, 1e-3) << name << "[" << flat_index << "] analytic " << analytic << " fd " << fd;
  }
}
