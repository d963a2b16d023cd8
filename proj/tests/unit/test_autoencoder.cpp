#include <gtest/gtest.h>

#include <cmath>

#include "diffedge/autoencoder.hpp"
#include "diffedge/datasets.hpp"
#include "diffedge/diffusion.hpp"
#include "diffedge/trainer.hpp"
#include "test_util.hpp"

using namespace diffedge;

TEST(Autoencoder, LatentShape) {
  torch::manual_seed(0);
  EdgeAutoencoder ae(testutil::tiny_autoencoder());
  const auto z = ae->encode(torch::zeros({2, 1, 64, 48}));
  EXPECT_EQ(z.sizes(), (std::vector<int64_t>{2, 4, 16, 12}));
  EXPECT_EQ(ae->decode(z).sizes(), (std::vector<int64_t>{2, 1, 64, 48}));
}

TEST(Autoencoder, PaperGeometry) {
  torch::manual_seed(0);
  EdgeAutoencoder ae(testutil::tiny_autoencoder());
  torch::NoGradGuard no_grad;
  const auto z = ae->encode(torch::zeros({1, 1, 320, 320}));
  EXPECT_EQ(z.sizes(), (std::vector<int64_t>{1, 4, 80, 80}));
  EXPECT_EQ(ae->decode(z).sizes(), (std::vector<int64_t>{1, 1, 320, 320}));
}

TEST(Autoencoder, DecodeRange) {
  torch::manual_seed(1);
  EdgeAutoencoder ae(testutil::tiny_autoencoder());
  auto gen = make_generator(1);
  const auto e = ae->decode(10.0 * torch::randn({3, 4, 8, 8}, gen, torch::kFloat32));
  EXPECT_GE(e.min().item<double>(), 0.0);
  EXPECT_LE(e.max().item<double>(), 1.0);
}

TEST(Autoencoder, Deterministic) {
  torch::manual_seed(2);
  EdgeAutoencoder ae(testutil::tiny_autoencoder());
  auto gen = make_generator(2);
  const auto e = torch::rand({2, 1, 16, 16}, gen, torch::kFloat32);
  EXPECT_TRUE(torch::equal(ae->encode(e), ae->encode(e)));
  const auto z = ae->encode(e);
  EXPECT_TRUE(torch::equal(ae->decode(z), ae->decode(z)));
}

TEST(Autoencoder, InputValidation) {
  EdgeAutoencoder ae(testutil::tiny_autoencoder());
  EXPECT_THROW(ae->encode(torch::zeros({1, 1, 10, 16})), std::invalid_argument);
  EXPECT_THROW(ae->encode(torch::zeros({1, 3, 16, 16})), std::invalid_argument);
  EXPECT_THROW(ae->decode(torch::zeros({1, 3, 4, 4})), std::invalid_argument);
  AutoencoderConfig bad;
  bad.latent_channels = 0;
  EXPECT_THROW(EdgeAutoencoder{bad}, std::invalid_argument);
}

TEST(Autoencoder, NormalizationScale) {
  EdgeAutoencoder ae(testutil::tiny_autoencoder());
  auto gen = make_generator(3);
  const auto e = torch::rand({1, 1, 16, 16}, gen, torch::kFloat32);
  ae->set_normalization_scale(2.5);
  EXPECT_DOUBLE_EQ(ae->normalization_scale(), 2.5);
  EXPECT_TRUE(torch::allclose(ae->encode(e), 2.5 * ae->encode_unscaled(e)));
  const auto z = ae->encode(e);
  EXPECT_TRUE(torch::allclose(ae->decode(z), torch::sigmoid(ae->decode_logits(z))));
  EXPECT_THROW(ae->set_normalization_scale(0.0), std::invalid_argument);
}

TEST(Autoencoder, FreezeDisablesGradients) {
  EdgeAutoencoder ae(testutil::tiny_autoencoder());
  ae->freeze();
  for (const auto& p : ae->parameters()) EXPECT_FALSE(p.requires_grad());
}

TEST(AutoencoderTraining, LossDecreasesAndScaleNormalizes) {
  torch::manual_seed(4);
  const auto samples = generate_synthetic(24, 32, 4);
  std::vector<torch::Tensor> corpus;
  for (const auto& s : samples) corpus.push_back(s.gt);
  AETrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.lr = 2e-3;
  cfg.seed = 4;
  auto result = train_autoencoder(corpus, testutil::tiny_autoencoder(), cfg, 32);
  ASSERT_EQ(result.epoch_losses.size(), 10u);
  EXPECT_LT(result.epoch_losses.back(), result.epoch_losses.front());
  for (size_t i = 1; i < result.epoch_losses.size(); ++i)
    EXPECT_LT(result.epoch_losses[i], result.epoch_losses[i - 1]) << "epoch " << i;

  torch::NoGradGuard no_grad;
  const auto held = generate_synthetic(16, 32, 99);
  std::vector<torch::Tensor> maps;
  for (const auto& s : held) maps.push_back(s.gt);
  const auto z = result.model->encode(torch::stack(maps));
  const auto spread = z.std().item<double>();
  EXPECT_GT(spread, 0.8);
  EXPECT_LT(spread, 1.2);
}

TEST(AutoencoderTraining, EmptyCorpusThrows) {
  EXPECT_THROW(train_autoencoder({}, testutil::tiny_autoencoder(), AETrainConfig{}, 32), std::invalid_argument);
}

TEST(Autoencoder, DensitySkipAddsChannelMeanToLogits) {
  auto cfg = testutil::tiny_autoencoder();
  cfg.density_gain = 0.0;
  torch::manual_seed(8);
  EdgeAutoencoder plain(cfg);
  cfg.density_gain = 2.5;
  torch::manual_seed(8);
  EdgeAutoencoder skip(cfg);
  plain->set_normalization_scale(1.6);
  skip->set_normalization_scale(1.6);
  torch::NoGradGuard no_grad;
  const auto z = torch::randn({2, 4, 3, 5});
  const auto diff = skip->decode_logits(z) - plain->decode_logits(z);
  const auto expected = (2.5 / 1.6) * z.mean(1, true).repeat_interleave(4, 2).repeat_interleave(4, 3);
  EXPECT_TRUE(torch::allclose(diff, expected, 1e-5, 1e-5));
  EXPECT_THROW(EdgeAutoencoder([] {
                 auto c = testutil::tiny_autoencoder();
                 c.density_gain = -1.0;
                 return c;
               }()),
               std::invalid_argument);
}

TEST(ReconstructionLoss, MatchesPerPixelOracle) {
  auto gen = make_generator(12);
  const auto logits = torch::randn({2, 1, 4, 4}, gen, torch::kFloat64);
  auto gt = torch::zeros({2, 1, 4, 4}, torch::kFloat64);
  gt.index_put_({0, 0, 1}, 1.0);  // 4 positives in image 0, none in image 1
  double plain = 0.0, balanced = 0.0;
  for (int64_t n = 0; n < 2; ++n) {
    const double pos = gt[n].sum().item<double>(), total = 16.0;
    const double alpha = 1.1 * pos / total, beta = (total - pos) / total;
    for (int64_t i = 0; i < 16; ++i) {
      const double x = logits[n].view(-1)[i].item<double>();
      const double p = 1.0 / (1.0 + std::exp(-x));
      const bool edge = gt[n].view(-1)[i].item<double>() > 0.5;
      plain += edge ? -std::log(p) : -std::log(1.0 - p);
      balanced += edge ? -beta * std::log(p) : -alpha * std::log(1.0 - p);
    }
  }
  EXPECT_NEAR(reconstruction_loss(logits, gt, 1.1, false).item<double>(), plain / 32.0, 1e-12);
  EXPECT_NEAR(reconstruction_loss(logits, gt, 1.1, true).item<double>(), balanced / 32.0, 1e-12);
}
