#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int status = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(DIFFEDGE_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

}  // namespace

TEST(Cli, SelftestPasses) {
  const auto r = run("selftest");
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("0 failed"), std::string::npos) << r.output;
}

TEST(Cli, UnknownFlagIsUsageError) {
  const auto r = run("selftest --frobnicate");
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.output.rfind("error: ", 0), 0u) << r.output;
}

TEST(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(run("").status, 2); }

TEST(Cli, StrideLargerThanWindowIsUsageError) {
  diffedge::testutil::TempDir dir("cli_stride");
  const auto r = run("predict --checkpoint " + dir.str() + " --input " + dir.str() + " --output " + (dir / "o") +
                     " --window 320 --stride 400");
  EXPECT_EQ(r.status, 2) << r.output;
  EXPECT_NE(r.output.find("stride"), std::string::npos) << r.output;
  EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 1) << r.output;
}

TEST(Cli, SynthDataWritesPairs) {
  diffedge::testutil::TempDir dir("cli_synth");
  const auto r = run("synth-data --n 5 --size 32 --out " + (dir / "data") + " --seed 3");
  ASSERT_EQ(r.status, 0) << r.output;
  int images = 0, edges = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "data" / "images")) images += e.is_regular_file();
  for (const auto& e : fs::directory_iterator(dir.path() / "data" / "edges")) edges += e.is_regular_file();
  EXPECT_EQ(images, 5);
  EXPECT_EQ(edges, 5);
}

TEST(Cli, InvalidConfigIsUsageError) {
  diffedge::testutil::TempDir dir("cli_cfg");
  run("synth-data --n 2 --size 32 --out " + (dir / "data"));
  std::ofstream(dir / "cfg.json") << R"({"loss": {"lambda": -1}})";
  const auto r = run("train-ae --data " + (dir / "data") + " --run " + (dir / "run") + " --config " + (dir / "cfg.json"));
  EXPECT_EQ(r.status, 2) << r.output;
  EXPECT_NE(r.output.find("lambda"), std::string::npos);
  const auto unknown = run("train-ae --data " + (dir / "data") + " --run " + (dir / "run") + " --set train.bogus=1");
  EXPECT_EQ(unknown.status, 2);
  EXPECT_NE(unknown.output.find("train.bogus"), std::string::npos);
}

TEST(Cli, EndToEndTinyPipeline) {
  diffedge::testutil::TempDir dir("cli_e2e");
  ASSERT_EQ(run("synth-data --n 4 --size 32 --out " + (dir / "data")).status, 0);
  const std::string sets =
      " --set train.crop=32 --set inference.window=32 --set inference.stride=24 --set autoencoder.base_width=4"
      " --set denoiser.base_width=8 --set denoiser.cond_width=4 --set denoiser.time_dim=16 --set ae_train.epochs=1"
      " --set ae_train.batch_size=2 --set train.batch_size=2 --set train.iterations=2 --set inference.steps=1";
  const auto ae = run("train-ae --data " + (dir / "data") + " --run " + (dir / "run") + sets);
  ASSERT_EQ(ae.status, 0) << ae.output;
  const auto diff = run("train-diffusion --data " + (dir / "data") + " --run " + (dir / "run") + sets);
  ASSERT_EQ(diff.status, 0) << diff.output;
  EXPECT_TRUE(fs::exists(dir.path() / "run" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir.path() / "run" / "net_ema_2.ckpt"));
  const auto mismatch = run("train-diffusion --data " + (dir / "data") + " --run " + (dir / "run") + sets +
                            " --set train.iterations=3");
  EXPECT_EQ(mismatch.status, 2) << mismatch.output;

  const auto pred = run("predict --checkpoint " + (dir / "run") + " --input " + (dir / "data/images") + " --output " +
                        (dir / "pred"));
  ASSERT_EQ(pred.status, 0) << pred.output;
  EXPECT_TRUE(fs::exists(dir.path() / "pred" / "timing.csv"));
  const auto eval = run("evaluate --pred " + (dir / "pred") + " --gt " + (dir / "data") + " --report " + (dir / "eval.txt"));
  ASSERT_EQ(eval.status, 0) << eval.output;
  EXPECT_NE(eval.output.find("seval_ods"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir.path() / "eval.txt.per_image.csv"));

  const auto missing = run("evaluate --pred " + (dir / "nowhere") + " --gt " + (dir / "data"));
  EXPECT_EQ(missing.status, 1);
}

TEST(Cli, PrintConfigShowsResolvedValues) {
  const auto r = run("print-config --set inference.steps=1");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("\"steps\": 1"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("\"lambda\": 1.1"), std::string::npos) << r.output;
}
