#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "ccdn/data.hpp"
#include "ccdn/metrics.hpp"
#include "ccdn/trainer.hpp"
#include "cli.hpp"

namespace ccdn::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// One corpus and one toy checkpoint shared by the whole suite.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    // Per process: ctest runs each discovered test in its own process, possibly in parallel.
    root_ = fs::temp_directory_path() / ("ccdn_test_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    auto r = call({"make-corpus", "--out", (root_ / "corpus").string(), "--train", "2", "--val",
                   "1", "--test", "2", "--seconds", "1.0", "--seed", "4"});
    ASSERT_EQ(r.code, kOk) << r.err;
    r = call({"train", "--scale", "toy", "--manifest", manifest().string(), "--out",
              (root_ / "run").string(), "--epochs", "1", "--steps", "1", "--seed", "2"});
    ASSERT_EQ(r.code, kOk) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path manifest() { return root_ / "corpus" / "manifest.txt"; }
  static fs::path checkpoint() { return root_ / "run" / "last.ckpt"; }
  static fs::path noisy_wav() { return root_ / "corpus" / "noise" / "utt000.wav"; }

  static inline fs::path root_;
};

TEST_F(CliTest, TrainWritesCheckpointsAndLog) {
  EXPECT_TRUE(fs::exists(root_ / "run" / "epoch_0.ckpt"));
  EXPECT_TRUE(fs::exists(root_ / "run" / "epoch_1.ckpt"));
  EXPECT_FALSE(fs::exists(root_ / "run" / "TRAINING.partial"));
  std::istringstream log(slurp(root_ / "run" / "train_log.csv"));
  std::string header, row;
  std::getline(log, header);
  EXPECT_EQ(header, trainer::kLogHeader);
  ASSERT_TRUE(std::getline(log, row));
  EXPECT_EQ(row.rfind("0,1,", 0), 0u);
}

TEST_F(CliTest, EnhanceIsDeterministicAndPreservesLength) {
  const auto a = root_ / "a.wav", b = root_ / "b.wav";
  ASSERT_EQ(call({"enhance", "--checkpoint", checkpoint().string(), noisy_wav().string(),
                  a.string()})
                .code,
            kOk);
  ASSERT_EQ(call({"enhance", "--checkpoint", checkpoint().string(), noisy_wav().string(),
                  b.string()})
                .code,
            kOk);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(data::read_wav(a).size(), data::read_wav(noisy_wav()).size());
}

TEST_F(CliTest, EnhanceDefaultOutputName) {
  const auto dir = root_ / "named";
  ASSERT_EQ(call({"enhance", "--checkpoint", checkpoint().string(), "--out", dir.string(),
                  noisy_wav().string()})
                .code,
            kOk);
  EXPECT_TRUE(fs::exists(dir / "utt000_enhanced.wav"));
}

TEST_F(CliTest, SilentInputGivesNearSilentOutput) {
  const auto in = root_ / "zeros.wav", out = root_ / "zeros_out.wav";
  data::write_wav(in, dsp::Waveform{std::vector<Real>(16000, 0.0)});
  ASSERT_EQ(call({"enhance", "--checkpoint", checkpoint().string(), in.string(), out.string()})
                .code,
            kOk);
  const auto w = data::read_wav(out);
  ASSERT_EQ(w.size(), 16000u);
  EXPECT_LT(std::sqrt(data::power(w.samples)), 1e-2);
}

TEST_F(CliTest, EvaluateWithCheckpoint) {
  const auto dir = root_ / "eval";
  const auto r = call({"evaluate", "--checkpoint", checkpoint().string(), "--manifest",
                       manifest().string(), "--out", dir.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_TRUE(fs::exists(dir / "report.txt"));
  std::istringstream csv(slurp(dir / "report.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, metrics::kCsvHeader);
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 2u);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir / "enhanced"), fs::directory_iterator{}), 2);
}

TEST_F(CliTest, EvaluatePerfectEnhancementScoresOne) {
  const auto enh = root_ / "perfect";
  fs::create_directories(enh);
  const auto m = data::Manifest::load(manifest());
  for (const auto& e : m.split(data::Split::test)) {
    const auto ex = trainer::load_example(e);
    data::write_wav(enh / (ex.id + ".wav"), ex.clean);
  }
  const auto dir = root_ / "eval_perfect";
  const auto r = call({"evaluate", "--enhanced-dir", enh.string(), "--manifest",
                       manifest().string(), "--out", dir.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  std::istringstream csv(slurp(dir / "report.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::istringstream row(line);
    for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 6u);
    // PCM16 quantization of the clean reference is the only difference.
    EXPECT_NEAR(std::stod(cells[5]), 1.0, 1e-3) << line;
    EXPECT_GT(std::stod(cells[3]), 40.0) << line;
  }
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(call({}).code, kUsage);
  EXPECT_EQ(call({"bogus"}).code, kUsage);
  EXPECT_EQ(call({"info", "--no-such-flag"}).code, kUsage);
  EXPECT_EQ(call({"info", "--scale", "huge"}).code, kUsage);
  const auto missing = call({"train", "--manifest", "/nonexistent/m.txt", "--out",
                             (root_ / "x").string()});
  EXPECT_EQ(missing.code, kUsage);
  EXPECT_NE(missing.err.find("/nonexistent/m.txt"), std::string::npos);
  EXPECT_EQ(call({"evaluate", "--manifest", manifest().string(), "--out",
                  (root_ / "y").string()})
                .code,
            kUsage);
  EXPECT_EQ(call({"evaluate", "--manifest", manifest().string(), "--out", (root_ / "y").string(),
                  "--checkpoint", checkpoint().string(), "--enhanced-dir", root_.string()})
                .code,
            kUsage);
  EXPECT_EQ(call({"train", "--manifest", manifest().string(), "--out", (root_ / "z").string(),
                  "--checkpoint", checkpoint().string(), "--seed", "3"})
                .code,
            kUsage);
  EXPECT_EQ(call({"gradcheck", "--frames", "9"}).code, kUsage);
  EXPECT_EQ(call({"--help"}).code, kOk);
}

TEST_F(CliTest, CorruptCheckpointIsAFailureNotUsage) {
  const auto bad = root_ / "bad.ckpt";
  std::ofstream(bad) << "not a checkpoint";
  const auto r = call({"enhance", "--checkpoint", bad.string(), noisy_wav().string(),
                       (root_ / "never.wav").string()});
  EXPECT_EQ(r.code, kFailure);
  EXPECT_FALSE(fs::exists(root_ / "never.wav"));
}

TEST_F(CliTest, ConfigFileOverridesPreset) {
  const auto cfg = root_ / "small.conf";
  std::ofstream(cfg) << "# narrower mask block\nmb.channels = 8\nmb.heads = 2\n";
  const auto r = call({"info", "--scale", "desk", "--config", cfg.string(), "--frames", "4"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("channels 8/8/16"), std::string::npos) << r.out;
  std::ofstream(cfg) << "mb.channels = 8\nmb.channels = 4\n";
  EXPECT_EQ(call({"info", "--config", cfg.string()}).code, kUsage);
}

TEST(ParseKv, Basics) {
  const auto kv = parse_kv(" a = 1 \n# c\nb=x y\n", "t");
  EXPECT_EQ(kv.at("a"), "1");
  EXPECT_EQ(kv.at("b"), "x y");
  EXPECT_THROW(parse_kv("novalue\n", "t"), UsageError);
  EXPECT_THROW(parse_kv("= 3\n", "t"), UsageError);
}

TEST(Info, ReportsParameterCounts) {
  const auto desk = call({"info", "--scale", "desk", "--frames", "4"});
  ASSERT_EQ(desk.code, kOk);
  EXPECT_NE(desk.out.find("parameters 174805"), std::string::npos);
  const auto paper = call({"info", "--scale", "paper", "--frames", "4"});
  EXPECT_NE(paper.out.find("parameters 115312389"), std::string::npos);
}

TEST_F(CliTest, DeskInitialCheckpointIsSilentOnSilence) {
  const auto dir = root_ / "desk0";
  const auto r = call({"train", "--scale", "desk", "--manifest", manifest().string(), "--out",
                       dir.string(), "--epochs", "0"});
  ASSERT_EQ(r.code, kOk) << r.err;
  ASSERT_TRUE(fs::exists(dir / "last.ckpt"));
  const auto in = root_ / "desk_zeros.wav", out = root_ / "desk_zeros_out.wav";
  data::write_wav(in, dsp::Waveform{std::vector<Real>(16000, 0.0)});
  ASSERT_EQ(call({"enhance", "--checkpoint", (dir / "last.ckpt").string(), in.string(),
                  out.string()})
                .code,
            kOk);
  const auto w = data::read_wav(out);
  ASSERT_EQ(w.size(), 16000u);
  EXPECT_LT(std::sqrt(data::power(w.samples)), 1e-2);
}

TEST(Gradcheck, DeskScaleSucceeds) {
  const auto r = call({"gradcheck", "--scale", "desk"});
  EXPECT_EQ(r.code, kOk) << r.out << r.err;
}

TEST(Recipe, TinyOverfitMatchesLibraryAndDecreases) {
  const auto root = fs::temp_directory_path() / ("ccdn_test_recipe_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  data::write_wav(root / "clean.wav", data::synth_speech(2.0, 11));
  data::write_wav(root / "noise.wav", data::white_noise(3.0, 12));
  std::ofstream(root / "manifest.txt") << "clean.wav noise.wav 0 train 13\n";
  const fs::path recipe = fs::path(CCDN_SOURCE_DIR) / "recipes" / "tiny_overfit.conf";

  const auto r = call({"train", "--config", recipe.string(), "--manifest",
                       (root / "manifest.txt").string(), "--out", (root / "cli").string(),
                       "--steps", "20"});
  ASSERT_EQ(r.code, kOk) << r.err;

  Settings s = resolve(RunConfig{.config = recipe});
  EXPECT_EQ(s.model.scale, blocks::Scale::desk);
  EXPECT_EQ(s.train.steps_per_epoch, 200u);
  s.train.steps_per_epoch = 20;
  auto state = trainer::TrainState::fresh(s.model, s.train);
  const auto entry = data::Manifest::load(root / "manifest.txt").entries.at(0);
  const auto rows = trainer::train(state, {trainer::load_example(entry)}, root / "lib");

  EXPECT_EQ(slurp(root / "cli" / "train_log.csv"), slurp(root / "lib" / "train_log.csv"));
  ASSERT_EQ(rows.size(), 20u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(rows[i].loss, rows[i - 1].loss) << i;
  fs::remove_all(root);
}

}  // namespace
}  // namespace ccdn::cli
