#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ccdn/data.hpp"
#include "ccdn/trainer.hpp"

namespace ccdn::trainer {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ccdn_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<Example> toy_examples(std::size_t n) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto mix = data::mix_at_snr(data::synth_speech(0.6, 100 + i),
                                      data::white_noise(0.8, 200 + i), 0.0, 300 + i);
    out.push_back({"ex" + std::to_string(i), mix.noisy, mix.clean});
  }
  return out;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 2;
  c.steps_per_epoch = 2;
  c.crop_seconds = 0.5;
  c.seed = 3;
  return c;
}

TEST(Adam, TwoStepOracle) {
  std::deque<layers::Parameter> params{{"w", {1}, {1.0}}};
  OptimState st;
  st.lr = 0.1;
  st.m = {{0.0}};
  st.v = {{0.0}};
  adam_step(params, {{0.5}}, st);
  // The first bias-corrected step has magnitude lr for any nonzero gradient.
  EXPECT_NEAR(params[0].value[0], 0.900000002, 1e-15);
  adam_step(params, {{-0.25}}, st);
  EXPECT_NEAR(params[0].value[0], 0.8733662987078463, 1e-12);
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, RejectsNonFiniteWithoutUpdating) {
  std::deque<layers::Parameter> params{{"a", {2}, {1.0, 2.0}}, {"b", {1}, {3.0}}};
  OptimState st;
  st.m = {{0, 0}, {0}};
  st.v = {{0, 0}, {0}};
  EXPECT_THROW(adam_step(params, {{0.1, 0.1}, {NAN}}, st), NonFiniteError);
  EXPECT_EQ(params[0].value, (std::vector<Real>{1.0, 2.0}));
  EXPECT_EQ(st.step, 0u);
  EXPECT_THROW(adam_step(params, {{0.1}, {0.1}}, st), ShapeError);
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
  std::vector<std::vector<Real>> g{{3.0}, {4.0}};
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[1][0], 0.8, 1e-15);
  std::vector<std::vector<Real>> h{{3.0}, {4.0}};
  EXPECT_DOUBLE_EQ(clip_grad_norm(h, 0.0), 5.0);
  EXPECT_EQ(h[0][0], 3.0);
}

TEST(Schedule, HalvesEveryEpoch) {
  EXPECT_EQ(lr_for_epoch(1e-3, 0), 1e-3);
  EXPECT_EQ(lr_for_epoch(1e-3, 1), 5e-4);
  EXPECT_EQ(lr_for_epoch(1e-3, 3), 0.000125);
}

TEST(TrainConfig, MapRoundTripAndValidation) {
  TrainConfig c = quick_config();
  c.lr = 0.1 + 0.2;  // not representable in short decimal
  TrainConfig d;
  d.apply(c.to_map());
  EXPECT_EQ(d.to_map(), c.to_map());
  EXPECT_EQ(d.lr, c.lr);
  EXPECT_THROW(d.apply({{"train.lr", "fast"}}), std::invalid_argument);
  EXPECT_THROW(d.apply({{"train.bogus", "1"}}), std::invalid_argument);
  d.beta1 = 1.0;
  EXPECT_THROW(d.validate(), std::invalid_argument);
}

TEST(Crop, DeterministicAndPadded) {
  const auto ex = toy_examples(1)[0];
  const auto a = crop(ex, 4000, 1, 0, 0), b = crop(ex, 4000, 1, 0, 0);
  EXPECT_EQ(a.noisy.samples, b.noisy.samples);
  EXPECT_EQ(a.noisy.size(), 4000u);
  const auto padded = crop(ex, ex.clean.size() + 100, 1, 0, 0);
  EXPECT_EQ(padded.clean.samples.back(), 0.0);
  EXPECT_EQ(padded.clean.samples[0], ex.clean.samples[0]);
}

TEST(TrainStep, ReducesLossOnRepeatedExample) {
  auto cfg = quick_config();
  auto s = TrainState::fresh(blocks::ModelConfig::toy(), cfg);
  const auto ex = crop(toy_examples(1)[0], 8000, 0, 0, 0);
  const Real first = train_step(*s.model, s.optim, ex, cfg).loss;
  Real last = first;
  for (int i = 0; i < 4; ++i) last = train_step(*s.model, s.optim, ex, cfg).loss;
  EXPECT_LT(last, first);
}

TEST(Checkpoint, BitwiseRoundTrip) {
  auto s = TrainState::fresh(blocks::ModelConfig::toy(), quick_config());
  const auto ex = crop(toy_examples(1)[0], 8000, 0, 0, 0);
  train_step(*s.model, s.optim, ex, s.config);
  s.step = 1;
  s.rng.next();
  const auto bytes = serialize(s);
  const auto back = deserialize(bytes);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(back.step, 1u);
  EXPECT_EQ(back.optim.step, 1u);
  const auto& p0 = s.model->parameters().params();
  const auto& p1 = back.model->parameters().params();
  ASSERT_EQ(p0.size(), p1.size());
  for (std::size_t i = 0; i < p0.size(); ++i) EXPECT_EQ(p0[i].value, p1[i].value);
  EXPECT_EQ(back.optim.m, s.optim.m);
}

std::vector<std::uint8_t> rechecksum(std::vector<std::uint8_t> b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
  for (std::size_t i = 0; i + 8 < b.size(); ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  for (int i = 0; i < 8; ++i) b[b.size() - 8 + i] = static_cast<std::uint8_t>(h >> (8 * i));
  return b;
}

TEST(Checkpoint, RejectsCorruptionAndVersionMismatch) {
  auto s = TrainState::fresh(blocks::ModelConfig::toy(), quick_config());
  const auto bytes = serialize(s);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 1;
  EXPECT_THROW(deserialize(flipped), CheckpointError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize(magic), CheckpointError);
  auto version = bytes;
  version[8] = 2;  // u32 version follows the 8-byte magic
  version = rechecksum(version);
  try {
    deserialize(version);
    FAIL() << "version 2 accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  EXPECT_THROW(deserialize(std::span<const std::uint8_t>(bytes).first(20)), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), CheckpointError);
}

TEST(Train, ZeroEpochsWritesOnlyInitialCheckpoint) {
  const auto dir = scratch("zero_epochs");
  auto cfg = quick_config();
  cfg.epochs = 0;
  auto s = TrainState::fresh(blocks::ModelConfig::toy(), cfg);
  EXPECT_TRUE(train(s, toy_examples(2), dir).empty());
  EXPECT_TRUE(fs::exists(dir / "epoch_0.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "last.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "epoch_1.ckpt"));
  std::ifstream log(dir / "train_log.csv");
  std::string header, extra;
  std::getline(log, header);
  EXPECT_EQ(header, kLogHeader);
  EXPECT_FALSE(std::getline(log, extra));
  fs::remove_all(dir);
}

TEST(Train, DeterministicAcrossRuns) {
  const auto examples = toy_examples(3);
  std::vector<std::vector<TrainLogRow>> runs;
  std::vector<std::string> logs;
  for (int r = 0; r < 2; ++r) {
    const auto dir = scratch("det" + std::to_string(r));
    auto s = TrainState::fresh(blocks::ModelConfig::toy(), quick_config());
    train(s, examples, dir);
    std::ifstream in(dir / "train_log.csv");
    logs.emplace_back(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    fs::remove_all(dir);
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(std::count(logs[0].begin(), logs[0].end(), '\n'), 5);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto examples = toy_examples(3);
  const auto straight_dir = scratch("straight");
  auto straight = TrainState::fresh(blocks::ModelConfig::toy(), quick_config());
  const auto all = train(straight, examples, straight_dir);
  ASSERT_EQ(all.size(), 4u);

  const auto split_dir = scratch("split");
  auto first_cfg = quick_config();
  first_cfg.epochs = 1;
  auto first = TrainState::fresh(blocks::ModelConfig::toy(), first_cfg);
  train(first, examples, split_dir);
  auto resumed = load_checkpoint(split_dir / "last.ckpt");
  EXPECT_EQ(resumed.epoch, 1u);
  resumed.config.epochs = 2;
  const auto rest = train(resumed, examples, split_dir);
  ASSERT_EQ(rest.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(rest[i].loss, all[2 + i].loss);
    EXPECT_EQ(rest[i].step, all[2 + i].step);
    EXPECT_EQ(rest[i].lr, 5e-4);
  }
  EXPECT_EQ(serialize(load_checkpoint(split_dir / "last.ckpt")),
            serialize(load_checkpoint(straight_dir / "last.ckpt")));
  fs::remove_all(straight_dir);
  fs::remove_all(split_dir);
}

TEST(Adam, ZeroGradientLeavesParametersAndAdvancesStep) {
  std::deque<layers::Parameter> params{{"w", {3}, {0.5, -1.0, 2.0}}};
  OptimState st;
  st.m = {{0, 0, 0}};
  st.v = {{0, 0, 0}};
  adam_step(params, {{0.0, 0.0, 0.0}}, st);
  EXPECT_EQ(params[0].value, (std::vector<Real>{0.5, -1.0, 2.0}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepFromZeroIsMinusLr) {
  std::deque<layers::Parameter> params{{"w", {1}, {0.0}}};
  OptimState st;
  st.m = {{0.0}};
  st.v = {{0.0}};
  adam_step(params, {{1.0}}, st);
  EXPECT_NEAR(params[0].value[0], -st.lr, 1e-10);
}

TEST(Adam, TwoIdenticalStepsOracle) {
  // Reference: the bias-corrected recurrence evaluated in Python floats.
  std::deque<layers::Parameter> params{{"w", {1}, {0.5}}};
  OptimState st;
  st.lr = 0.01;
  st.m = {{0.0}};
  st.v = {{0.0}};
  adam_step(params, {{0.3}}, st);
  EXPECT_NEAR(params[0].value[0], 0.4900000003333333, 1e-15);
  adam_step(params, {{0.3}}, st);
  EXPECT_NEAR(params[0].value[0], 0.4800000006666667, 1e-15);
}

}  // namespace
}  // namespace ccdn::trainer
