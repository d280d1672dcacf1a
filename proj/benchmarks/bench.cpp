#include <benchmark/benchmark.h>

#include "ccdn/blocks.hpp"
#include "ccdn/data.hpp"
#include "ccdn/trainer.hpp"

namespace {

using namespace ccdn;

std::vector<Real> values(std::size_t n, std::uint64_t seed) {
  layers::Rng rng(seed);
  std::vector<Real> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// A desk-width frequency conv over 2 s of frames.
void BM_ConvForwardBackward(benchmark::State& state) {
  const auto spec = layers::ConvSpec::conv2d(16, 16, {1, 8}, {1, 2}, {0, 3});
  const Shape in{16, 124, 257};
  const auto x = values(numel(in), 1);
  const auto w = values(numel(spec.weight_shape()), 2);
  for (auto _ : state) {
    ad::Tape t;
    auto xv = t.leaf(in, x, true);
    auto y = layers::conv(xv, t.leaf(spec.weight_shape(), w, true), ad::Var{}, spec);
    benchmark::DoNotOptimize(ad::backward(ad::sum(y), t));
  }
}
BENCHMARK(BM_ConvForwardBackward)->Unit(benchmark::kMillisecond);

void BM_StftRoundTrip(benchmark::State& state) {
  const auto w = data::synth_speech(static_cast<Real>(state.range(0)), 3);
  const dsp::StftConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(dsp::istft(dsp::stft(w, cfg), cfg, w.size()));
  }
}
BENCHMARK(BM_StftRoundTrip)->Arg(2)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_DeskTrainStep(benchmark::State& state) {
  trainer::TrainConfig tc;
  auto s = trainer::TrainState::fresh(blocks::ModelConfig::desk(), tc);
  const auto mix = data::mix_at_snr(data::synth_speech(2.0, 4), data::white_noise(3.0, 5), 0.0, 6);
  const trainer::Example ex{"bench", mix.noisy, mix.clean};
  for (auto _ : state) {
    benchmark::DoNotOptimize(trainer::train_step(*s.model, s.optim, ex, tc));
  }
}
BENCHMARK(BM_DeskTrainStep)->Unit(benchmark::kMillisecond)->Iterations(3);

void BM_DeskEnhance(benchmark::State& state) {
  blocks::Ccdn model(blocks::ModelConfig::desk());
  const auto w = data::synth_speech(2.0, 7);
  for (auto _ : state) benchmark::DoNotOptimize(model.enhance(w));
}
BENCHMARK(BM_DeskEnhance)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
