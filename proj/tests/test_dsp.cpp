#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <complex>
#include <numbers>

#include "ccdn/dsp.hpp"
#include "ccdn/gradcheck.hpp"
#include "test_util.hpp"

namespace ccdn::dsp {
namespace {

using testing::random_values;

Waveform random_wave(std::size_t n, std::uint64_t seed) {
  return Waveform{random_values(n, seed, -0.5, 0.5)};
}

TEST(Hann, PeriodicValues) {
  auto w = hann_window(4);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_NEAR(w[0], 0.0, 1e-15);
  EXPECT_NEAR(w[1], 0.5, 1e-15);
  EXPECT_NEAR(w[2], 1.0, 1e-15);
  EXPECT_NEAR(w[3], 0.5, 1e-15);
  EXPECT_THROW(hann_window(1), std::invalid_argument);
}

TEST(StftConfig, Validation) {
  EXPECT_NO_THROW(StftConfig{}.validate());
  EXPECT_EQ(StftConfig{}.bins(), 257u);
  EXPECT_THROW((StftConfig{500, 250}.validate()), std::invalid_argument);
  EXPECT_THROW((StftConfig{512, 200}.validate()), std::invalid_argument);
  EXPECT_THROW((StftConfig{512, 0}.validate()), std::invalid_argument);
}

TEST(Stft, FrameCountAndShortInput) {
  StftConfig cfg;
  EXPECT_EQ(frame_count(512, cfg), 1u);
  EXPECT_EQ(frame_count(513, cfg), 2u);
  EXPECT_EQ(frame_count(768, cfg), 2u);
  EXPECT_EQ(frame_count(32000, cfg), 124u);
  EXPECT_THROW(frame_count(511, cfg), SignalTooShort);
  EXPECT_THROW(stft(Waveform{std::vector<Real>(100, 0.0)}), SignalTooShort);
}

TEST(Stft, MatchesDirectDft) {
  const StftConfig cfg;
  const auto w = random_wave(1024, 1);
  const auto s = stft(w, cfg);
  const auto win = hann_window(cfg.fft_size);
  const std::size_t n = cfg.fft_size;
  Real worst = 0.0;
  for (std::size_t t : {std::size_t{0}, std::size_t{2}}) {
    for (std::size_t f : {std::size_t{0}, std::size_t{1}, std::size_t{77}, std::size_t{256}}) {
      std::complex<Real> acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const Real ang = -2.0 * std::numbers::pi * static_cast<Real>(f * k) / n;
        acc += win[k] * w.samples[t * cfg.hop + k] * std::polar(1.0, ang);
      }
      worst = std::max(worst, std::abs(acc - std::complex<Real>(s.re(t, f), s.im(t, f))));
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Stft, ImpulseGivesWindowPhaseRamp) {
  // x = delta at sample 256 lands at window index 256 (weight 1) of frame 0.
  Waveform w{std::vector<Real>(512, 0.0)};
  w.samples[256] = 1.0;
  const auto s = stft(w);
  for (std::size_t f = 0; f < 257; ++f) {
    const Real sign = f % 2 == 0 ? 1.0 : -1.0;  // e^{-j pi f}
    EXPECT_NEAR(s.re(0, f), sign, 1e-12);
    EXPECT_NEAR(s.im(0, f), 0.0, 1e-12);
  }
}

TEST(Stft, SinusoidPeaksAtItsBin) {
  Waveform w;
  for (std::size_t i = 0; i < 16000; ++i) {  // one second
    w.samples.push_back(std::sin(2.0 * std::numbers::pi * 16.0 * static_cast<Real>(i) / 512.0));
  }
  const auto s = stft(w);
  const auto mp = mag_phase(s);
  for (std::size_t t = 0; t < s.frames() - 1; ++t) {
    std::size_t best = 0;
    for (std::size_t f = 0; f < s.bins(); ++f) {
      if (mp.magnitude[t * s.bins() + f] > mp.magnitude[t * s.bins() + best]) best = f;
    }
    EXPECT_EQ(best, 16u);
    // A unit sinusoid through a periodic Hann of length N has peak N/4.
    EXPECT_NEAR(mp.magnitude[t * s.bins() + 16], 128.0, 1e-9);
  }
}

TEST(Istft, RoundTripInterior) {
  const StftConfig cfg;
  const auto w = random_wave(16000, 2);
  const auto start = std::chrono::steady_clock::now();
  const auto back = istft(stft(w, cfg), cfg, w.size());
  const Real secs =
      std::chrono::duration<Real>(std::chrono::steady_clock::now() - start).count();
  ASSERT_EQ(back.size(), w.size());
  Real worst = 0.0;
  for (std::size_t i = cfg.fft_size; i + cfg.fft_size < w.size(); ++i) {
    worst = std::max(worst, std::abs(back.samples[i] - w.samples[i]));
  }
  EXPECT_LT(worst, 1e-6);
  EXPECT_LT(secs, 1.0);
  EXPECT_EQ(back.samples[0], 0.0);
}

TEST(Istft, RejectsBadInput) {
  const StftConfig cfg;
  ComplexSpectrogram s(3, 257);
  EXPECT_THROW(istft(s, cfg, 3 * 256 + 512), ShapeError);
  ComplexSpectrogram wrong(3, 100);
  EXPECT_THROW(istft(wrong, cfg, 600), ShapeError);
  s.re(0, 0) = NAN;
  EXPECT_THROW(istft(s, cfg, 600), NonFiniteError);
}

TEST(MagPhase, ThreeFour) {
  ComplexSpectrogram s(1, 2);
  s.re(0, 0) = 3.0;
  s.im(0, 0) = 4.0;
  const auto mp = mag_phase(s);
  EXPECT_DOUBLE_EQ(mp.magnitude[0], 5.0);
  EXPECT_DOUBLE_EQ(mp.phase[0], std::atan2(4.0, 3.0));
  EXPECT_EQ(mp.magnitude[1], 0.0);
  EXPECT_EQ(mp.phase[1], 0.0);
}

TEST(ComplexSpectrogram, PlanarRoundTrip) {
  ComplexSpectrogram s(2, 3, random_values(12, 3));
  const auto p = s.planar();
  EXPECT_DOUBLE_EQ(p[0], s.re(0, 0));
  EXPECT_DOUBLE_EQ(p[6], s.im(0, 0));
  EXPECT_DOUBLE_EQ(p[5], s.re(1, 2));
  EXPECT_EQ(ComplexSpectrogram::from_planar(2, 3, p).data(), s.data());
  EXPECT_THROW(ComplexSpectrogram(2, 3, std::vector<Real>(5)), ShapeError);
}

TEST(IstftVar, MatchesPlainAndHasExactGradient) {
  const StftConfig cfg{16, 8};
  const auto w = random_wave(64, 4);
  const auto s = stft(w, cfg);
  const auto plain = istft(s, cfg, 60);
  ad::Tape tape;
  auto v = istft(tape.constant({2, s.frames(), s.bins()}, s.planar()), cfg, 60);
  ASSERT_EQ(v.size(), 60u);
  for (std::size_t i = 0; i < 60; ++i) EXPECT_NEAR(v.value()[i], plain.samples[i], 1e-12);

  EXPECT_LT(testing::max_grad_error(
                [&](ad::Tape&, ad::Var x) { return istft(x, cfg, 60); },
                {2, s.frames(), s.bins()}, s.planar()),
            1e-6);
}

TEST(Hann, StartsAtZeroAndPeaksAtCenter) {
  for (std::size_t n : {2u, 8u, 64u, 512u, 1000u}) {
    const auto w = hann_window(n);
    EXPECT_EQ(w[0], 0.0) << n;
    EXPECT_NEAR(w[n / 2], 1.0, 1e-15) << n;
    for (Real v : w) EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(hann_window(7)[0], 0.0);
}

TEST(Stft, ZeroWaveformAndZeroSpectrogram) {
  const auto s = stft(Waveform{std::vector<Real>(2048, 0.0)});
  for (Real v : s.data()) EXPECT_EQ(v, 0.0);
  const auto w = istft(ComplexSpectrogram(7, 257), StftConfig{}, 7 * 256 + 256);
  for (Real v : w.samples) EXPECT_EQ(v, 0.0);
}

TEST(Stft, ImpulseAtFirstSampleMatchesDirectDft) {
  // Only frame 0 covers sample 0, where the window is zero.
  Waveform w{std::vector<Real>(1024, 0.0)};
  w.samples[0] = 1.0;
  const auto s = stft(w);
  const auto win = hann_window(512);
  for (std::size_t t = 0; t < s.frames(); ++t) {
    for (std::size_t f = 0; f < s.bins(); ++f) {
      const Real expected = t == 0 ? win[0] : 0.0;
      EXPECT_NEAR(s.re(t, f), expected, 1e-15);
      EXPECT_NEAR(s.im(t, f), 0.0, 1e-15);
    }
  }
}

TEST(Istft, ChirpRoundTrip) {
  const StftConfig cfg;
  Waveform w;
  const Real fs = 16000.0, dur = 2.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(fs * dur); ++i) {
    const Real t = static_cast<Real>(i) / fs;
    // 100 Hz to 7 kHz linear sweep.
    w.samples.push_back(0.5 * std::sin(2.0 * std::numbers::pi * (100.0 * t + 0.5 * 3450.0 * t * t)));
  }
  const auto back = istft(stft(w, cfg), cfg, w.size());
  Real worst = 0.0;
  for (std::size_t i = cfg.fft_size; i + cfg.fft_size < w.size(); ++i) {
    worst = std::max(worst, std::abs(back.samples[i] - w.samples[i]));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(MagPhase, UnitCircleAndOrigin) {
  ComplexSpectrogram s(1, 3);
  s.re(0, 0) = 3.0;
  s.im(0, 0) = 4.0;
  s.re(0, 2) = 1.0;
  const auto mp = mag_phase(s);
  EXPECT_NEAR(std::cos(mp.phase[0]), 0.6, 1e-15);
  EXPECT_NEAR(std::sin(mp.phase[0]), 0.8, 1e-15);
  EXPECT_EQ(mp.magnitude[1], 0.0);
  EXPECT_EQ(mp.phase[1], 0.0);
  EXPECT_EQ(mp.magnitude[2], 1.0);
  EXPECT_EQ(mp.phase[2], 0.0);
}

}  // namespace
}  // namespace ccdn::dsp
