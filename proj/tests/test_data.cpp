#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ccdn/data.hpp"

namespace ccdn::data {
namespace {

namespace fs = std::filesystem;

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back(v >> 8);
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void tag(std::vector<std::uint8_t>& b, const char* t) { b.insert(b.end(), t, t + 4); }

// Canonical PCM16 mono file with an extra LIST chunk before the data.
std::vector<std::uint8_t> fixture(std::uint16_t channels = 1, std::uint32_t rate = 16000,
                                  std::uint16_t bits = 16) {
  std::vector<std::uint8_t> b;
  tag(b, "RIFF");
  put32(b, 0);  // patched below
  tag(b, "WAVE");
  tag(b, "fmt ");
  put32(b, 16);
  put16(b, 1);
  put16(b, channels);
  put32(b, rate);
  put32(b, rate * channels * bits / 8);
  put16(b, static_cast<std::uint16_t>(channels * bits / 8));
  put16(b, bits);
  tag(b, "LIST");
  put32(b, 3);
  b.insert(b.end(), {'a', 'b', 'c', 0});  // odd chunk plus pad byte
  tag(b, "data");
  put32(b, 8);
  for (std::int16_t s : {std::int16_t{0}, std::int16_t{16384}, std::int16_t{-32768},
                         std::int16_t{32767}}) {
    put16(b, static_cast<std::uint16_t>(s));
  }
  const auto size = static_cast<std::uint32_t>(b.size() - 8);
  for (int i = 0; i < 4; ++i) b[4 + i] = (size >> (8 * i)) & 0xff;
  return b;
}

TEST(Wav, DecodesFixture) {
  const auto w = decode_wav(fixture());
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w.sample_rate, 16000);
  EXPECT_EQ(w.samples[0], 0.0);
  EXPECT_EQ(w.samples[1], 0.5);
  EXPECT_EQ(w.samples[2], -1.0);
  EXPECT_EQ(w.samples[3], 32767.0 / 32768.0);
}

TEST(Wav, RejectsUnsupportedFormats) {
  EXPECT_THROW(decode_wav(fixture(2)), WavError);
  EXPECT_THROW(decode_wav(fixture(1, 8000)), WavError);
  EXPECT_THROW(decode_wav(fixture(1, 16000, 8)), WavError);
  auto truncated = fixture();
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_wav(truncated), WavError);
  std::vector<std::uint8_t> junk(40, 0);
  EXPECT_THROW(decode_wav(junk), WavError);
}

TEST(Wav, EncodeMatchesFixtureLayoutAndRoundTrips) {
  const dsp::Waveform w{{0.0, 0.5, -1.0, 32767.0 / 32768.0}};
  const auto bytes = encode_wav(w);
  EXPECT_EQ(bytes.size(), 44u + 8u);
  EXPECT_EQ(decode_wav(bytes).samples, w.samples);
}

TEST(Wav, RoundTripErrorWithinHalfLsbAndClipCount) {
  dsp::Waveform w;
  for (int i = 0; i < 1000; ++i) w.samples.push_back(0.9 * std::sin(0.01 * i * i));
  w.samples.push_back(1.5);
  w.samples.push_back(-2.0);
  WavWriteResult res;
  const auto back = decode_wav(encode_wav(w, &res));
  EXPECT_EQ(res.clipped, 2u);
  for (int i = 0; i < 1000; ++i) EXPECT_LE(std::abs(back.samples[i] - w.samples[i]), 1.0 / 32768);
  EXPECT_EQ(back.samples[1000], 32767.0 / 32768.0);
  EXPECT_EQ(back.samples[1001], -1.0);
  w.samples[0] = NAN;
  EXPECT_THROW(encode_wav(w), WavError);
}

TEST(Wav, FileRoundTrip) {
  const auto dir = fs::temp_directory_path() / "ccdn_test_wav";
  fs::create_directories(dir);
  const auto w = synth_speech(0.25, 1);
  write_wav(dir / "a.wav", w);
  const auto back = read_wav(dir / "a.wav");
  ASSERT_EQ(back.size(), w.size());
  EXPECT_THROW(read_wav(dir / "missing.wav"), WavError);
  fs::remove_all(dir);
}

TEST(Mixing, GainOracles) {
  // Equal powers: 0 dB needs unit gain, 10 dB needs 10^(-1/2).
  dsp::Waveform clean{std::vector<Real>(100, 0.1)};
  dsp::Waveform noise{std::vector<Real>(100, -0.1)};
  EXPECT_NEAR(mix_at_snr(clean, noise, 0.0, 1).gain, 1.0, 1e-15);
  EXPECT_NEAR(mix_at_snr(clean, noise, 10.0, 1).gain, std::pow(10.0, -0.5), 1e-15);
  const auto m = mix_at_snr(clean, noise, 0.0, 1);
  for (Real v : m.noisy.samples) EXPECT_NEAR(v, 0.0, 1e-15);
  EXPECT_EQ(m.offset, 0u);
}

TEST(Mixing, SnrIsExactAtEveryTrainingLevel) {
  const auto clean = synth_speech(2.0, 3);
  const auto noise = white_noise(3.0, 4);
  for (Real snr : kTrainSnrs) {
    const auto m = mix_at_snr(clean, noise, snr, 5);
    EXPECT_NEAR(snr_db(m.clean.samples, m.noise.samples), snr, 1e-9) << snr;
    for (std::size_t i = 0; i < m.noisy.size(); ++i) {
      EXPECT_EQ(m.noisy.samples[i], m.clean.samples[i] + m.noise.samples[i]);
    }
  }
}

TEST(Mixing, PeakNormalizationKeepsSnr) {
  auto clean = synth_speech(1.0, 6);
  for (Real& v : clean.samples) v *= 1.9;  // peak 0.95
  const auto m = mix_at_snr(clean, white_noise(1.5, 7), 0.0, 8);
  EXPECT_LT(m.peak_scale, 1.0);
  Real peak = 0.0;
  for (Real v : m.noisy.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 1.0, 1e-12);
  EXPECT_NEAR(snr_db(m.clean.samples, m.noise.samples), 0.0, 1e-9);
}

TEST(Mixing, OffsetIsSeedDeterminedAndInRange) {
  const auto clean = synth_speech(1.0, 9);
  const auto noise = white_noise(2.0, 10);
  const auto a = mix_at_snr(clean, noise, 0.0, 11);
  const auto b = mix_at_snr(clean, noise, 0.0, 11);
  EXPECT_EQ(a.offset, b.offset);
  EXPECT_EQ(a.noisy.samples, b.noisy.samples);
  EXPECT_LE(a.offset, noise.size() - clean.size());
  bool differs = false;
  for (std::uint64_t s = 12; s < 20; ++s) differs |= mix_at_snr(clean, noise, 0.0, s).offset != a.offset;
  EXPECT_TRUE(differs);
}

TEST(Mixing, Errors) {
  const dsp::Waveform silent{std::vector<Real>(100, 0.0)};
  const dsp::Waveform tone{std::vector<Real>(100, 0.3)};
  const dsp::Waveform short_noise{std::vector<Real>(50, 0.3)};
  EXPECT_THROW(mix_at_snr(silent, tone, 0.0, 1), SilentClean);
  EXPECT_THROW(mix_at_snr(tone, silent, 0.0, 1), SilentNoise);
  EXPECT_THROW(mix_at_snr(tone, short_noise, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(mix_at_snr(tone, tone, NAN, 1), std::invalid_argument);
}

TEST(Manifest, ParsesCommentsAndRelativePaths) {
  const auto m = Manifest::parse(
      "# header\n"
      "\n"
      "clean/a.wav noise/n.wav -2.5 train 7  # trailing\n"
      "/abs/b.wav noise/n.wav 3 test 8\n",
      "/data");
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].clean_path, fs::path("/data/clean/a.wav"));
  EXPECT_EQ(m.entries[0].snr_db, -2.5);
  EXPECT_EQ(m.entries[0].split, Split::train);
  EXPECT_EQ(m.entries[0].seed, 7u);
  EXPECT_EQ(m.entries[1].clean_path, fs::path("/abs/b.wav"));
  EXPECT_EQ(m.split(Split::test).size(), 1u);
  EXPECT_EQ(entry_id(m.entries[0]), "a_n_7");
}

TEST(Manifest, RejectsMalformedLines) {
  EXPECT_THROW(Manifest::parse("a b 1 train\n", "/"), std::invalid_argument);
  EXPECT_THROW(Manifest::parse("a b 1 train 1 x\n", "/"), std::invalid_argument);
  EXPECT_THROW(Manifest::parse("a b x train 1\n", "/"), std::invalid_argument);
  EXPECT_THROW(Manifest::parse("a b 1 dev 1\n", "/"), std::invalid_argument);
  EXPECT_THROW(Manifest::parse("a b 1 train -1\n", "/"), std::invalid_argument);
}

TEST(Corpus, WritesLoadableManifest) {
  const auto dir = fs::temp_directory_path() / "ccdn_test_corpus";
  fs::remove_all(dir);
  CorpusSpec spec;
  spec.train = 3;
  spec.val = 1;
  spec.test = 2;
  spec.seconds = 0.5;
  const auto path = make_corpus(dir, spec);
  const auto m = Manifest::load(path);
  EXPECT_EQ(m.split(Split::train).size(), 3u);
  EXPECT_EQ(m.split(Split::val).size(), 1u);
  EXPECT_EQ(m.split(Split::test).size(), 2u);
  for (const auto& e : m.split(Split::test)) {
    EXPECT_NE(std::find(kEvalSnrs.begin(), kEvalSnrs.end(), e.snr_db), kEvalSnrs.end());
  }
  Manifest::parse(std::string{}, dir).save(dir / "empty.txt");
  EXPECT_TRUE(Manifest::load(dir / "empty.txt").entries.empty());
  fs::remove(dir / "clean" / (m.entries[0].clean_path.filename()));
  EXPECT_THROW(Manifest::load(path), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Synth, DeterministicAndBounded) {
  const auto a = synth_speech(1.0, 3), b = synth_speech(1.0, 3), c = synth_speech(1.0, 4);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
  EXPECT_EQ(a.size(), 16000u);
  for (Real v : a.samples) EXPECT_LE(std::abs(v), 1.0);
  const auto n = white_noise(1.0, 5, 0.2);
  EXPECT_NEAR(std::sqrt(power(n.samples)), 0.2, 0.01);  // sample RMS of Gaussian draws
  EXPECT_NEAR(std::sqrt(power(babble_noise(1.0, 6, 0.1).samples)), 0.1, 1e-9);
}

TEST(Wav, SilentFileDecodesToZeros) {
  const auto dir = fs::temp_directory_path() / "ccdn_test_wav_silent";
  fs::create_directories(dir);
  write_wav(dir / "z.wav", dsp::Waveform{std::vector<Real>(800, 0.0)});
  const auto back = read_wav(dir / "z.wav");
  ASSERT_EQ(back.size(), 800u);
  for (Real v : back.samples) EXPECT_EQ(v, 0.0);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace ccdn::data
