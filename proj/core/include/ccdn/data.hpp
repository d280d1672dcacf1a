#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccdn/dsp.hpp"

namespace ccdn::data {

// ---- WAV -----------------------------------------------------------------

struct WavError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// RIFF/WAVE, PCM 16-bit, mono, 16 kHz only. Samples are scaled by 1/32768.
dsp::Waveform decode_wav(std::span<const std::uint8_t> bytes);
dsp::Waveform read_wav(const std::filesystem::path& path);

struct WavWriteResult {
  std::size_t clipped = 0;  // samples saturated to the PCM16 range
};

// Rounds to nearest and saturates at [-32768, 32767].
std::vector<std::uint8_t> encode_wav(const dsp::Waveform& w, WavWriteResult* result = nullptr);
WavWriteResult write_wav(const std::filesystem::path& path, const dsp::Waveform& w);

// ---- mixing --------------------------------------------------------------

struct SilentClean : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct SilentNoise : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline const std::vector<Real> kTrainSnrs{-5, -2, 0, 2, 4, 5, 6, 10};
inline const std::vector<Real> kEvalSnrs{-3, 0, 3, 6};

// Mean square over the whole clip.
Real power(std::span<const Real> x);
// 10 log10(power(clean) / power(noise)).
Real snr_db(std::span<const Real> clean, std::span<const Real> noise);

struct Mixture {
  dsp::Waveform noisy;
  dsp::Waveform clean;  // clean, after the shared peak scale
  dsp::Waveform noise;  // gain * noise segment, after the shared peak scale
  Real gain = 1.0;
  Real peak_scale = 1.0;  // < 1 when the mixture was normalized to peak 1
  std::size_t offset = 0;
};

// Picks a seed-determined noise segment of the clean length and scales it so
// the clean-to-noise power ratio equals snr_db. noisy = clean + gain * segment,
// then all three signals are scaled together if |noisy| would exceed 1.
Mixture mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& noise, Real snr_db,
                   std::uint64_t seed);

// ---- manifests -----------------------------------------------------------

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::filesystem::path clean_path;
  std::filesystem::path noise_path;
  Real snr_db = 0.0;
  Split split = Split::train;
  std::uint64_t seed = 0;
};

// Line format: "clean_path noise_path snr_db split seed". '#' starts a
// comment; blank lines are ignored. Relative paths resolve against the
// manifest's directory.
struct Manifest {
  std::vector<ManifestEntry> entries;

  static Manifest parse(const std::string& text, const std::filesystem::path& base_dir);
  // Also checks that every referenced file exists.
  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::vector<ManifestEntry> split(Split s) const;
};

std::string entry_id(const ManifestEntry& e);

// ---- synthetic corpus ----------------------------------------------------

// Voiced harmonic source with moving formants, syllable-rate envelope and
// short pauses. Peak around 0.5.
dsp::Waveform synth_speech(Real seconds, std::uint64_t seed);
dsp::Waveform white_noise(Real seconds, std::uint64_t seed, Real rms = 0.1);
// Several overlapping synthetic talkers plus a little white noise.
dsp::Waveform babble_noise(Real seconds, std::uint64_t seed, Real rms = 0.1);

struct CorpusSpec {
  std::size_t train = 8;
  std::size_t val = 2;
  std::size_t test = 4;
  Real seconds = 2.0;
  std::uint64_t seed = 0;
};

// Writes clean/ and noise/ WAVs plus manifest.txt under dir; training
// entries cycle the training SNR grid, val/test entries the evaluation grid.
std::filesystem::path make_corpus(const std::filesystem::path& dir, const CorpusSpec& spec);

}  // namespace ccdn::data
