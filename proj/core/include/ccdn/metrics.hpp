#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ccdn/dsp.hpp"
#include "ccdn/losses.hpp"

namespace ccdn::metrics {

using losses::si_sdr;

// Extended short-time objective intelligibility of `processed` against
// `clean`, both 16 kHz. Fixed algorithm constants: 10 kHz internal rate,
// 256-sample frames with 50% overlap, 512-point FFT, 15 one-third-octave
// bands from 150 Hz, 30-frame segments, 40 dB silent-frame threshold.
// Throws dsp::SignalTooShort when fewer than 30 active frames remain.
Real estoi(const dsp::Waveform& clean, const dsp::Waveform& processed);
Real estoi(std::span<const Real> clean, std::span<const Real> processed, int sample_rate);

// Building blocks, exposed for testing.
namespace detail {
// Rational resampling by up/down with a Kaiser-windowed sinc low-pass
// (60 dB stopband), output length ceil(len * up / down).
std::vector<Real> resample(std::span<const Real> x, int up, int down);
// [bands x (nfft/2 + 1)] 0/1 band matrix, row-major.
std::vector<Real> third_octave_bands(int fs, int nfft, int bands, Real min_freq);
// Drops frames more than `dyn_range` dB below the loudest frame of x and
// overlap-adds the rest; y keeps the same frames.
void remove_silent_frames(std::vector<Real>& x, std::vector<Real>& y, Real dyn_range,
                          std::size_t frame, std::size_t hop);
}  // namespace detail

struct EvalTriple {
  std::string id;
  Real snr_db = 0.0;
  dsp::Waveform clean;
  dsp::Waveform noisy;
  dsp::Waveform enhanced;
};

struct EvalRow {
  std::string id;
  Real snr_db = 0.0;
  Real si_sdr_in = 0.0;
  Real si_sdr_out = 0.0;
  Real estoi_in = 0.0;
  Real estoi_out = 0.0;
};

struct EvalBucket {
  Real snr_db = 0.0;
  std::size_t count = 0;
  Real si_sdr_in = 0.0;
  Real si_sdr_out = 0.0;
  Real estoi_in = 0.0;
  Real estoi_out = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;        // input order
  std::vector<EvalBucket> buckets;  // ascending SNR
  EvalBucket overall;
};

EvalReport evaluate(const std::vector<EvalTriple>& triples);
// Recomputes the bucket and overall means from rows.
void summarize(EvalReport& report);

inline constexpr const char* kCsvHeader = "id,snr_db,si_sdr_in,si_sdr_out,estoi_in,estoi_out";

// Plain-text table; ESTOI rendered in percent.
void write_text(const EvalReport& report, std::ostream& out);
// Header kCsvHeader, one row per utterance, raw ESTOI in [-1, 1].
void write_csv(const EvalReport& report, std::ostream& out);

}  // namespace ccdn::metrics
