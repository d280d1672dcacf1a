#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ccdn/autodiff.hpp"

namespace ccdn::dsp {

inline constexpr int kSampleRate = 16000;

// Mono audio, full-scale amplitude in [-1, 1].
struct Waveform {
  std::vector<Real> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  Real seconds() const { return static_cast<Real>(samples.size()) / sample_rate; }
};

struct StftConfig {
  std::size_t fft_size = 512;
  std::size_t hop = 256;

  std::size_t bins() const { return fft_size / 2 + 1; }
  // Throws std::invalid_argument unless fft_size is a power of two and hop
  // divides it.
  void validate() const;
};

// T x F x 2 real array; channel 0 holds the real part, channel 1 the
// imaginary part.
class ComplexSpectrogram {
 public:
  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::size_t frames, std::size_t bins);
  ComplexSpectrogram(std::size_t frames, std::size_t bins, std::vector<Real> data);

  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_; }
  const std::vector<Real>& data() const { return data_; }
  std::vector<Real>& data() { return data_; }

  Real& re(std::size_t t, std::size_t f) { return data_[(t * bins_ + f) * 2]; }
  Real& im(std::size_t t, std::size_t f) { return data_[(t * bins_ + f) * 2 + 1]; }
  Real re(std::size_t t, std::size_t f) const { return data_[(t * bins_ + f) * 2]; }
  Real im(std::size_t t, std::size_t f) const { return data_[(t * bins_ + f) * 2 + 1]; }

  // Channel-planar layout [2, T, F] used by the network, and back.
  std::vector<Real> planar() const;
  static ComplexSpectrogram from_planar(std::size_t frames, std::size_t bins,
                                        std::span<const Real> planar);

 private:
  std::size_t frames_ = 0;
  std::size_t bins_ = 0;
  std::vector<Real> data_;
};

struct SignalTooShort : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Periodic Hann: w[k] = 0.5 - 0.5 cos(2 pi k / n).
std::vector<Real> hann_window(std::size_t n);

std::size_t frame_count(std::size_t samples, const StftConfig& cfg);

// The tail is zero-padded to complete the last frame.
ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg = {});

// Windowed overlap-add normalized by the summed squared window. Samples whose
// normalizer vanishes (sample 0 for Hann) come out as zero.
Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg, std::size_t out_len);

struct MagPhase {
  std::vector<Real> magnitude;  // T x F
  std::vector<Real> phase;      // T x F, radians
};

// phase is the angle of R + jI, and 0 where the magnitude is below 1e-12.
MagPhase mag_phase(const ComplexSpectrogram& s);

// Differentiable inverse transform of a planar [2, T, F] spectrum to a
// waveform Var of length out_len. Matches istft() to rounding.
ad::Var istft(ad::Var planar_spec, const StftConfig& cfg, std::size_t out_len);

}  // namespace ccdn::dsp
