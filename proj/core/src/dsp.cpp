#include "ccdn/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>

namespace ccdn::dsp {
namespace {

// Overlap-add normalizer floor. Only the first few samples of a signal sit
// under it (the Hann envelope there is < 1e-3); the interior is >= 0.5.
constexpr Real kWindowFloor = 1e-3;

constexpr Real kZeroMagnitude = 1e-12;

// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};
using Plan = std::unique_ptr<fftw_plan_s, PlanDeleter>;

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
std::unique_ptr<T[], FftwFree> fftw_buffer(std::size_t n) {
  return std::unique_ptr<T[], FftwFree>(static_cast<T*>(fftw_malloc(sizeof(T) * n)));
}

std::vector<Real> ola_normalizer(std::size_t frames, const StftConfig& cfg,
                                 const std::vector<Real>& window) {
  const std::size_t len = (frames - 1) * cfg.hop + cfg.fft_size;
  std::vector<Real> norm(len, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < cfg.fft_size; ++n) {
      norm[t * cfg.hop + n] += window[n] * window[n];
    }
  }
  return norm;
}

}  // namespace

void StftConfig::validate() const {
  if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0) {
    throw std::invalid_argument("stft: fft_size must be a power of two >= 2");
  }
  if (hop == 0 || fft_size % hop != 0) {
    throw std::invalid_argument("stft: hop must divide fft_size");
  }
}

ComplexSpectrogram::ComplexSpectrogram(std::size_t frames, std::size_t bins)
    : frames_(frames), bins_(bins), data_(frames * bins * 2, 0.0) {}

ComplexSpectrogram::ComplexSpectrogram(std::size_t frames, std::size_t bins,
                                       std::vector<Real> data)
    : frames_(frames), bins_(bins), data_(std::move(data)) {
  if (data_.size() != frames * bins * 2) {
    throw ShapeError("ComplexSpectrogram: data size does not match T x F x 2");
  }
}

std::vector<Real> ComplexSpectrogram::planar() const {
  const std::size_t plane = frames_ * bins_;
  std::vector<Real> out(2 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = data_[2 * i];
    out[plane + i] = data_[2 * i + 1];
  }
  return out;
}

ComplexSpectrogram ComplexSpectrogram::from_planar(std::size_t frames, std::size_t bins,
                                                   std::span<const Real> planar) {
  const std::size_t plane = frames * bins;
  if (planar.size() != 2 * plane) throw ShapeError("from_planar: size mismatch");
  ComplexSpectrogram s(frames, bins);
  for (std::size_t i = 0; i < plane; ++i) {
    s.data_[2 * i] = planar[i];
    s.data_[2 * i + 1] = planar[plane + i];
  }
  return s;
}

std::vector<Real> hann_window(std::size_t n) {
  if (n < 2) throw std::invalid_argument("hann_window: n must be >= 2");
  std::vector<Real> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<Real>(k) /
                                static_cast<Real>(n));
  }
  return w;
}

std::size_t frame_count(std::size_t samples, const StftConfig& cfg) {
  if (samples < cfg.fft_size) {
    throw SignalTooShort("stft: " + std::to_string(samples) + " samples is shorter than one " +
                         std::to_string(cfg.fft_size) + "-sample frame");
  }
  return 1 + (samples - cfg.fft_size + cfg.hop - 1) / cfg.hop;
}

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  const std::size_t frames = frame_count(w.size(), cfg);
  const std::size_t n = cfg.fft_size;
  const std::size_t bins = cfg.bins();
  const auto window = hann_window(n);

  auto in = fftw_buffer<double>(n);
  auto out = fftw_buffer<fftw_complex>(bins);
  Plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan.reset(fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE));
  }

  ComplexSpectrogram s(frames, bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t start = t * cfg.hop;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t idx = start + k;
      in[k] = idx < w.size() ? w.samples[idx] * window[k] : 0.0;
    }
    fftw_execute(plan.get());
    for (std::size_t f = 0; f < bins; ++f) {
      s.re(t, f) = out[f][0];
      s.im(t, f) = out[f][1];
    }
  }
  return s;
}

Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg, std::size_t out_len) {
  cfg.validate();
  if (s.bins() != cfg.bins() || s.frames() == 0) {
    throw ShapeError("istft: spectrogram has " + std::to_string(s.bins()) + " bins, config expects " +
                     std::to_string(cfg.bins()));
  }
  const std::size_t n = cfg.fft_size;
  const std::size_t full = (s.frames() - 1) * cfg.hop + n;
  if (out_len > full) {
    throw ShapeError("istft: out_len " + std::to_string(out_len) + " exceeds reconstructable " +
                     std::to_string(full));
  }
  for (Real v : s.data()) {
    if (!std::isfinite(v)) throw NonFiniteError("istft: non-finite spectrogram");
  }
  const auto window = hann_window(n);

  auto in = fftw_buffer<fftw_complex>(cfg.bins());
  auto out = fftw_buffer<double>(n);
  Plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan.reset(fftw_plan_dft_c2r_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE));
  }

  std::vector<Real> acc(full, 0.0);
  for (std::size_t t = 0; t < s.frames(); ++t) {
    for (std::size_t f = 0; f < cfg.bins(); ++f) {
      in[f][0] = s.re(t, f);
      in[f][1] = s.im(t, f);
    }
    fftw_execute(plan.get());
    for (std::size_t k = 0; k < n; ++k) {
      acc[t * cfg.hop + k] += out[k] / static_cast<Real>(n) * window[k];
    }
  }
  const auto norm = ola_normalizer(s.frames(), cfg, window);
  Waveform w;
  w.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) w.samples[i] = acc[i] / std::max(norm[i], kWindowFloor);
  return w;
}

MagPhase mag_phase(const ComplexSpectrogram& s) {
  MagPhase mp;
  const std::size_t count = s.frames() * s.bins();
  mp.magnitude.resize(count);
  mp.phase.resize(count);
  const auto& d = s.data();
  for (std::size_t i = 0; i < count; ++i) {
    const Real re = d[2 * i];
    const Real im = d[2 * i + 1];
    const Real mag = std::sqrt(re * re + im * im);
    mp.magnitude[i] = mag;
    mp.phase[i] = mag < kZeroMagnitude ? 0.0 : std::atan2(im, re);
  }
  return mp;
}

ad::Var istft(ad::Var planar_spec, const StftConfig& cfg, std::size_t out_len) {
  cfg.validate();
  const Shape& shape = planar_spec.shape();
  if (shape.size() != 3 || shape[0] != 2 || shape[2] != cfg.bins()) {
    throw ShapeError("istft: expected [2, T, " + std::to_string(cfg.bins()) + "], got " +
                     shape_str(shape));
  }
  const std::size_t frames = shape[1];
  const std::size_t bins = shape[2];
  const std::size_t n = cfg.fft_size;
  const std::size_t full = (frames - 1) * cfg.hop + n;
  if (out_len == 0 || out_len > full) throw ShapeError("istft: invalid out_len");

  // Real inverse DFT as two basis matrices: frame = R * Bc + I * Bs. The
  // imaginary parts of the DC and Nyquist bins do not contribute, as in c2r.
  std::vector<Real> cos_basis(bins * n), sin_basis(bins * n, 0.0);
  for (std::size_t f = 0; f < bins; ++f) {
    const bool edge = f == 0 || f == n / 2;
    const Real weight = edge ? 1.0 : 2.0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t phase_idx = (f * k) % n;
      const Real angle = 2.0 * std::numbers::pi * static_cast<Real>(phase_idx) /
                         static_cast<Real>(n);
      cos_basis[f * n + k] = weight * std::cos(angle) / static_cast<Real>(n);
      if (!edge) sin_basis[f * n + k] = -weight * std::sin(angle) / static_cast<Real>(n);
    }
  }
  const auto window = hann_window(n);
  std::vector<Real> tiled(frames * n);
  for (std::size_t t = 0; t < frames; ++t) std::copy(window.begin(), window.end(), tiled.begin() + t * n);
  const auto norm = ola_normalizer(frames, cfg, window);
  std::vector<Real> inv_norm(out_len);
  for (std::size_t i = 0; i < out_len; ++i) inv_norm[i] = 1.0 / std::max(norm[i], kWindowFloor);

  ad::Tape& tape = *planar_spec.tape();
  using namespace ad;
  Var re = reshape(slice(planar_spec, 0, 0, 1), {frames, bins});
  Var im = reshape(slice(planar_spec, 0, 1, 2), {frames, bins});
  Var frames_v = add(matmul(re, tape.constant({bins, n}, std::move(cos_basis))),
                     matmul(im, tape.constant({bins, n}, std::move(sin_basis))));
  frames_v = mul(frames_v, tape.constant({frames, n}, std::move(tiled)));
  Var signal = overlap_add(frames_v, cfg.hop);
  if (out_len < full) signal = slice(signal, 0, 0, out_len);
  return mul(signal, tape.constant({out_len}, std::move(inv_norm)));
}

}  // namespace ccdn::dsp
