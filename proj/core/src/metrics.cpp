#include "ccdn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>

namespace ccdn::metrics {
namespace {

constexpr int kFs = 10000;
constexpr std::size_t kFrame = 256;
constexpr std::size_t kFft = 512;
constexpr int kBands = 15;
constexpr Real kMinFreq = 150.0;
constexpr std::size_t kSegment = 30;
constexpr Real kDynRange = 40.0;
constexpr Real kEps = std::numeric_limits<Real>::epsilon();

// Hann of length n + 2 without its zero end points.
std::vector<Real> inner_hann(std::size_t n) {
  std::vector<Real> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<Real>(k + 1) /
                                static_cast<Real>(n + 1));
  }
  return w;
}

Real bessel_i0(Real x) { return std::cyl_bessel_i(0.0, x); }

std::vector<Real> kaiser(std::size_t n, Real beta) {
  std::vector<Real> w(n);
  const Real denom = bessel_i0(beta);
  for (std::size_t k = 0; k < n; ++k) {
    const Real r = n == 1 ? 0.0 : 2.0 * static_cast<Real>(k) / static_cast<Real>(n - 1) - 1.0;
    w[k] = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

Real sinc(Real x) {
  if (x == 0.0) return 1.0;
  const Real px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Band envelopes [bands x frames] of the one-third-octave decomposition.
std::vector<Real> band_envelopes(const std::vector<Real>& x, const std::vector<Real>& obm,
                                 std::size_t& frames) {
  const std::size_t hop = kFrame / 2;
  const std::size_t bins = kFft / 2 + 1;
  frames = x.size() > kFrame ? (x.size() - kFrame + hop - 1) / hop : 0;
  static const auto window = inner_hann(kFrame);
  static const auto table = [] {
    std::vector<Real> t(2 * kFft);
    for (std::size_t k = 0; k < kFft; ++k) {
      const Real a = 2.0 * std::numbers::pi * static_cast<Real>(k) / static_cast<Real>(kFft);
      t[2 * k] = std::cos(a);
      t[2 * k + 1] = std::sin(a);
    }
    return t;
  }();
  std::vector<Real> env(static_cast<std::size_t>(kBands) * frames, 0.0);
  std::vector<Real> frame(kFrame), power(bins);
  for (std::size_t m = 0; m < frames; ++m) {
    for (std::size_t n = 0; n < kFrame; ++n) frame[n] = window[n] * x[m * hop + n];
    for (std::size_t k = 0; k < bins; ++k) {
      Real re = 0.0, im = 0.0;
      std::size_t idx = 0;
      for (std::size_t n = 0; n < kFrame; ++n) {
        re += frame[n] * table[2 * idx];
        im -= frame[n] * table[2 * idx + 1];
        idx = (idx + k) % kFft;
      }
      power[k] = re * re + im * im;
    }
    for (int b = 0; b < kBands; ++b) {
      Real s = 0.0;
      for (std::size_t k = 0; k < bins; ++k) s += obm[b * bins + k] * power[k];
      env[b * frames + m] = std::sqrt(s);
    }
  }
  return env;
}

// Normalizes rows (bands over time) then columns (time over bands) of a
// [bands x len] segment. Zero-norm rows or columns stay zero.
void row_col_normalize(std::vector<Real>& seg, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    Real* row = seg.data() + r * cols;
    const Real mean = std::accumulate(row, row + cols, 0.0) / static_cast<Real>(cols);
    Real ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] -= mean;
      ss += row[c] * row[c];
    }
    const Real inv = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
  for (std::size_t c = 0; c < cols; ++c) {
    Real mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += seg[r * cols + c];
    mean /= static_cast<Real>(rows);
    Real ss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      seg[r * cols + c] -= mean;
      ss += seg[r * cols + c] * seg[r * cols + c];
    }
    const Real inv = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
    for (std::size_t r = 0; r < rows; ++r) seg[r * cols + c] *= inv;
  }
}

}  // namespace

namespace detail {

std::vector<Real> resample(std::span<const Real> x, int up, int down) {
  if (up <= 0 || down <= 0) throw std::invalid_argument("resample: factors must be positive");
  const int g = std::gcd(up, down);
  const long p = up / g, q = down / g;
  if (p == 1 && q == 1) return {x.begin(), x.end()};

  const Real cutoff = 1.0 / (2.0 * static_cast<Real>(std::max(p, q)));
  const Real roll_off = cutoff / 10.0;
  const Real rejection_db = 60.0;
  const long half = static_cast<long>(std::ceil((rejection_db - 8.0) / (28.714 * roll_off)));
  const Real beta = 0.1102 * (rejection_db - 8.7);
  const auto win = kaiser(static_cast<std::size_t>(2 * half + 1), beta);
  std::vector<Real> h;
  const Real center = static_cast<Real>(half);
  const long pre = static_cast<long>(std::floor(static_cast<Real>(q) - std::fmod(center, q)));
  h.assign(static_cast<std::size_t>(pre), 0.0);
  for (long t = -half; t <= half; ++t) {
    h.push_back(win[static_cast<std::size_t>(t + half)] * 2.0 * p * cutoff *
                sinc(2.0 * cutoff * static_cast<Real>(t)));
  }
  // Unity DC gain per output phase.
  const Real dc = std::accumulate(h.begin(), h.end(), 0.0);
  for (auto& v : h) v *= static_cast<Real>(p) / dc;
  const long ls = static_cast<long>(x.size());
  const long ly = (ls * p + q - 1) / q;
  const long delay = static_cast<long>(std::floor(std::ceil(center + pre) / q));

  std::vector<Real> y(static_cast<std::size_t>(ly), 0.0);
  const long lh = static_cast<long>(h.size());
  for (long m = 0; m < ly; ++m) {
    // Output sample (m + delay) of upsample -> filter -> downsample.
    const long n = (m + delay) * q;
    Real acc = 0.0;
    const long j_lo = std::max<long>(0, (n - lh + p) / p);
    const long j_hi = std::min(ls - 1, n / p);
    for (long j = j_lo; j <= j_hi; ++j) {
      const long k = n - j * p;
      if (k >= 0 && k < lh) acc += h[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(j)];
    }
    y[static_cast<std::size_t>(m)] = acc;
  }
  return y;
}

std::vector<Real> third_octave_bands(int fs, int nfft, int bands, Real min_freq) {
  const std::size_t bins = static_cast<std::size_t>(nfft / 2 + 1);
  std::vector<Real> f(bins);
  for (std::size_t k = 0; k < bins; ++k) f[k] = static_cast<Real>(fs) * k / nfft;
  auto nearest = [&](Real target) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < bins; ++k) {
      if (std::abs(f[k] - target) < std::abs(f[best] - target)) best = k;
    }
    return best;
  };
  std::vector<Real> obm(static_cast<std::size_t>(bands) * bins, 0.0);
  for (int b = 0; b < bands; ++b) {
    const Real lo = min_freq * std::pow(2.0, (2.0 * b - 1.0) / 6.0);
    const Real hi = min_freq * std::pow(2.0, (2.0 * b + 1.0) / 6.0);
    const std::size_t lo_bin = nearest(lo), hi_bin = nearest(hi);
    for (std::size_t k = lo_bin; k < hi_bin; ++k) obm[b * bins + k] = 1.0;
  }
  return obm;
}

void remove_silent_frames(std::vector<Real>& x, std::vector<Real>& y, Real dyn_range,
                          std::size_t frame, std::size_t hop) {
  const auto w = inner_hann(frame);
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i + frame < x.size(); i += hop) starts.push_back(i);
  std::vector<Real> energy(starts.size());
  Real peak = -std::numeric_limits<Real>::infinity();
  for (std::size_t m = 0; m < starts.size(); ++m) {
    Real ss = 0.0;
    for (std::size_t n = 0; n < frame; ++n) {
      const Real v = w[n] * x[starts[m] + n];
      ss += v * v;
    }
    energy[m] = 20.0 * std::log10(std::sqrt(ss) + kEps);
    peak = std::max(peak, energy[m]);
  }
  std::vector<std::size_t> kept;
  for (std::size_t m = 0; m < starts.size(); ++m) {
    if (peak - dyn_range - energy[m] < 0.0) kept.push_back(starts[m]);
  }
  const std::size_t len = kept.empty() ? 0 : (kept.size() - 1) * hop + frame;
  std::vector<Real> xs(len, 0.0), ys(len, 0.0);
  for (std::size_t m = 0; m < kept.size(); ++m) {
    for (std::size_t n = 0; n < frame; ++n) {
      xs[m * hop + n] += w[n] * x[kept[m] + n];
      ys[m * hop + n] += w[n] * y[kept[m] + n];
    }
  }
  x = std::move(xs);
  y = std::move(ys);
}

}  // namespace detail

Real estoi(std::span<const Real> clean, std::span<const Real> processed, int sample_rate) {
  if (clean.size() != processed.size()) {
    throw ShapeError("estoi: length mismatch " + std::to_string(clean.size()) + " vs " +
                     std::to_string(processed.size()));
  }
  if (sample_rate <= 0) throw std::invalid_argument("estoi: sample rate must be positive");
  std::vector<Real> x = detail::resample(clean, kFs, sample_rate);
  std::vector<Real> y = detail::resample(processed, kFs, sample_rate);
  detail::remove_silent_frames(x, y, kDynRange, kFrame, kFrame / 2);

  static const auto obm = detail::third_octave_bands(kFs, kFft, kBands, kMinFreq);
  std::size_t frames = 0;
  const auto xe = band_envelopes(x, obm, frames);
  const auto ye = band_envelopes(y, obm, frames);
  if (frames < kSegment) {
    throw dsp::SignalTooShort("estoi: only " + std::to_string(frames) +
                              " active frames; at least 30 are required");
  }

  const std::size_t segments = frames - kSegment + 1;
  std::vector<Real> xs(kBands * kSegment), ys(kBands * kSegment);
  Real total = 0.0;
  for (std::size_t s = 0; s < segments; ++s) {
    for (int b = 0; b < kBands; ++b) {
      for (std::size_t c = 0; c < kSegment; ++c) {
        xs[b * kSegment + c] = xe[b * frames + s + c];
        ys[b * kSegment + c] = ye[b * frames + s + c];
      }
    }
    row_col_normalize(xs, kBands, kSegment);
    row_col_normalize(ys, kBands, kSegment);
    Real d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) d += xs[i] * ys[i];
    total += d / static_cast<Real>(kSegment);
  }
  return total / static_cast<Real>(segments);
}

Real estoi(const dsp::Waveform& clean, const dsp::Waveform& processed) {
  if (clean.sample_rate != processed.sample_rate) {
    throw std::invalid_argument("estoi: sample rates differ");
  }
  return estoi(clean.samples, processed.samples, clean.sample_rate);
}

EvalReport evaluate(const std::vector<EvalTriple>& triples) {
  if (triples.empty()) throw std::invalid_argument("evaluate: no utterances");
  EvalReport report;
  for (const auto& t : triples) {
    EvalRow r;
    r.id = t.id;
    r.snr_db = t.snr_db;
    r.si_sdr_in = si_sdr(t.noisy, t.clean);
    r.si_sdr_out = si_sdr(t.enhanced, t.clean);
    r.estoi_in = estoi(t.clean, t.noisy);
    r.estoi_out = estoi(t.clean, t.enhanced);
    report.rows.push_back(std::move(r));
  }
  summarize(report);
  return report;
}

void summarize(EvalReport& report) {
  std::map<Real, EvalBucket> by_snr;
  EvalBucket all;
  auto add = [](EvalBucket& b, const EvalRow& r) {
    ++b.count;
    b.si_sdr_in += r.si_sdr_in;
    b.si_sdr_out += r.si_sdr_out;
    b.estoi_in += r.estoi_in;
    b.estoi_out += r.estoi_out;
  };
  auto finish = [](EvalBucket& b) {
    const Real n = static_cast<Real>(b.count);
    b.si_sdr_in /= n;
    b.si_sdr_out /= n;
    b.estoi_in /= n;
    b.estoi_out /= n;
  };
  for (const auto& r : report.rows) {
    auto& b = by_snr[r.snr_db];
    b.snr_db = r.snr_db;
    add(b, r);
    add(all, r);
  }
  report.buckets.clear();
  for (auto& [snr, b] : by_snr) {
    finish(b);
    report.buckets.push_back(b);
  }
  if (all.count) finish(all);
  report.overall = all;
}

namespace {

std::string fixed(Real v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void write_text(const EvalReport& report, std::ostream& out) {
  out << "ESTOI in percent; SI-SDR in dB. PESQ is not computed.\n\n";
  out << std::left << std::setw(24) << "id" << std::right << std::setw(8) << "snr" << std::setw(12)
      << "sisdr_in" << std::setw(12) << "sisdr_out" << std::setw(12) << "estoi_in"
      << std::setw(12) << "estoi_out" << '\n';
  for (const auto& r : report.rows) {
    out << std::left << std::setw(24) << r.id << std::right << std::setw(8) << fixed(r.snr_db, 1)
        << std::setw(12) << fixed(r.si_sdr_in, 2) << std::setw(12) << fixed(r.si_sdr_out, 2)
        << std::setw(12) << fixed(100.0 * r.estoi_in, 2) << std::setw(12)
        << fixed(100.0 * r.estoi_out, 2) << '\n';
  }
  out << "\nmeans by SNR\n";
  auto bucket = [&](const std::string& label, const EvalBucket& b) {
    out << std::left << std::setw(24) << label << std::right << std::setw(8) << b.count
        << std::setw(12) << fixed(b.si_sdr_in, 2) << std::setw(12) << fixed(b.si_sdr_out, 2)
        << std::setw(12) << fixed(100.0 * b.estoi_in, 2) << std::setw(12)
        << fixed(100.0 * b.estoi_out, 2) << '\n';
  };
  for (const auto& b : report.buckets) bucket(fixed(b.snr_db, 1) + " dB", b);
  bucket("all", report.overall);
}

void write_csv(const EvalReport& report, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.id << ',' << fixed(r.snr_db, 6) << ',' << fixed(r.si_sdr_in, 6) << ','
        << fixed(r.si_sdr_out, 6) << ',' << fixed(r.estoi_in, 6) << ',' << fixed(r.estoi_out, 6)
        << '\n';
  }
}

}  // namespace ccdn::metrics
