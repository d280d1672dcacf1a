#include "ccdn/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "ccdn/layers.hpp"

namespace ccdn::data {
namespace fs = std::filesystem;

namespace {

std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

bool tag(std::span<const std::uint8_t> b, std::size_t at, const char* t) {
  return std::equal(t, t + 4, b.begin() + static_cast<std::ptrdiff_t>(at));
}

}  // namespace

dsp::Waveform decode_wav(std::span<const std::uint8_t> b) {
  if (b.size() < 12 || !tag(b, 0, "RIFF") || !tag(b, 8, "WAVE")) {
    throw WavError("wav: missing RIFF/WAVE header");
  }
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::size_t size = le32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (tag(b, pos, "fmt ")) {
      if (size < 16 || body + size > b.size()) throw WavError("wav: truncated fmt chunk");
      std::uint16_t format = le16(b, body);
      if (format == 0xFFFE && size >= 26) format = le16(b, body + 24);
      const std::uint16_t channels = le16(b, body + 2);
      const std::uint32_t rate = le32(b, body + 4);
      const std::uint16_t bits = le16(b, body + 14);
      if (format != 1) throw WavError("wav: unsupported format " + std::to_string(format) +
                                      " (only PCM is supported)");
      if (channels != 1) throw WavError("wav: " + std::to_string(channels) +
                                        " channels; only mono is supported");
      if (bits != 16) throw WavError("wav: " + std::to_string(bits) +
                                     "-bit samples; only 16-bit PCM is supported");
      if (rate != static_cast<std::uint32_t>(dsp::kSampleRate)) {
        throw WavError("wav: sample rate " + std::to_string(rate) + " Hz; expected 16000 Hz");
      }
      have_fmt = true;
    } else if (tag(b, pos, "data")) {
      if (!have_fmt) throw WavError("wav: data chunk before fmt chunk");
      if (body + size > b.size()) throw WavError("wav: truncated data chunk");
      if (size % 2 != 0) throw WavError("wav: odd data size for 16-bit samples");
      dsp::Waveform w;
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<std::int16_t>(le16(b, body + 2 * i)) / 32768.0;
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw WavError(have_fmt ? "wav: no data chunk" : "wav: no fmt chunk");
}

dsp::Waveform read_wav(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError("wav: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const WavError& e) {
    throw WavError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const dsp::Waveform& w, WavWriteResult* result) {
  if (w.sample_rate != dsp::kSampleRate) throw WavError("wav: only 16000 Hz can be written");
  const std::size_t data = 2 * w.samples.size();
  std::vector<std::uint8_t> out;
  out.reserve(44 + data);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, static_cast<std::uint32_t>(36 + data));
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, dsp::kSampleRate);
  put32(out, dsp::kSampleRate * 2);
  put16(out, 2);
  put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, static_cast<std::uint32_t>(data));
  std::size_t clipped = 0;
  for (Real s : w.samples) {
    if (!std::isfinite(s)) throw WavError("wav: non-finite sample");
    Real q = std::nearbyint(s * 32768.0);
    if (q > 32767.0 || q < -32768.0) {
      ++clipped;
      q = std::clamp(q, -32768.0, 32767.0);
    }
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  if (result) result->clipped = clipped;
  return out;
}

WavWriteResult write_wav(const fs::path& path, const dsp::Waveform& w) {
  WavWriteResult r;
  const auto bytes = encode_wav(w, &r);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WavError("wav: cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WavError("wav: write failed for " + path.string());
  return r;
}

// ---- mixing --------------------------------------------------------------

Real power(std::span<const Real> x) {
  if (x.empty()) return 0.0;
  Real s = 0.0;
  for (Real v : x) s += v * v;
  return s / static_cast<Real>(x.size());
}

Real snr_db(std::span<const Real> clean, std::span<const Real> noise) {
  return 10.0 * std::log10(power(clean) / power(noise));
}

Mixture mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& noise, Real snr,
                   std::uint64_t seed) {
  if (!std::isfinite(snr)) throw std::invalid_argument("mix: snr_db must be finite");
  if (clean.samples.empty()) throw std::invalid_argument("mix: empty clean signal");
  if (noise.size() < clean.size()) {
    throw std::invalid_argument("mix: noise (" + std::to_string(noise.size()) +
                                " samples) is shorter than clean (" +
                                std::to_string(clean.size()) + ")");
  }
  const Real pc = power(clean.samples);
  if (pc == 0.0) throw SilentClean("mix: clean signal is silent");

  layers::Rng rng(seed);
  const std::size_t n = clean.size();
  const std::size_t offset = rng.next() % (noise.size() - n + 1);
  std::span<const Real> seg(noise.samples.data() + offset, n);
  const Real pn = power(seg);
  if (pn == 0.0) throw SilentNoise("mix: selected noise segment is silent");

  Mixture m;
  m.offset = offset;
  m.gain = std::sqrt(pc / (pn * std::pow(10.0, snr / 10.0)));
  m.clean = clean;
  m.noise.samples.resize(n);
  m.noisy.samples.resize(n);
  Real peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m.noise.samples[i] = m.gain * seg[i];
    m.noisy.samples[i] = clean.samples[i] + m.noise.samples[i];
    peak = std::max(peak, std::abs(m.noisy.samples[i]));
  }
  if (peak > 1.0) {
    m.peak_scale = 1.0 / peak;
    for (auto* w : {&m.clean, &m.noise, &m.noisy}) {
      for (auto& v : w->samples) v *= m.peak_scale;
    }
  }
  return m;
}

// ---- manifests -----------------------------------------------------------

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

Manifest Manifest::parse(const std::string& text, const fs::path& base_dir) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::string clean, noise, snr, split, seed, extra;
    if (!(fields >> clean)) continue;
    auto fail = [&](const std::string& why) {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": " + why);
    };
    if (!(fields >> noise >> snr >> split >> seed)) fail("expected 5 columns");
    if (fields >> extra) fail("unexpected extra column '" + extra + "'");
    ManifestEntry e;
    e.clean_path = fs::path(clean).is_absolute() ? fs::path(clean) : base_dir / clean;
    e.noise_path = fs::path(noise).is_absolute() ? fs::path(noise) : base_dir / noise;
    std::size_t used = 0;
    try {
      e.snr_db = std::stod(snr, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != snr.size() || !std::isfinite(e.snr_db)) fail("bad snr_db '" + snr + "'");
    try {
      e.split = split_from_string(split);
    } catch (const std::invalid_argument& err) {
      fail(err.what());
    }
    try {
      if (seed.empty() || seed[0] == '-') throw std::invalid_argument(seed);
      e.seed = std::stoull(seed, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != seed.size()) fail("bad seed '" + seed + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest Manifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Manifest m = parse(ss.str(), path.parent_path());
  for (const auto& e : m.entries) {
    for (const auto& p : {e.clean_path, e.noise_path}) {
      if (!fs::exists(p)) throw std::runtime_error("manifest: missing file " + p.string());
    }
  }
  return m;
}

void Manifest::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot create " + path.string());
  const fs::path base = path.parent_path();
  out << "# clean_path noise_path snr_db split seed\n";
  for (const auto& e : entries) {
    auto rel = [&](const fs::path& p) {
      auto r = p.lexically_relative(base);
      return r.empty() ? p.string() : r.string();
    };
    out << rel(e.clean_path) << ' ' << rel(e.noise_path) << ' ' << e.snr_db << ' '
        << to_string(e.split) << ' ' << e.seed << '\n';
  }
}

std::vector<ManifestEntry> Manifest::split(Split s) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [s](const ManifestEntry& e) { return e.split == s; });
  return out;
}

std::string entry_id(const ManifestEntry& e) {
  std::ostringstream id;
  id << e.clean_path.stem().string() << '_' << e.noise_path.stem().string() << '_' << e.seed;
  return id.str();
}

// ---- synthetic corpus ----------------------------------------------------

namespace {

struct Formant {
  Real freq;
  Real width;
};

Real formant_gain(Real f, const std::array<Formant, 3>& fm) {
  Real g = 0.0;
  for (const auto& p : fm) {
    const Real d = (f - p.freq) / p.width;
    g += 1.0 / (1.0 + d * d);
  }
  return g;
}

}  // namespace

dsp::Waveform synth_speech(Real seconds, std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(std::lround(seconds * dsp::kSampleRate));
  layers::Rng rng(seed);
  const Real fs = dsp::kSampleRate;

  // Syllables: (start, length, formant targets, f0), separated by short gaps.
  struct Syllable {
    std::size_t start, len;
    std::array<Formant, 3> fm;
    Real f0;
  };
  std::vector<Syllable> syl;
  const Real base_f0 = rng.uniform(95.0, 210.0);
  std::size_t t = static_cast<std::size_t>(rng.uniform(0.02, 0.08) * fs);
  while (t < n) {
    Syllable s;
    s.start = t;
    s.len = static_cast<std::size_t>(rng.uniform(0.12, 0.28) * fs);
    s.fm = {Formant{rng.uniform(300.0, 850.0), rng.uniform(60.0, 120.0)},
            Formant{rng.uniform(900.0, 2300.0), rng.uniform(80.0, 160.0)},
            Formant{rng.uniform(2400.0, 3300.0), rng.uniform(120.0, 220.0)}};
    s.f0 = base_f0 * rng.uniform(0.85, 1.2);
    syl.push_back(s);
    t += s.len + static_cast<std::size_t>(rng.uniform(0.03, 0.15) * fs);
  }

  dsp::Waveform w;
  w.samples.assign(n, 0.0);
  Real phase = 0.0;
  for (const auto& s : syl) {
    const std::size_t end = std::min(n, s.start + s.len);
    const std::size_t harmonics = static_cast<std::size_t>(3800.0 / s.f0);
    std::vector<Real> amp(harmonics);
    for (std::size_t h = 0; h < harmonics; ++h) {
      const Real f = s.f0 * static_cast<Real>(h + 1);
      amp[h] = formant_gain(f, s.fm) / std::sqrt(static_cast<Real>(h + 1));
    }
    for (std::size_t i = s.start; i < end; ++i) {
      const Real u = static_cast<Real>(i - s.start) / static_cast<Real>(s.len);
      const Real env = std::pow(std::sin(std::numbers::pi * u), 2.0);
      // Gentle pitch glide across the syllable.
      const Real f0 = s.f0 * (1.0 + 0.08 * (0.5 - u));
      phase += 2.0 * std::numbers::pi * f0 / fs;
      if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
      Real v = 0.0;
      for (std::size_t h = 0; h < harmonics; ++h) v += amp[h] * std::sin(phase * (h + 1));
      w.samples[i] += env * v;
    }
  }
  Real peak = 0.0;
  for (Real v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (auto& v : w.samples) v *= 0.5 / peak;
  }
  return w;
}

dsp::Waveform white_noise(Real seconds, std::uint64_t seed, Real rms) {
  const std::size_t n = static_cast<std::size_t>(std::lround(seconds * dsp::kSampleRate));
  layers::Rng rng(seed);
  dsp::Waveform w;
  w.samples.resize(n);
  for (auto& v : w.samples) v = rms * rng.normal();
  return w;
}

dsp::Waveform babble_noise(Real seconds, std::uint64_t seed, Real rms) {
  const std::size_t n = static_cast<std::size_t>(std::lround(seconds * dsp::kSampleRate));
  layers::Rng rng(seed);
  dsp::Waveform w;
  w.samples.assign(n, 0.0);
  constexpr int kTalkers = 6;
  for (int k = 0; k < kTalkers; ++k) {
    const auto talker = synth_speech(seconds, rng.next());
    for (std::size_t i = 0; i < n; ++i) w.samples[i] += talker.samples[i];
  }
  for (auto& v : w.samples) v += 0.02 * rng.normal();
  const Real scale = rms / std::sqrt(power(w.samples));
  for (auto& v : w.samples) v *= scale;
  return w;
}

fs::path make_corpus(const fs::path& dir, const CorpusSpec& spec) {
  fs::create_directories(dir / "clean");
  fs::create_directories(dir / "noise");
  layers::Rng rng(spec.seed);
  Manifest m;
  std::size_t index = 0;
  auto emit = [&](Split split, std::size_t count, const std::vector<Real>& snrs) {
    for (std::size_t i = 0; i < count; ++i, ++index) {
      char name[32];
      std::snprintf(name, sizeof name, "utt%03zu.wav", index);
      const fs::path clean = dir / "clean" / name;
      const fs::path noise = dir / "noise" / name;
      write_wav(clean, synth_speech(spec.seconds, rng.next()));
      // Noise is longer than the utterance so mixing picks a real offset.
      const Real noise_seconds = spec.seconds + 0.5;
      write_wav(noise, index % 2 == 0 ? white_noise(noise_seconds, rng.next())
                                      : babble_noise(noise_seconds, rng.next()));
      m.entries.push_back({clean, noise, snrs[i % snrs.size()], split, rng.next() % 1000000});
    }
  };
  emit(Split::train, spec.train, kTrainSnrs);
  emit(Split::val, spec.val, kEvalSnrs);
  emit(Split::test, spec.test, kEvalSnrs);
  const fs::path manifest = dir / "manifest.txt";
  m.save(manifest);
  return manifest;
}

}  // namespace ccdn::data
