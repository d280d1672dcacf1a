#include "ccdn/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_map>

namespace ccdn::trainer {
namespace fs = std::filesystem;
using ad::Var;

namespace {

std::string real_str(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Real parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  Real r = 0.0;
  try {
    r = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(r)) {
    throw std::invalid_argument("train config: " + key + " expects a number, got '" + v + "'");
  }
  return r;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t r = 0;
  try {
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    r = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) {
    throw std::invalid_argument("train config: " + key + " expects a non-negative integer, got '" +
                                v + "'");
  }
  return r;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

// ---- configuration -----------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (!(clip_norm >= 0.0)) fail("clip_norm must be >= 0");
  if (!(crop_seconds * dsp::kSampleRate >= 512.0)) fail("crop_seconds is shorter than one frame");
  loss.validate();
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"train.epochs", std::to_string(epochs)},
      {"train.steps_per_epoch", std::to_string(steps_per_epoch)},
      {"train.lr", real_str(lr)},
      {"train.beta1", real_str(beta1)},
      {"train.beta2", real_str(beta2)},
      {"train.adam_eps", real_str(adam_eps)},
      {"train.clip_norm", real_str(clip_norm)},
      {"train.crop_seconds", real_str(crop_seconds)},
      {"train.seed", std::to_string(seed)},
      {"loss.sisdr_epsilon", real_str(loss.sisdr_epsilon)},
      {"loss.w_mae", real_str(loss.w_mae)},
      {"loss.w_sisdr", real_str(loss.w_sisdr)},
  };
}

void TrainConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "train.epochs") epochs = parse_uint(k, v);
    else if (k == "train.steps_per_epoch") steps_per_epoch = parse_uint(k, v);
    else if (k == "train.lr") lr = parse_real(k, v);
    else if (k == "train.beta1") beta1 = parse_real(k, v);
    else if (k == "train.beta2") beta2 = parse_real(k, v);
    else if (k == "train.adam_eps") adam_eps = parse_real(k, v);
    else if (k == "train.clip_norm") clip_norm = parse_real(k, v);
    else if (k == "train.crop_seconds") crop_seconds = parse_real(k, v);
    else if (k == "train.seed") seed = parse_uint(k, v);
    else if (k == "loss.sisdr_epsilon") loss.sisdr_epsilon = parse_real(k, v);
    else if (k == "loss.w_mae") loss.w_mae = parse_real(k, v);
    else if (k == "loss.w_sisdr") loss.w_sisdr = parse_real(k, v);
    else throw std::invalid_argument("train config: unknown key '" + k + "'");
  }
}

Real lr_for_epoch(Real base_lr, std::size_t epoch) {
  return std::ldexp(base_lr, -static_cast<int>(epoch));
}

// ---- optimizer ---------------------------------------------------------------

OptimState OptimState::for_params(const layers::ParameterStore& store, const TrainConfig& cfg) {
  OptimState s;
  s.lr = cfg.lr;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.eps = cfg.adam_eps;
  for (const auto& p : store.params()) {
    s.m.emplace_back(p.value.size(), 0.0);
    s.v.emplace_back(p.value.size(), 0.0);
  }
  return s;
}

void adam_step(std::deque<layers::Parameter>& params, const std::vector<std::vector<Real>>& grads,
               OptimState& st) {
  if (grads.size() != params.size() || st.m.size() != params.size() ||
      st.v.size() != params.size()) {
    throw ShapeError("adam: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].value.size();
    if (grads[i].size() != n || st.m[i].size() != n || st.v[i].size() != n) {
      throw ShapeError("adam: size mismatch for " + params[i].name);
    }
    for (Real g : grads[i]) {
      if (!std::isfinite(g)) throw NonFiniteError("adam: non-finite gradient for " + params[i].name);
    }
  }
  ++st.step;
  const Real c1 = 1.0 - std::pow(st.beta1, static_cast<Real>(st.step));
  const Real c2 = 1.0 - std::pow(st.beta2, static_cast<Real>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    auto& m = st.m[i];
    auto& v = st.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
      v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
      p[k] -= st.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
    }
  }
}

Real clip_grad_norm(std::vector<std::vector<Real>>& grads, Real max_norm) {
  Real ss = 0.0;
  for (const auto& g : grads) {
    for (Real x : g) ss += x * x;
  }
  const Real norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const Real s = max_norm / norm;
    for (auto& g : grads) {
      for (auto& x : g) x *= s;
    }
  }
  return norm;
}

// ---- examples ------------------------------------------------------------

Example load_example(const data::ManifestEntry& entry) {
  const auto clean = data::read_wav(entry.clean_path);
  const auto noise = data::read_wav(entry.noise_path);
  const auto mix = data::mix_at_snr(clean, noise, entry.snr_db, entry.seed);
  return {data::entry_id(entry), mix.noisy, mix.clean};
}

Example crop(const Example& ex, std::size_t samples, std::uint64_t seed, std::size_t epoch,
             std::size_t index) {
  if (ex.noisy.size() != ex.clean.size()) throw ShapeError("crop: noisy/clean lengths differ");
  Example out{ex.id, {}, {}};
  out.noisy.samples.assign(samples, 0.0);
  out.clean.samples.assign(samples, 0.0);
  std::size_t offset = 0;
  if (ex.clean.size() > samples) {
    const std::uint64_t key = splitmix64(splitmix64(splitmix64(seed) ^ epoch) ^ index);
    offset = key % (ex.clean.size() - samples + 1);
  }
  const std::size_t n = std::min(samples, ex.clean.size() - offset);
  std::copy_n(ex.noisy.samples.begin() + static_cast<std::ptrdiff_t>(offset), n,
              out.noisy.samples.begin());
  std::copy_n(ex.clean.samples.begin() + static_cast<std::ptrdiff_t>(offset), n,
              out.clean.samples.begin());
  return out;
}

StepResult train_step(blocks::Ccdn& model, OptimState& state, const Example& ex,
                      const TrainConfig& cfg) {
  const auto& stft_cfg = model.config().stft;
  const auto noisy = dsp::stft(ex.noisy, stft_cfg);
  const auto clean = dsp::stft(ex.clean, stft_cfg);
  const Shape spec_shape{2, noisy.frames(), noisy.bins()};

  auto& store = model.parameters();
  std::vector<ad::BatchNormStats> saved;
  for (const auto& [name, s] : store.stats()) saved.push_back(s);

  ad::Tape tape;
  layers::Graph g(tape, ad::NormMode::train);
  Var x = tape.constant(spec_shape, noisy.planar());
  auto out = model.forward(g, x);
  Var est_wav = dsp::istft(out.enhanced, stft_cfg, ex.clean.size());
  Var target = tape.constant(spec_shape, clean.planar());
  Var target_wav = tape.constant({ex.clean.size()}, ex.clean.samples);
  auto terms = losses::joint_terms(out.enhanced, target, est_wav, target_wav, cfg.loss);
  auto grads_map = ad::backward(terms.total, tape);

  std::unordered_map<const layers::Parameter*, Var> bound;
  for (const auto& [p, v] : g.bound()) bound.emplace(p, v);
  std::vector<std::vector<Real>> grads;
  grads.reserve(store.params().size());
  for (const auto& p : store.params()) {
    auto it = bound.find(&p);
    grads.push_back(it == bound.end() ? std::vector<Real>(p.value.size(), 0.0)
                                      : grads_map.of(it->second));
  }

  StepResult r;
  r.loss = terms.total.item();
  r.mae = terms.mae.item();
  r.si_sdr = terms.si_sdr.item();
  auto restore = [&] {
    std::size_t i = 0;
    for (auto& [name, s] : store.stats()) s = saved[i++];
  };
  if (!std::isfinite(r.loss)) {
    restore();
    throw NonFiniteError("train step: non-finite loss");
  }
  r.grad_norm = clip_grad_norm(grads, cfg.clip_norm);
  if (!std::isfinite(r.grad_norm)) {
    restore();
    throw NonFiniteError("train step: non-finite gradient norm");
  }
  adam_step(store.params(), grads, state);
  return r;
}

std::string format_log_row(const TrainLogRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%llu,%.9g,%.17g,%.17g,%.17g,%.17g", row.epoch,
                static_cast<unsigned long long>(row.step), row.lr, row.loss, row.mae, row.si_sdr,
                row.grad_norm);
  return buf;
}

TrainState TrainState::fresh(const blocks::ModelConfig& model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.model_config = model_cfg;
  s.config = cfg;
  s.model = std::make_unique<blocks::Ccdn>(model_cfg);
  s.optim = OptimState::for_params(s.model->parameters(), cfg);
  s.rng = layers::Rng(splitmix64(cfg.seed));
  return s;
}

// ---- checkpoints ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'C', 'D', 'N', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::span<const std::uint8_t> b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto c : b) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(Real v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void reals(const std::vector<Real>& v) {
    for (Real x : v) f64(x);
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  Real f64() { return std::bit_cast<Real>(u64()); }
  std::string str() {
    const auto n = u64();
    auto s = take(n);
    return {s.begin(), s.end()};
  }
  std::vector<Real> reals(std::size_t n) {
    if (n > remaining() / 8) throw CheckpointError("checkpoint: truncated array");
    std::vector<Real> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) throw CheckpointError("checkpoint: truncated file");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::string config_text(const TrainState& s) {
  std::string text;
  for (const auto& [k, v] : s.model_config.to_map()) text += k + " = " + v + "\n";
  for (const auto& [k, v] : s.config.to_map()) text += k + " = " + v + "\n";
  return text;
}

}  // namespace

std::vector<std::uint8_t> serialize(const TrainState& s) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.str(config_text(s));
  w.u64(s.epoch);
  w.u64(s.step);
  std::ostringstream rng;
  rng << s.rng.engine();
  w.str(rng.str());
  w.u64(s.optim.step);
  w.f64(s.optim.lr);

  const auto& params = s.model->parameters().params();
  w.u64(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) w.u64(d);
    w.u8(0);  // element type: f64
    w.reals(p.value);
    w.reals(s.optim.m[i]);
    w.reals(s.optim.v[i]);
  }
  const auto& stats = s.model->parameters().stats();
  w.u64(stats.size());
  for (const auto& [name, st] : stats) {
    w.str(name);
    w.u64(st.running_mean.size());
    w.reals(st.running_mean);
    w.reals(st.running_var);
    w.u64(st.batches_tracked);
  }
  w.u64(fnv1a(w.bytes()));
  return std::move(w.bytes());
}

TrainState deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw CheckpointError("checkpoint: bad magic (not a checkpoint file)");
  }
  {
    Reader tail(bytes.subspan(bytes.size() - 8));
    if (tail.u64() != fnv1a(bytes.first(bytes.size() - 8))) {
      throw CheckpointError("checkpoint: checksum mismatch (file is corrupt)");
    }
  }
  Reader r(bytes.first(bytes.size() - 8));
  for (int i = 0; i < 8; ++i) r.u8();
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  std::map<std::string, std::string> model_kv, train_kv;
  {
    std::istringstream in(r.str());
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) continue;
      const std::string k = line.substr(0, eq), v = line.substr(eq + 3);
      (k.starts_with("train.") || k.starts_with("loss.") ? train_kv : model_kv)[k] = v;
    }
  }
  blocks::ModelConfig mc;
  TrainConfig tc;
  try {
    mc.apply(model_kv);
    tc.apply(train_kv);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: bad config echo: ") + e.what());
  }
  TrainState s = TrainState::fresh(mc, tc);
  s.epoch = r.u64();
  s.step = r.u64();
  {
    std::istringstream in(r.str());
    in >> s.rng.engine();
    if (!in) throw CheckpointError("checkpoint: bad RNG state");
  }
  s.optim.step = r.u64();
  s.optim.lr = r.f64();

  auto& store = s.model->parameters();
  const auto count = r.u64();
  if (count != store.params().size()) {
    throw CheckpointError("checkpoint: " + std::to_string(count) + " parameters, model has " +
                          std::to_string(store.params().size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    auto* p = store.find(name);
    if (!p) throw CheckpointError("checkpoint: unknown parameter " + name);
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != p->shape) throw CheckpointError("checkpoint: shape mismatch for " + name);
    if (r.u8() != 0) throw CheckpointError("checkpoint: unsupported element type for " + name);
    const std::size_t n = numel(shape);
    std::size_t idx = 0;
    while (&store.params()[idx] != p) ++idx;
    p->value = r.reals(n);
    s.optim.m[idx] = r.reals(n);
    s.optim.v[idx] = r.reals(n);
  }
  const auto nstats = r.u64();
  if (nstats != store.stats().size()) throw CheckpointError("checkpoint: statistics count differs");
  for (std::size_t i = 0; i < nstats; ++i) {
    const std::string name = r.str();
    auto* st = store.find_stats(name);
    if (!st) throw CheckpointError("checkpoint: unknown statistics " + name);
    const auto ch = r.u64();
    if (ch != st->running_mean.size()) throw CheckpointError("checkpoint: channel mismatch " + name);
    st->running_mean = r.reals(ch);
    st->running_var = r.reals(ch);
    st->batches_tracked = r.u64();
  }
  if (r.remaining() != 0) throw CheckpointError("checkpoint: trailing bytes");
  return s;
}

void save_checkpoint(const fs::path& path, const TrainState& s) {
  const auto bytes = serialize(s);
  fs::path partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot create " + partial.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + partial.string());
  }
  fs::rename(partial, path);
}

TrainState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

// ---- training loop -------------------------------------------------------

std::vector<TrainLogRow> train(TrainState& state, const std::vector<Example>& examples,
                               const fs::path& out_dir, const TrainHooks& hooks) {
  state.config.validate();
  if (examples.empty()) throw std::invalid_argument("train: the training split is empty");
  fs::create_directories(out_dir);

  auto checkpoint = [&](std::size_t epoch) {
    const fs::path p = out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
    save_checkpoint(p, state);
    save_checkpoint(out_dir / "last.ckpt", state);
    if (hooks.on_checkpoint) hooks.on_checkpoint(epoch, p);
  };

  const fs::path log_path = out_dir / "train_log.csv";
  const bool fresh = state.epoch == 0 && state.step == 0;
  std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("train: cannot write " + log_path.string());
  if (fresh) {
    log << kLogHeader << '\n';
    checkpoint(0);
  }

  const std::size_t crop_len =
      static_cast<std::size_t>(std::lround(state.config.crop_seconds * dsp::kSampleRate));
  std::vector<TrainLogRow> rows;
  while (state.epoch < state.config.epochs) {
    const std::size_t epoch = state.epoch;
    state.optim.lr = lr_for_epoch(state.config.lr, epoch);
    const std::size_t steps =
        state.config.steps_per_epoch ? state.config.steps_per_epoch : examples.size();
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < steps; ++k) {
      if (k % examples.size() == 0) {
        // Fisher-Yates with the session RNG.
        order.resize(examples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[state.rng.next() % i]);
        }
      }
      const std::size_t index = order[k % examples.size()];
      const Example ex = crop(examples[index], crop_len, state.config.seed, epoch, index);
      const StepResult r = train_step(*state.model, state.optim, ex, state.config);
      ++state.step;
      TrainLogRow row{epoch, state.step, state.optim.lr, r.loss, r.mae, r.si_sdr, r.grad_norm};
      log << format_log_row(row) << '\n';
      log.flush();
      rows.push_back(row);
      if (hooks.on_step) hooks.on_step(row);
    }
    ++state.epoch;
    checkpoint(state.epoch);
  }
  return rows;
}

}  // namespace ccdn::trainer
