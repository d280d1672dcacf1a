#include "ccdn/blocks.hpp"

#include <cmath>

namespace ccdn::blocks {

using ad::Var;
using layers::Conv;
using layers::ConvSpec;

namespace {

std::size_t same_pad(std::size_t kernel) { return (kernel - 1) / 2; }

// Strided frequency conv used by every encoder stage: time taps 1.
ConvSpec freq_down(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride) {
  return ConvSpec::conv2d(in, out, {1, kernel}, {1, stride}, {0, same_pad(kernel)});
}

// Time-axis conv over a [C, T, F] map.
ConvSpec time_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t dilation = 1) {
  return ConvSpec::conv2d(in, out, {kernel, 1}, {1, 1}, {same_pad(kernel) * dilation, 0},
                          {dilation, 1});
}

std::size_t down_size(std::size_t bins, std::size_t kernel, std::size_t stride) {
  return freq_down(1, 1, kernel, stride).output_shape({1, 1, bins})[2];
}

Var as_plane(Var v, std::size_t frames, std::size_t bins) {
  return ad::reshape(v, {1, frames, bins});
}

}  // namespace

// ---- configuration ---------------------------------------------------------

std::string to_string(Scale s) {
  switch (s) {
    case Scale::toy:
      return "toy";
    case Scale::desk:
      return "desk";
    case Scale::paper:
      return "paper";
  }
  return "desk";
}

Scale scale_from_string(const std::string& s) {
  if (s == "toy") return Scale::toy;
  if (s == "desk") return Scale::desk;
  if (s == "paper") return Scale::paper;
  throw std::invalid_argument("unknown scale '" + s + "' (expected toy, desk or paper)");
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.scale = Scale::toy;
  c.feb.channels = 4;
  c.mb.channels = 4;
  c.comeb.channels = 4;
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.scale = Scale::desk;
  c.feb.channels = 8;
  c.mb.channels = 16;
  c.comeb.channels = 16;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.scale = Scale::paper;
  c.feb.channels = 256;
  c.mb.channels = 256;
  c.comeb.channels = 512;
  return c;
}

ModelConfig ModelConfig::for_scale(Scale s) {
  switch (s) {
    case Scale::toy:
      return toy();
    case Scale::paper:
      return paper();
    case Scale::desk:
      break;
  }
  return desk();
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("model config: " + field + " " + why);
  };
  stft.validate();
  if (feb.channels == 0) fail("feb.channels", "must be positive");
  if (mb.channels == 0) fail("mb.channels", "must be positive");
  if (comeb.channels == 0) fail("comeb.channels", "must be positive");
  if (scale != Scale::paper) {
    if (feb.channels > 16) fail("feb.channels", "must be <= 16 unless scale = paper");
    if (mb.channels > 16) fail("mb.channels", "must be <= 16 unless scale = paper");
    if (comeb.channels > 16) fail("comeb.channels", "must be <= 16 unless scale = paper");
  }
  if (feb.glu_kernel % 2 == 0) fail("feb.glu_kernel", "must be odd");
  if (feb.u_layers == 0 || feb.u_kernel == 0 || feb.u_stride == 0) {
    fail("feb.u_*", "must be positive");
  }
  if (mb.heads == 0 || mb.channels % mb.heads != 0) fail("mb.heads", "must divide mb.channels");
  for (auto [name, k] : {std::pair{"mb.left_kernel", mb.left_kernel},
                         std::pair{"mb.right_kernel", mb.right_kernel},
                         std::pair{"comeb.left_kernel", comeb.left_kernel},
                         std::pair{"comeb.right_kernel", comeb.right_kernel},
                         std::pair{"comeb.dilated_kernel", comeb.dilated_kernel}}) {
    if (k % 2 == 0) fail(name, "must be odd");
  }
  if (mb.groups == 0 || mb.units_per_group == 0) fail("mb.groups", "must be positive");
  if (comeb.groups == 0 || comeb.dilations.empty()) fail("comeb.groups", "must be positive");
  for (auto d : comeb.dilations) {
    if (d == 0) fail("comeb.dilations", "must be positive");
  }
  if (comeb.feature_projection == 0) fail("comeb.feature_projection", "must be positive");

  // Every frequency chain must stay non-empty.
  auto chain = [&](const char* name, std::size_t layers, std::size_t kernel, std::size_t stride) {
    if (layers == 0 || kernel == 0 || stride == 0) fail(name, "must be positive");
    std::size_t bins = stft.bins();
    for (std::size_t i = 0; i < layers; ++i) {
      try {
        bins = down_size(bins, kernel, stride);
      } catch (const ShapeError&) {
        fail(name, "collapses the frequency axis");
      }
    }
  };
  chain("feb.u_layers", feb.u_layers, feb.u_kernel, feb.u_stride);
  chain("mb.layers", mb.layers, mb.kernel, mb.stride);
  chain("comeb.layers", comeb.layers, comeb.kernel, comeb.stride);
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  std::map<std::string, std::string> kv;
  auto put = [&](const std::string& k, std::size_t v) { kv[k] = std::to_string(v); };
  kv["scale"] = to_string(scale);
  kv["seed"] = std::to_string(seed);
  put("stft.fft_size", stft.fft_size);
  put("stft.hop", stft.hop);
  put("feb.channels", feb.channels);
  put("feb.glu_kernel", feb.glu_kernel);
  put("feb.u_blocks", feb.u_blocks);
  put("feb.u_layers", feb.u_layers);
  put("feb.u_kernel", feb.u_kernel);
  put("feb.u_stride", feb.u_stride);
  put("mb.channels", mb.channels);
  put("mb.layers", mb.layers);
  put("mb.kernel", mb.kernel);
  put("mb.stride", mb.stride);
  put("mb.groups", mb.groups);
  put("mb.units_per_group", mb.units_per_group);
  put("mb.heads", mb.heads);
  put("mb.left_kernel", mb.left_kernel);
  put("mb.right_kernel", mb.right_kernel);
  kv["mb.attention_scale"] =
      mb.attention_scale == layers::AttentionScale::head_dim ? "head_dim" : "sequence_length";
  put("comeb.channels", comeb.channels);
  put("comeb.layers", comeb.layers);
  put("comeb.kernel", comeb.kernel);
  put("comeb.stride", comeb.stride);
  put("comeb.groups", comeb.groups);
  std::string dil;
  for (std::size_t i = 0; i < comeb.dilations.size(); ++i) {
    if (i) dil += ',';
    dil += std::to_string(comeb.dilations[i]);
  }
  kv["comeb.dilations"] = dil;
  put("comeb.left_kernel", comeb.left_kernel);
  put("comeb.right_kernel", comeb.right_kernel);
  put("comeb.dilated_kernel", comeb.dilated_kernel);
  put("comeb.feature_projection", comeb.feature_projection);
  return kv;
}

namespace {

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-') {
    throw std::invalid_argument("model config: " + key + " expects a non-negative integer, got '" +
                                v + "'");
  }
  return static_cast<std::size_t>(n);
}

}  // namespace

void ModelConfig::apply(const std::map<std::string, std::string>& kv) {
  if (auto it = kv.find("scale"); it != kv.end()) {
    const auto keep_seed = seed;
    const auto keep_stft = stft;
    *this = for_scale(scale_from_string(it->second));
    seed = keep_seed;
    stft = keep_stft;
  }
  std::map<std::string, std::size_t*> counts{
      {"stft.fft_size", &stft.fft_size},
      {"stft.hop", &stft.hop},
      {"feb.channels", &feb.channels},
      {"feb.glu_kernel", &feb.glu_kernel},
      {"feb.u_blocks", &feb.u_blocks},
      {"feb.u_layers", &feb.u_layers},
      {"feb.u_kernel", &feb.u_kernel},
      {"feb.u_stride", &feb.u_stride},
      {"mb.channels", &mb.channels},
      {"mb.layers", &mb.layers},
      {"mb.kernel", &mb.kernel},
      {"mb.stride", &mb.stride},
      {"mb.groups", &mb.groups},
      {"mb.units_per_group", &mb.units_per_group},
      {"mb.heads", &mb.heads},
      {"mb.left_kernel", &mb.left_kernel},
      {"mb.right_kernel", &mb.right_kernel},
      {"comeb.channels", &comeb.channels},
      {"comeb.layers", &comeb.layers},
      {"comeb.kernel", &comeb.kernel},
      {"comeb.stride", &comeb.stride},
      {"comeb.groups", &comeb.groups},
      {"comeb.left_kernel", &comeb.left_kernel},
      {"comeb.right_kernel", &comeb.right_kernel},
      {"comeb.dilated_kernel", &comeb.dilated_kernel},
      {"comeb.feature_projection", &comeb.feature_projection},
  };
  for (const auto& [key, value] : kv) {
    if (key == "scale") continue;
    if (auto it = counts.find(key); it != counts.end()) {
      *it->second = parse_count(key, value);
    } else if (key == "seed") {
      seed = parse_count(key, value);
    } else if (key == "mb.attention_scale") {
      if (value == "head_dim") {
        mb.attention_scale = layers::AttentionScale::head_dim;
      } else if (value == "sequence_length") {
        mb.attention_scale = layers::AttentionScale::sequence_length;
      } else {
        throw std::invalid_argument("model config: mb.attention_scale must be head_dim or "
                                    "sequence_length");
      }
    } else if (key == "comeb.dilations") {
      std::vector<std::size_t> d;
      std::size_t start = 0;
      while (start <= value.size()) {
        const auto comma = value.find(',', start);
        const auto end = comma == std::string::npos ? value.size() : comma;
        d.push_back(parse_count(key, value.substr(start, end - start)));
        start = end + 1;
      }
      comeb.dilations = std::move(d);
    } else {
      throw std::invalid_argument("model config: unknown key '" + key + "'");
    }
  }
}

// ---- compensation -----------------------------------------------------------

CompensationResult compensate(const dsp::ComplexSpectrogram& ri_prev, const Mask& mask) {
  if (mask.frames != ri_prev.frames() || mask.bins != ri_prev.bins() ||
      mask.values.size() != mask.frames * mask.bins) {
    throw ShapeError("compensate: mask shape does not match the spectrogram");
  }
  const auto mp = dsp::mag_phase(ri_prev);
  CompensationResult r;
  r.frames = mask.frames;
  r.bins = mask.bins;
  const std::size_t n = mask.values.size();
  r.smag.resize(n);
  r.comp_r.resize(n);
  r.comp_i.resize(n);
  r.r.resize(n);
  r.i.resize(n);
  const auto& d = ri_prev.data();
  for (std::size_t k = 0; k < n; ++k) {
    r.smag[k] = mp.magnitude[k] * mask.values[k];
    r.comp_r[k] = r.smag[k] * std::cos(mp.phase[k]);
    r.comp_i[k] = r.smag[k] * std::sin(mp.phase[k]);
    r.r[k] = d[2 * k] + r.comp_r[k];
    r.i[k] = d[2 * k + 1] + r.comp_i[k];
  }
  return r;
}

CompensationVars compensate(Var ri_prev, Var mask) {
  if (ri_prev.rank() != 3 || ri_prev.dim(0) != 2) {
    throw ShapeError("compensate: expected [2, T, F], got " + shape_str(ri_prev.shape()));
  }
  const std::size_t t = ri_prev.dim(1), f = ri_prev.dim(2);
  if (mask.shape() != Shape{t, f}) {
    throw ShapeError("compensate: mask " + shape_str(mask.shape()) + " vs spectrum " +
                     shape_str(ri_prev.shape()));
  }
  Var re = ad::reshape(ad::slice(ri_prev, 0, 0, 1), {t, f});
  Var im = ad::reshape(ad::slice(ri_prev, 0, 1, 2), {t, f});
  Var mag = ad::sqrt(ad::add(ad::square(re), ad::square(im)));
  Var theta = ad::atan2(im, re);
  CompensationVars out;
  out.smag = ad::mul(mag, mask);
  out.comp_r = ad::mul(out.smag, ad::cos(theta));
  out.comp_i = ad::mul(out.smag, ad::sin(theta));
  out.r = ad::add(re, out.comp_r);
  out.i = ad::add(im, out.comp_i);
  out.planar = ad::concat({as_plane(out.r, t, f), as_plane(out.i, t, f)}, 0);
  return out;
}

// ---- U-block / FEB ---------------------------------------------------------

UBlock::UBlock(ParameterStore& store, const std::string& name, std::size_t channels,
               std::size_t bins, const FebConfig& cfg, layers::Rng& rng) {
  std::size_t f = bins;
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < cfg.u_layers; ++i) {
    const ConvSpec spec = freq_down(channels, channels, cfg.u_kernel, cfg.u_stride);
    enc_.emplace_back(store, name + ".enc" + std::to_string(i), spec, rng);
    sizes.push_back(f);
    f = spec.output_shape({channels, 1, f})[2];
  }
  lstm_ = layers::Lstm(store, name + ".lstm", {channels, channels}, rng);
  for (std::size_t i = 0; i < cfg.u_layers; ++i) {
    const ConvSpec spec =
        freq_down(channels, channels, cfg.u_kernel, cfg.u_stride).inverse({1, sizes[i]});
    dec_.emplace_back(store, name + ".dec" + std::to_string(i), spec, rng);
  }
}

Var UBlock::operator()(Graph& g, Var x) const {
  std::vector<Var> skips;
  Var h = x;
  for (const auto& e : enc_) {
    h = ad::elu(e(g, h));
    skips.push_back(h);
  }
  // LSTM over time, one sequence per frequency row: [F, T, C].
  h = ad::permute(lstm_(g, ad::permute(h, {2, 1, 0})), {2, 1, 0});
  for (std::size_t i = dec_.size(); i-- > 0;) {
    h = dec_[i](g, ad::add(h, skips[i]));
    if (i > 0) h = ad::elu(h);
  }
  return h;
}

FeatureExtractor::FeatureExtractor(ParameterStore& store, const FebConfig& cfg, std::size_t bins,
                                   layers::Rng& rng) {
  const std::size_t k = cfg.glu_kernel;
  glu_conv_ = Conv(store, "feb.glu",
                   ConvSpec::conv2d(2, 2 * cfg.channels, {k, k}, {1, 1}, {same_pad(k), same_pad(k)}),
                   rng);
  for (std::size_t i = 0; i < cfg.u_blocks; ++i) {
    const std::string name = "feb.stage" + std::to_string(i);
    norms_.emplace_back(store, name + ".ln", cfg.channels, bins);
    ublocks_.emplace_back(store, name + ".ublock", cfg.channels, bins, cfg, rng);
  }
}

Var FeatureExtractor::gated(Graph& g, Var x) const { return layers::glu(glu_conv_(g, x)); }

Var FeatureExtractor::operator()(Graph& g, Var x) const {
  if (x.rank() != 3 || x.dim(0) != 2) {
    throw ShapeError("feb: expected a [2, T, F] complex spectrum, got " + shape_str(x.shape()));
  }
  Var h = gated(g, x);
  for (std::size_t i = 0; i < ublocks_.size(); ++i) {
    h = ad::add(h, ublocks_[i](g, ad::elu(norms_[i](g, h))));
  }
  return h;
}

// ---- residual units --------------------------------------------------------

AttentionUnit::AttentionUnit(ParameterStore& store, const std::string& name,
                             const MaskBlockConfig& cfg, layers::Rng& rng) {
  const std::size_t c = cfg.channels;
  left_ = Conv(store, name + ".left", time_conv(c, 2 * c, cfg.left_kernel), rng);
  layers::MhsaConfig m{cfg.heads, c, layers::AttentionAxis::time, cfg.attention_scale};
  time_ = layers::Mhsa(store, name + ".mhsa_time", m, rng);
  m.axis = layers::AttentionAxis::frequency;
  freq_ = layers::Mhsa(store, name + ".mhsa_freq", m, rng);
  right_ = Conv(store, name + ".right", time_conv(c, c, cfg.right_kernel), rng);
}

Var AttentionUnit::gate(Graph& g, Var x) const { return layers::glu(left_(g, x)); }

Var AttentionUnit::operator()(Graph& g, Var x) const {
  Var u = gate(g, x);
  Var attended = ad::add(time_.on_map(g, u), freq_.on_map(g, u));
  return ad::add(x, right_(g, attended));
}

DilatedUnit::DilatedUnit(ParameterStore& store, const std::string& name,
                         const ComplexBlockConfig& cfg, std::size_t dilation, layers::Rng& rng) {
  const std::size_t c = cfg.channels;
  left_ = Conv(store, name + ".left", time_conv(c, 2 * c, cfg.left_kernel), rng);
  dilated_ = Conv(store, name + ".dilated", time_conv(c, c, cfg.dilated_kernel, dilation), rng);
  right_ = Conv(store, name + ".right", time_conv(c, c, cfg.right_kernel), rng);
}

Var DilatedUnit::operator()(Graph& g, Var x) const {
  Var u = layers::glu(left_(g, x));
  return ad::add(x, right_(g, ad::elu(dilated_(g, u))));
}

// ---- encoder / decoder -----------------------------------------------------

EncoderDecoder::EncoderDecoder(ParameterStore& store, const std::string& name,
                               std::size_t in_channels, std::size_t channels, std::size_t layers,
                               std::size_t kernel, std::size_t stride, std::size_t bins,
                               layers::Rng& rng) {
  std::size_t f = bins;
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < layers; ++i) {
    // No conv bias: the batch norm that follows removes any per-channel offset.
    const ConvSpec spec = freq_down(i == 0 ? in_channels : channels, channels, kernel, stride);
    enc_.emplace_back(store, name + ".enc" + std::to_string(i), spec, rng,
                      /*with_bias=*/false);
    enc_norm_.emplace_back(store, name + ".enc" + std::to_string(i) + ".bn", channels);
    sizes.push_back(f);
    f = spec.output_shape({spec.in_channels, 1, f})[2];
  }
  bottleneck_bins_ = f;
  for (std::size_t i = 0; i < layers; ++i) {
    const ConvSpec spec = freq_down(channels, channels, kernel, stride).inverse({1, sizes[i]});
    dec_.emplace_back(store, name + ".dec" + std::to_string(i), spec, rng,
                      /*with_bias=*/false);
    dec_norm_.emplace_back(store, name + ".dec" + std::to_string(i) + ".bn", channels);
  }
}

EncoderDecoder::Encoded EncoderDecoder::encode(Graph& g, Var x) const {
  Encoded e;
  Var h = x;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    h = ad::elu(enc_norm_[i](g, enc_[i](g, h)));
    e.skips.push_back(h);
  }
  e.bottleneck = h;
  return e;
}

Var EncoderDecoder::decode(Graph& g, Var middle, const std::vector<Var>& skips) const {
  Var h = middle;
  for (std::size_t i = dec_.size(); i-- > 0;) {
    h = ad::elu(dec_norm_[i](g, dec_[i](g, ad::add(h, skips[i]))));
  }
  return h;
}

// ---- mask block --------------------------------------------------------------

MaskBlock::MaskBlock(ParameterStore& store, const MaskBlockConfig& cfg, std::size_t in_channels,
                     std::size_t bins, layers::Rng& rng)
    : cfg_(cfg),
      body_(store, "mb", in_channels, cfg.channels, cfg.layers, cfg.kernel, cfg.stride, bins, rng) {
  for (std::size_t gi = 0; gi < cfg.groups; ++gi) {
    for (std::size_t u = 0; u < cfg.units_per_group; ++u) {
      units_.emplace_back(store, "mb.group" + std::to_string(gi) + ".unit" + std::to_string(u),
                          cfg, rng);
    }
  }
  out_ = Conv(store, "mb.out", ConvSpec::conv2d(cfg.channels, 1, {1, 1}), rng);
}

Var MaskBlock::operator()(Graph& g, Var features) const {
  auto enc = body_.encode(g, features);
  Var h = enc.bottleneck;
  Var skip_sum;
  for (std::size_t k = 0; k < units_.size(); ++k) {
    h = units_[k](g, h);
    if ((k + 1) % cfg_.units_per_group == 0) skip_sum = skip_sum.valid() ? ad::add(skip_sum, h) : h;
  }
  Var dec = body_.decode(g, skip_sum, enc.skips);
  Var logits = out_(g, dec);
  return ad::reshape(ad::sigmoid(logits), {logits.dim(1), logits.dim(2)});
}

// ---- complex block ---------------------------------------------------------

ComplexBlock::ComplexBlock(ParameterStore& store, const ComplexBlockConfig& cfg,
                           std::size_t feature_channels, std::size_t bins, layers::Rng& rng)
    : cfg_(cfg) {
  projection_ = Conv(store, "comeb.projection",
                     ConvSpec::conv2d(feature_channels, cfg.feature_projection, {1, 1}), rng);
  body_ = EncoderDecoder(store, "comeb", 2 + cfg.feature_projection, cfg.channels, cfg.layers,
                         cfg.kernel, cfg.stride, bins, rng);
  for (std::size_t gi = 0; gi < cfg.groups; ++gi) {
    for (std::size_t u = 0; u < cfg.dilations.size(); ++u) {
      units_.emplace_back(store, "comeb.group" + std::to_string(gi) + ".unit" + std::to_string(u),
                          cfg, cfg.dilations[u], rng);
    }
  }
  out_ = Conv(store, "comeb.out", ConvSpec::conv2d(cfg.channels, 2, {1, 1}), rng);
}

Var ComplexBlock::assemble_input(Graph& g, Var noisy, Var features) const {
  return ad::concat({noisy, projection_(g, features)}, 0);
}

Var ComplexBlock::operator()(Graph& g, Var input) const {
  auto enc = body_.encode(g, input);
  Var h = enc.bottleneck;
  Var skip_sum;
  for (std::size_t k = 0; k < units_.size(); ++k) {
    h = units_[k](g, h);
    if ((k + 1) % cfg_.dilations.size() == 0) skip_sum = skip_sum.valid() ? ad::add(skip_sum, h) : h;
  }
  return out_(g, body_.decode(g, skip_sum, enc.skips));
}

std::size_t ComplexBlock::receptive_radius() const {
  std::size_t r = 0;
  for (const auto& u : units_) {
    r += same_pad(cfg_.left_kernel) + same_pad(cfg_.dilated_kernel) * u.dilation() +
         same_pad(cfg_.right_kernel);
  }
  return r;
}

// ---- full model ------------------------------------------------------------

Ccdn::Ccdn(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  layers::Rng rng(cfg_.seed);
  const std::size_t bins = cfg_.stft.bins();
  feb_ = FeatureExtractor(store_, cfg_.feb, bins, rng);
  mb_ = MaskBlock(store_, cfg_.mb, cfg_.feb.channels, bins, rng);
  comeb_ = ComplexBlock(store_, cfg_.comeb, cfg_.feb.channels, bins, rng);
}

ModelOutputs Ccdn::forward(Graph& g, Var noisy) const {
  if (noisy.rank() != 3 || noisy.dim(0) != 2 || noisy.dim(2) != cfg_.stft.bins()) {
    throw ShapeError("ccdn: expected [2, T, " + std::to_string(cfg_.stft.bins()) + "], got " +
                     shape_str(noisy.shape()));
  }
  ModelOutputs out;
  out.features = feb_(g, noisy);
  out.mask = mb_(g, out.features);
  out.complex = comeb_(g, comeb_.assemble_input(g, noisy, out.features));
  out.compensation = compensate(out.complex, out.mask);
  out.enhanced = out.compensation.planar;
  return out;
}

dsp::ComplexSpectrogram Ccdn::enhance(const dsp::ComplexSpectrogram& noisy) {
  ad::Tape tape;
  Graph g(tape, ad::NormMode::infer, /*requires_grad=*/false);
  Var x = tape.constant({2, noisy.frames(), noisy.bins()}, noisy.planar());
  auto out = forward(g, x);
  return dsp::ComplexSpectrogram::from_planar(noisy.frames(), noisy.bins(), out.enhanced.value());
}

dsp::Waveform Ccdn::enhance(const dsp::Waveform& noisy) {
  const auto spec = dsp::stft(noisy, cfg_.stft);
  return dsp::istft(enhance(spec), cfg_.stft, noisy.size());
}

// ---- introspection -----------------------------------------------------------

std::size_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  ParameterStore store(/*allocate=*/false);
  layers::Rng rng(0);
  const std::size_t bins = cfg.stft.bins();
  FeatureExtractor feb(store, cfg.feb, bins, rng);
  MaskBlock mb(store, cfg.mb, cfg.feb.channels, bins, rng);
  ComplexBlock comeb(store, cfg.comeb, cfg.feb.channels, bins, rng);
  return store.param_count();
}

std::vector<ShapeRow> shape_table(const ModelConfig& cfg, std::size_t frames) {
  cfg.validate();
  std::vector<ShapeRow> rows;
  const std::size_t bins = cfg.stft.bins();
  auto conv_rows = [&](const std::string& block, const std::string& prefix, Shape in,
                       std::size_t layers, std::size_t kernel, std::size_t stride,
                       std::size_t in_ch, std::size_t ch, bool with_bias) {
    std::vector<Shape> sizes;
    for (std::size_t i = 0; i < layers; ++i) {
      auto spec = freq_down(i == 0 ? in_ch : ch, ch, kernel, stride);
      sizes.push_back(in);
      in = spec.output_shape(in);
      rows.push_back({block, prefix + ".enc" + std::to_string(i), in,
                      numel(spec.weight_shape()) + (with_bias ? spec.out_channels : 0)});
    }
    return std::pair{in, sizes};
  };

  rows.push_back({"input", "noisy RI", {2, frames, bins}, 0});
  const std::size_t fc = cfg.feb.channels;
  const std::size_t k = cfg.feb.glu_kernel;
  rows.push_back({"feb", "glu", {fc, frames, bins}, 2 * fc * 2 * k * k + 2 * fc});
  for (std::size_t s = 0; s < cfg.feb.u_blocks; ++s) {
    const std::string p = "stage" + std::to_string(s);
    rows.push_back({"feb", p + ".ln", {fc, frames, bins}, 2 * fc * bins});
    auto [bottom, sizes] =
        conv_rows("feb", p + ".ublock", {fc, frames, bins}, cfg.feb.u_layers, cfg.feb.u_kernel,
                  cfg.feb.u_stride, fc, fc, true);
    rows.push_back({"feb", p + ".ublock.lstm", bottom, 4 * fc * (2 * fc + 1)});
    for (std::size_t i = sizes.size(); i-- > 0;) {
      rows.push_back({"feb", p + ".ublock.dec" + std::to_string(i), sizes[i],
                      fc * fc * cfg.feb.u_kernel + fc});
    }
  }

  const std::size_t mc = cfg.mb.channels;
  auto [mb_bottom, mb_sizes] =
      conv_rows("mb", "mb", {fc, frames, bins}, cfg.mb.layers, cfg.mb.kernel, cfg.mb.stride, fc, mc, false);
  for (auto& r : rows) {
    if (r.block == "mb") r.params += 2 * mc;  // batch-norm affine
  }
  const std::size_t attn_unit = 2 * mc * mc * cfg.mb.left_kernel + 2 * mc + 8 * mc * mc +
                                mc * mc * cfg.mb.right_kernel + mc;
  for (std::size_t u = 0; u < cfg.mb.groups * cfg.mb.units_per_group; ++u) {
    rows.push_back({"mb", "unit" + std::to_string(u), mb_bottom, attn_unit});
  }
  for (std::size_t i = mb_sizes.size(); i-- > 0;) {
    Shape s = mb_sizes[i];
    s[0] = mc;
    rows.push_back({"mb", "mb.dec" + std::to_string(i), s, mc * mc * cfg.mb.kernel + 2 * mc});
  }
  rows.push_back({"mb", "mask", {frames, bins}, mc + 1});

  const std::size_t cc = cfg.comeb.channels;
  const std::size_t in_c = 2 + cfg.comeb.feature_projection;
  rows.push_back({"comeb", "projection", {cfg.comeb.feature_projection, frames, bins},
                  fc * cfg.comeb.feature_projection + cfg.comeb.feature_projection});
  rows.push_back({"comeb", "input", {in_c, frames, bins}, 0});
  const std::size_t first = rows.size();
  auto [cb_bottom, cb_sizes] = conv_rows("comeb", "comeb", {in_c, frames, bins}, cfg.comeb.layers,
                                         cfg.comeb.kernel, cfg.comeb.stride, in_c, cc, false);
  for (std::size_t r = first; r < rows.size(); ++r) rows[r].params += 2 * cc;
  std::size_t u = 0;
  for (std::size_t gi = 0; gi < cfg.comeb.groups; ++gi) {
    for (auto d : cfg.comeb.dilations) {
      rows.push_back({"comeb", "unit" + std::to_string(u++) + " (dilation " + std::to_string(d) + ")",
                      cb_bottom,
                      2 * cc * cc * cfg.comeb.left_kernel + 2 * cc +
                          cc * cc * cfg.comeb.dilated_kernel + cc +
                          cc * cc * cfg.comeb.right_kernel + cc});
    }
  }
  for (std::size_t i = cb_sizes.size(); i-- > 0;) {
    Shape s = cb_sizes[i];
    s[0] = cc;
    rows.push_back({"comeb", "comeb.dec" + std::to_string(i), s,
                    cc * cc * cfg.comeb.kernel + 2 * cc});
  }
  rows.push_back({"comeb", "out", {2, frames, bins}, 2 * cc + 2});
  rows.push_back({"cb", "enhanced RI", {2, frames, bins}, 0});
  return rows;
}

}  // namespace ccdn::blocks
