#include "ccdn/layers.hpp"

#include <cmath>
#include <numbers>

namespace ccdn::layers {

using ad::Var;

Real Rng::normal() {
  // Box-Muller; u1 in (0, 1].
  const Real u1 = 1.0 - uniform(0.0, 1.0);
  const Real u2 = uniform(0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Parameter& ParameterStore::add(std::string name, Shape shape, std::vector<Real> value) {
  if (!allocate_) {
    value.clear();
  } else if (numel(shape) != value.size()) {
    throw ShapeError("parameter " + name + ": shape " + shape_str(shape) + " vs " +
                     std::to_string(value.size()) + " values");
  }
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(shape), std::move(value)});
  return params_.back();
}

Parameter& ParameterStore::uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
  if (!allocate_) return add(std::move(name), std::move(shape), {});
  const Real bound = std::sqrt(1.0 / static_cast<Real>(fan_in));
  std::vector<Real> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return add(std::move(name), std::move(shape), std::move(v));
}

Parameter& ParameterStore::zeros(std::string name, Shape shape) {
  const std::size_t n = allocate_ ? numel(shape) : 0;
  return add(std::move(name), std::move(shape), std::vector<Real>(n, 0.0));
}

Parameter& ParameterStore::ones(std::string name, Shape shape) {
  const std::size_t n = allocate_ ? numel(shape) : 0;
  return add(std::move(name), std::move(shape), std::vector<Real>(n, 1.0));
}

ad::BatchNormStats& ParameterStore::add_stats(std::string name, std::size_t channels) {
  for (const auto& [n, s] : stats_) {
    if (n == name) throw std::invalid_argument("duplicate statistics name " + name);
  }
  ad::BatchNormStats s;
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  stats_.emplace_back(std::move(name), std::move(s));
  return stats_.back().second;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

ad::BatchNormStats* ParameterStore::find_stats(const std::string& name) {
  for (auto& [n, s] : stats_) {
    if (n == name) return &s;
  }
  return nullptr;
}

std::size_t ParameterStore::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += numel(p.shape);
  return n;
}

Var Graph::bind(const Parameter& p) {
  auto it = cache_.find(&p);
  if (it != cache_.end()) return it->second;
  Var v = tape_.leaf(p.shape, p.value, requires_grad_);
  cache_.emplace(&p, v);
  order_.emplace_back(&p, v);
  return v;
}

void Graph::substitute(const Parameter& p, Var v) {
  if (v.shape() != p.shape) throw ShapeError("substitute: shape mismatch for " + p.name);
  cache_[&p] = v;
}

Conv::Conv(ParameterStore& store, const std::string& name, const ConvSpec& spec, Rng& rng,
           bool with_bias)
    : spec_(spec) {
  spec_.validate();
  weight_ = &store.uniform(name + ".weight", spec_.weight_shape(), spec_.fan_in(), rng);
  if (with_bias) bias_ = &store.zeros(name + ".bias", {spec_.out_channels});
}

Var Conv::operator()(Graph& g, Var x) const {
  return conv(x, g.bind(*weight_), bias_ ? g.bind(*bias_) : Var{}, spec_);
}

Var glu(Var x) {
  if (x.rank() < 1 || x.dim(0) % 2 != 0) {
    throw ShapeError("glu: channel count must be even, got " + shape_str(x.shape()));
  }
  const std::size_t half = x.dim(0) / 2;
  Var a = ad::slice(x, 0, 0, half);
  Var b = ad::slice(x, 0, half, 2 * half);
  return ad::mul(a, ad::sigmoid(b));
}

FrameLayerNorm::FrameLayerNorm(ParameterStore& store, const std::string& name,
                               std::size_t channels, std::size_t bins) {
  gain_ = &store.ones(name + ".gain", {channels * bins});
  bias_ = &store.zeros(name + ".bias", {channels * bins});
}

Var FrameLayerNorm::operator()(Graph& g, Var x) const {
  if (x.rank() != 3) throw ShapeError("frame layer norm: expected [C, T, F]");
  const std::size_t c = x.dim(0), t = x.dim(1), f = x.dim(2);
  if (c * f != numel(gain_->shape)) {
    throw ShapeError("frame layer norm: feature size " + std::to_string(c * f) +
                     " does not match parameters");
  }
  Var rows = ad::reshape(ad::permute(x, {1, 0, 2}), {t, c * f});
  Var y = ad::layer_norm(rows, g.bind(*gain_), g.bind(*bias_));
  return ad::permute(ad::reshape(y, {t, c, f}), {1, 0, 2});
}

BatchNorm::BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels) {
  gain_ = &store.ones(name + ".gain", {channels});
  bias_ = &store.zeros(name + ".bias", {channels});
  stats_ = &store.add_stats(name + ".stats", channels);
}

Var BatchNorm::operator()(Graph& g, Var x) const {
  return ad::batch_norm(x, g.bind(*gain_), g.bind(*bias_), *stats_, g.mode());
}

Lstm::Lstm(ParameterStore& store, const std::string& name, const LstmSpec& spec, Rng& rng)
    : spec_(spec) {
  if (spec.input_dim == 0 || spec.hidden_dim == 0) throw ShapeError("lstm: zero dimension");
  const std::size_t h4 = 4 * spec.hidden_dim;
  wx_ = &store.uniform(name + ".wx", {spec.input_dim, h4}, spec.input_dim, rng);
  wh_ = &store.uniform(name + ".wh", {spec.hidden_dim, h4}, spec.hidden_dim, rng);
  b_ = &store.zeros(name + ".bias", {h4});
}

Var Lstm::operator()(Graph& g, Var x) const {
  if (x.rank() != 3 || x.dim(2) != spec_.input_dim) {
    throw ShapeError("lstm: expected [B, T, " + std::to_string(spec_.input_dim) + "], got " +
                     shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), steps = x.dim(1), hid = spec_.hidden_dim;
  Var wh = g.bind(*wh_);
  Var proj = ad::add_bias(ad::matmul(x, g.bind(*wx_)), g.bind(*b_));

  Var h, c;
  std::vector<Var> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var gates = ad::reshape(ad::slice(proj, 1, t, t + 1), {batch, 4 * hid});
    if (h.valid()) gates = ad::add(gates, ad::matmul(h, wh));
    Var i = ad::sigmoid(ad::slice(gates, 1, 0, hid));
    Var f = ad::sigmoid(ad::slice(gates, 1, hid, 2 * hid));
    Var cand = ad::tanh(ad::slice(gates, 1, 2 * hid, 3 * hid));
    Var o = ad::sigmoid(ad::slice(gates, 1, 3 * hid, 4 * hid));
    c = c.valid() ? ad::add(ad::mul(f, c), ad::mul(i, cand)) : ad::mul(i, cand);
    h = ad::mul(o, ad::tanh(c));
    outputs.push_back(ad::reshape(h, {batch, 1, hid}));
  }
  return steps == 1 ? outputs[0] : ad::concat(outputs, 1);
}

Mhsa::Mhsa(ParameterStore& store, const std::string& name, const MhsaConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.heads == 0 || cfg.model_dim == 0 || cfg.model_dim % cfg.heads != 0) {
    throw ShapeError("mhsa: model_dim " + std::to_string(cfg.model_dim) +
                     " is not divisible by heads " + std::to_string(cfg.heads));
  }
  const std::size_t d = cfg.model_dim;
  wq_ = &store.uniform(name + ".wq", {d, d}, d, rng);
  wk_ = &store.uniform(name + ".wk", {d, d}, d, rng);
  wv_ = &store.uniform(name + ".wv", {d, d}, d, rng);
  wo_ = &store.uniform(name + ".wo", {d, d}, d, rng);
}

Var Mhsa::operator()(Graph& g, Var x, Var* attention) const {
  if (x.rank() != 3 || x.dim(2) != cfg_.model_dim) {
    throw ShapeError("mhsa: expected [B, L, " + std::to_string(cfg_.model_dim) + "], got " +
                     shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), len = x.dim(1), d = cfg_.model_dim, heads = cfg_.heads;
  const std::size_t dk = d / heads;
  auto split = [&](Var v) {
    return ad::reshape(ad::permute(ad::reshape(v, {b, len, heads, dk}), {0, 2, 1, 3}),
                       {b * heads, len, dk});
  };
  Var q = split(ad::matmul(x, g.bind(*wq_)));
  Var k = split(ad::matmul(x, g.bind(*wk_)));
  Var v = split(ad::matmul(x, g.bind(*wv_)));

  const Real denom = cfg_.scale == AttentionScale::head_dim ? std::sqrt(static_cast<Real>(dk))
                                                            : std::sqrt(static_cast<Real>(len));
  Var scores = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / denom);
  Var weights = ad::softmax(scores);
  if (attention) *attention = weights;
  Var heads_out = ad::matmul(weights, v);
  Var merged = ad::reshape(ad::permute(ad::reshape(heads_out, {b, heads, len, dk}), {0, 2, 1, 3}),
                           {b, len, d});
  return ad::matmul(merged, g.bind(*wo_));
}

Var Mhsa::on_map(Graph& g, Var map) const {
  if (map.rank() != 3 || map.dim(0) != cfg_.model_dim) {
    throw ShapeError("mhsa: expected a [" + std::to_string(cfg_.model_dim) + ", T, F] map, got " +
                     shape_str(map.shape()));
  }
  if (cfg_.axis == AttentionAxis::time) {
    // Sequences run along T, one per frequency row: [F, T, C].
    Var seq = ad::permute(map, {2, 1, 0});
    return ad::permute((*this)(g, seq), {2, 1, 0});
  }
  // Sequences run along F, one per frame: [T, F, C].
  Var seq = ad::permute(map, {1, 2, 0});
  return ad::permute((*this)(g, seq), {2, 0, 1});
}

}  // namespace ccdn::layers
