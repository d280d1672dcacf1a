#include "ccdn/model_check.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

namespace ccdn::blocks {

using ad::Var;

ModelConfig gradcheck_config(Scale scale, std::uint64_t seed) {
  ModelConfig c = ModelConfig::for_scale(scale);
  c.feb.channels = std::min<std::size_t>(c.feb.channels, 8);
  c.mb.channels = std::min<std::size_t>(c.mb.channels, 8);
  c.comeb.channels = std::min<std::size_t>(c.comeb.channels, 8);
  c.seed = seed;
  return c;
}

ModelGradCheckReport model_gradcheck(const ModelGradCheckConfig& cfg) {
  if (cfg.frames == 0) throw std::invalid_argument("model gradcheck: frames must be positive");
  Ccdn model(cfg.model);
  const auto& stft_cfg = cfg.model.stft;
  const std::size_t len = (cfg.frames - 1) * stft_cfg.hop + stft_cfg.fft_size;

  // A few harmonics as the target, plus white noise.
  layers::Rng rng(cfg.seed ^ 0x5eedULL);
  dsp::Waveform clean, noisy;
  clean.samples.resize(len);
  noisy.samples.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    const Real t = static_cast<Real>(i) / dsp::kSampleRate;
    Real v = 0.0;
    for (int h = 1; h <= 6; ++h) v += std::sin(2.0 * std::numbers::pi * 180.0 * h * t) / h;
    clean.samples[i] = 0.2 * v;
    noisy.samples[i] = clean.samples[i] + 0.05 * rng.normal();
  }
  const auto noisy_spec = dsp::stft(noisy, stft_cfg);
  const auto clean_spec = dsp::stft(clean, stft_cfg);
  const Shape spec_shape{2, noisy_spec.frames(), noisy_spec.bins()};
  const auto noisy_planar = noisy_spec.planar();
  const auto clean_planar = clean_spec.planar();

  auto loss_of = [&](ad::Tape& tape, layers::Graph& g, Var input) {
    auto out = model.forward(g, input);
    Var wav = dsp::istft(out.enhanced, stft_cfg, len);
    Var target = tape.constant(spec_shape, clean_planar);
    Var target_wav = tape.constant({len}, clean.samples);
    return losses::joint_loss(out.enhanced, target, wav, target_wav, cfg.loss);
  };

  // Analytic gradients once, to pick coordinates: relative error is only
  // meaningful where the gradient clears the finite-difference noise floor,
  // so each tensor is probed at its largest-magnitude entries.
  std::vector<Real> input_grad;
  std::unordered_map<const layers::Parameter*, std::vector<Real>> param_grad;
  {
    ad::Tape tape;
    layers::Graph g(tape, ad::NormMode::train);
    Var x = tape.leaf(spec_shape, noisy_planar, true);
    Var loss = loss_of(tape, g, x);
    auto grads = ad::backward(loss, tape);
    input_grad = grads.of(x);
    for (const auto& [p, v] : g.bound()) param_grad.emplace(p, grads.of(v));
  }
  auto pick = [](const std::vector<Real>& grad, std::size_t k) {
    std::vector<std::size_t> idx(grad.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const Real ga = std::abs(grad[a]), gb = std::abs(grad[b]);
                        return ga != gb ? ga > gb : a < b;
                      });
    idx.resize(k);
    return idx;
  };

  ModelGradCheckReport report;
  auto record = [&](std::string target, const ad::GradCheckResult& r) {
    if (report.entries.empty() || r.max_rel_error > report.max_rel_error) {
      report.max_rel_error = r.max_rel_error;
      report.worst = target;
    }
    report.entries.push_back({std::move(target), r});
  };

  {
    const auto idx = pick(input_grad, cfg.input_coords);
    auto f = [&](ad::Tape& tape, Var x) {
      layers::Graph g(tape, ad::NormMode::train);
      return loss_of(tape, g, x);
    };
    record("input", ad::finite_difference_check(f, spec_shape, noisy_planar, cfg.eps, idx));
  }
  for (const auto& p : model.parameters().params()) {
    const auto idx = pick(param_grad.at(&p), cfg.coords_per_param);
    auto f = [&](ad::Tape& tape, Var v) {
      layers::Graph g(tape, ad::NormMode::train);
      g.substitute(p, v);
      return loss_of(tape, g, tape.constant(spec_shape, noisy_planar));
    };
    record(p.name, ad::finite_difference_check(f, p.shape, p.value, cfg.eps, idx));
  }
  return report;
}

}  // namespace ccdn::blocks
