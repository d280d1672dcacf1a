#include "ccdn/losses.hpp"

#include <cmath>
#include <numbers>

namespace ccdn::losses {

using ad::Var;

void LossConfig::validate() const {
  if (!(sisdr_epsilon > 0.0)) throw std::invalid_argument("loss config: sisdr_epsilon must be > 0");
  if (!(w_mae >= 0.0)) throw std::invalid_argument("loss config: w_mae must be >= 0");
  if (!(w_sisdr >= 0.0)) throw std::invalid_argument("loss config: w_sisdr must be >= 0");
}

Real mae_loss(const dsp::ComplexSpectrogram& est, const dsp::ComplexSpectrogram& target) {
  if (est.frames() != target.frames() || est.bins() != target.bins()) {
    throw ShapeError("mae_loss: spectrogram shapes differ");
  }
  const std::size_t bins = est.frames() * est.bins();
  if (bins == 0) throw ShapeError("mae_loss: empty spectrogram");
  const auto& a = est.data();
  const auto& b = target.data();
  Real ri = 0.0, mag = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    ri += std::abs(a[2 * k] - b[2 * k]) + std::abs(a[2 * k + 1] - b[2 * k + 1]);
    mag += std::abs(std::hypot(a[2 * k], a[2 * k + 1]) - std::hypot(b[2 * k], b[2 * k + 1]));
  }
  return (ri + mag) / static_cast<Real>(bins);
}

namespace {

Var magnitude(Var planar) {
  const std::size_t t = planar.dim(1), f = planar.dim(2);
  Var re = ad::reshape(ad::slice(planar, 0, 0, 1), {t, f});
  Var im = ad::reshape(ad::slice(planar, 0, 1, 2), {t, f});
  return ad::sqrt(ad::add(ad::square(re), ad::square(im)));
}

Real dot(std::span<const Real> a, std::span<const Real> b) {
  Real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_pair(std::size_t est, std::size_t ref) {
  if (est == 0 || ref == 0) throw std::invalid_argument("si_sdr: empty input");
  if (est != ref) {
    throw ShapeError("si_sdr: length mismatch " + std::to_string(est) + " vs " +
                     std::to_string(ref));
  }
}

}  // namespace

Var mae_loss(Var est, Var target) {
  if (est.rank() != 3 || est.dim(0) != 2 || est.shape() != target.shape()) {
    throw ShapeError("mae_loss: expected matching [2, T, F], got " + shape_str(est.shape()) +
                     " and " + shape_str(target.shape()));
  }
  const Real bins = static_cast<Real>(est.dim(1) * est.dim(2));
  Var ri = ad::scale(ad::sum(ad::abs(ad::sub(est, target))), 1.0 / bins);
  Var mag = ad::mean(ad::abs(ad::sub(magnitude(est), magnitude(target))));
  return ad::add(ri, mag);
}

Real si_sdr(std::span<const Real> est, std::span<const Real> ref, Real eps) {
  check_pair(est.size(), ref.size());
  const Real rr = dot(ref, ref);
  if (rr == 0.0) throw SilentReference("si_sdr: reference signal is all zeros");
  const Real alpha = dot(est, ref) / (rr + eps);
  Real err = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Real e = alpha * ref[i] - est[i];
    err += e * e;
  }
  return 10.0 * std::log10((alpha * alpha * rr + eps) / (err + eps));
}

Real si_sdr(const dsp::Waveform& est, const dsp::Waveform& ref, Real eps) {
  return si_sdr(std::span<const Real>(est.samples), std::span<const Real>(ref.samples), eps);
}

Var si_sdr(Var est, Var ref, Real eps) {
  if (est.rank() != 1 || ref.rank() != 1) throw ShapeError("si_sdr: expected 1-D waveforms");
  check_pair(est.size(), ref.size());
  Var rr = ad::sum(ad::square(ref));
  if (rr.item() == 0.0) throw SilentReference("si_sdr: reference signal is all zeros");
  Var alpha = ad::div(ad::sum(ad::mul(est, ref)), ad::add_scalar(rr, eps));
  Var target = ad::mul_scalar(ref, alpha);
  Var num = ad::add_scalar(ad::sum(ad::square(target)), eps);
  Var den = ad::add_scalar(ad::sum(ad::square(ad::sub(target, est))), eps);
  return ad::scale(ad::log(ad::div(num, den)), 10.0 / std::numbers::ln10);
}

Real joint_loss(const dsp::ComplexSpectrogram& est_spec, const dsp::ComplexSpectrogram& target_spec,
                const dsp::Waveform& est_wav, const dsp::Waveform& target_wav,
                const LossConfig& cfg) {
  cfg.validate();
  return cfg.w_mae * mae_loss(est_spec, target_spec) -
         cfg.w_sisdr * si_sdr(est_wav, target_wav, cfg.sisdr_epsilon);
}

JointTerms joint_terms(Var est_spec, Var target_spec, Var est_wav, Var target_wav,
                       const LossConfig& cfg) {
  cfg.validate();
  JointTerms t;
  t.mae = mae_loss(est_spec, target_spec);
  t.si_sdr = si_sdr(est_wav, target_wav, cfg.sisdr_epsilon);
  t.total = ad::sub(ad::scale(t.mae, cfg.w_mae), ad::scale(t.si_sdr, cfg.w_sisdr));
  return t;
}

Var joint_loss(Var est_spec, Var target_spec, Var est_wav, Var target_wav, const LossConfig& cfg) {
  return joint_terms(est_spec, target_spec, est_wav, target_wav, cfg).total;
}

}  // namespace ccdn::losses
