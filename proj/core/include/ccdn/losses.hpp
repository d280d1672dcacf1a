#pragma once

#include <span>
#include <stdexcept>

#include "ccdn/autodiff.hpp"
#include "ccdn/dsp.hpp"

namespace ccdn::losses {

struct LossConfig {
  Real sisdr_epsilon = 1e-8;
  Real w_mae = 1.0;
  Real w_sisdr = 1.0;

  void validate() const;
};

struct SilentReference : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// RI term:        sum over bins of (|dR| + |dI|) / (T * F)
// magnitude term: mean over bins of | |est| - |target| |
// The value is their sum.
Real mae_loss(const dsp::ComplexSpectrogram& est, const dsp::ComplexSpectrogram& target);
// Same on planar [2, T, F] Vars.
ad::Var mae_loss(ad::Var est, ad::Var target);

// alpha = <est, ref> / (|ref|^2 + eps);
// 10 log10((|alpha ref|^2 + eps) / (|alpha ref - est|^2 + eps)).
Real si_sdr(std::span<const Real> est, std::span<const Real> ref, Real eps = 1e-8);
Real si_sdr(const dsp::Waveform& est, const dsp::Waveform& ref, Real eps = 1e-8);
// est and ref are 1-D Vars of equal length.
ad::Var si_sdr(ad::Var est, ad::Var ref, Real eps = 1e-8);

// w_mae * mae - w_sisdr * si_sdr; lower is better.
Real joint_loss(const dsp::ComplexSpectrogram& est_spec, const dsp::ComplexSpectrogram& target_spec,
                const dsp::Waveform& est_wav, const dsp::Waveform& target_wav,
                const LossConfig& cfg = {});
ad::Var joint_loss(ad::Var est_spec, ad::Var target_spec, ad::Var est_wav, ad::Var target_wav,
                   const LossConfig& cfg = {});

struct JointTerms {
  ad::Var mae;
  ad::Var si_sdr;
  ad::Var total;
};
JointTerms joint_terms(ad::Var est_spec, ad::Var target_spec, ad::Var est_wav, ad::Var target_wav,
                       const LossConfig& cfg = {});

}  // namespace ccdn::losses
