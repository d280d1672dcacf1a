#pragma once

#include <map>
#include <string>
#include <vector>

#include "ccdn/autodiff.hpp"
#include "ccdn/dsp.hpp"
#include "ccdn/layers.hpp"

namespace ccdn::blocks {

enum class Scale { toy, desk, paper };

std::string to_string(Scale s);
Scale scale_from_string(const std::string& s);

struct FebConfig {
  std::size_t channels = 8;
  std::size_t glu_kernel = 3;
  std::size_t u_blocks = 2;
  std::size_t u_layers = 5;
  std::size_t u_kernel = 3;  // frequency taps; time taps are 1
  std::size_t u_stride = 2;  // frequency stride
};

struct MaskBlockConfig {
  std::size_t channels = 16;
  std::size_t layers = 5;
  std::size_t kernel = 8;
  std::size_t stride = 2;
  std::size_t groups = 2;
  std::size_t units_per_group = 5;
  std::size_t heads = 2;
  std::size_t left_kernel = 5;
  std::size_t right_kernel = 1;
  layers::AttentionScale attention_scale = layers::AttentionScale::head_dim;
};

struct ComplexBlockConfig {
  std::size_t channels = 16;
  std::size_t layers = 5;
  std::size_t kernel = 8;
  std::size_t stride = 2;
  std::size_t groups = 4;
  std::vector<std::size_t> dilations{1, 2, 4, 8, 16};
  std::size_t left_kernel = 5;
  std::size_t right_kernel = 1;
  std::size_t dilated_kernel = 3;
  std::size_t feature_projection = 2;
};

// Every architectural hyperparameter in one record. The three presets share
// the topology and differ in width.
struct ModelConfig {
  Scale scale = Scale::desk;
  FebConfig feb;
  MaskBlockConfig mb;
  ComplexBlockConfig comeb;
  dsp::StftConfig stft;
  std::uint64_t seed = 0;

  static ModelConfig toy();
  static ModelConfig desk();
  static ModelConfig paper();
  static ModelConfig for_scale(Scale s);

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  // Flat key = value view. Unknown keys are rejected by apply().
  std::map<std::string, std::string> to_map() const;
  void apply(const std::map<std::string, std::string>& kv);
};

// Mask values lie strictly inside (0, 1).
struct Mask {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<Real> values;
};

struct CompensationResult {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<Real> smag, comp_r, comp_i, r, i;
};

// Closed-form compensation on plain arrays: Mag and theta of the previous
// RI estimate, Smag = Mag * mask, Comp = Smag (cos, sin) theta, RI + Comp.
CompensationResult compensate(const dsp::ComplexSpectrogram& ri_prev, const Mask& mask);

struct CompensationVars {
  ad::Var smag, comp_r, comp_i, r, i;
  ad::Var planar;  // [2, T, F] stack of (r, i)
};

// Differentiable compensation: ri_prev is [2, T, F], mask is [T, F].
CompensationVars compensate(ad::Var ri_prev, ad::Var mask);

using layers::Graph;
using layers::ParameterStore;

// Frequency-axis U-Net with an LSTM over time at the bottleneck. Output shape
// equals input shape [C, T, F].
class UBlock {
 public:
  UBlock() = default;
  UBlock(ParameterStore& store, const std::string& name, std::size_t channels, std::size_t bins,
         const FebConfig& cfg, layers::Rng& rng);
  ad::Var operator()(Graph& g, ad::Var x) const;

  const std::vector<layers::Conv>& encoders() const { return enc_; }
  const std::vector<layers::Conv>& decoders() const { return dec_; }
  const layers::Lstm& lstm() const { return lstm_; }

 private:
  std::vector<layers::Conv> enc_;
  std::vector<layers::Conv> dec_;
  layers::Lstm lstm_;
};

// GLU front-end followed by residual U-block stages:
//   h = GLU(conv(x)); h = h + U(ELU(LN(h))) for each U-block.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(ParameterStore& store, const FebConfig& cfg, std::size_t bins,
                   layers::Rng& rng);
  ad::Var operator()(Graph& g, ad::Var x) const;
  ad::Var gated(Graph& g, ad::Var x) const;

  const std::vector<UBlock>& u_blocks() const { return ublocks_; }
  const std::vector<layers::FrameLayerNorm>& norms() const { return norms_; }
  const layers::Conv& glu_conv() const { return glu_conv_; }

 private:
  layers::Conv glu_conv_;
  std::vector<layers::FrameLayerNorm> norms_;
  std::vector<UBlock> ublocks_;
};

// Mask-block residual unit: u = GLU(left(x)); x + right(MHSA_time(u) + MHSA_freq(u)).
class AttentionUnit {
 public:
  AttentionUnit() = default;
  AttentionUnit(ParameterStore& store, const std::string& name, const MaskBlockConfig& cfg,
                layers::Rng& rng);
  ad::Var operator()(Graph& g, ad::Var x) const;
  // The left-conv gate output that both attention passes consume.
  ad::Var gate(Graph& g, ad::Var x) const;

  const layers::Mhsa& time_attention() const { return time_; }
  const layers::Mhsa& freq_attention() const { return freq_; }
  const layers::Conv& left() const { return left_; }
  const layers::Conv& right() const { return right_; }

 private:
  layers::Conv left_;
  layers::Mhsa time_;
  layers::Mhsa freq_;
  layers::Conv right_;
};

// Complex-block residual unit: u = GLU(left(x)); x + right(ELU(dilated(u))).
class DilatedUnit {
 public:
  DilatedUnit() = default;
  DilatedUnit(ParameterStore& store, const std::string& name, const ComplexBlockConfig& cfg,
              std::size_t dilation, layers::Rng& rng);
  ad::Var operator()(Graph& g, ad::Var x) const;

  std::size_t dilation() const { return dilated_.spec().dilation[0]; }
  const layers::Conv& left() const { return left_; }
  const layers::Conv& dilated() const { return dilated_; }
  const layers::Conv& right() const { return right_; }

 private:
  layers::Conv left_;
  layers::Conv dilated_;
  layers::Conv right_;
};

// Strided frequency encoder, residual-unit middle and transposed decoder with
// additive skips from the matching encoder stage.
class EncoderDecoder {
 public:
  EncoderDecoder() = default;
  EncoderDecoder(ParameterStore& store, const std::string& name, std::size_t in_channels,
                 std::size_t channels, std::size_t layers, std::size_t kernel, std::size_t stride,
                 std::size_t bins, layers::Rng& rng);

  struct Encoded {
    std::vector<ad::Var> skips;
    ad::Var bottleneck;
  };
  Encoded encode(Graph& g, ad::Var x) const;
  ad::Var decode(Graph& g, ad::Var middle, const std::vector<ad::Var>& skips) const;

  // Frequency size after the encoder.
  std::size_t bottleneck_bins() const { return bottleneck_bins_; }

 private:
  std::vector<layers::Conv> enc_;
  std::vector<layers::BatchNorm> enc_norm_;
  std::vector<layers::Conv> dec_;
  std::vector<layers::BatchNorm> dec_norm_;
  std::size_t bottleneck_bins_ = 0;
};

class MaskBlock {
 public:
  MaskBlock() = default;
  MaskBlock(ParameterStore& store, const MaskBlockConfig& cfg, std::size_t in_channels,
            std::size_t bins, layers::Rng& rng);
  // features: [C_feb, T, F] -> mask [T, F] in (0, 1).
  ad::Var operator()(Graph& g, ad::Var features) const;

  const std::vector<AttentionUnit>& units() const { return units_; }
  const layers::Conv& output() const { return out_; }

 private:
  MaskBlockConfig cfg_;
  EncoderDecoder body_;
  std::vector<AttentionUnit> units_;
  layers::Conv out_;
};

class ComplexBlock {
 public:
  ComplexBlock() = default;
  ComplexBlock(ParameterStore& store, const ComplexBlockConfig& cfg, std::size_t feature_channels,
               std::size_t bins, layers::Rng& rng);
  // input: [2 + feature_projection, T, F] -> [2, T, F].
  ad::Var operator()(Graph& g, ad::Var input) const;
  // Stacks the noisy RI planes with the projected features.
  ad::Var assemble_input(Graph& g, ad::Var noisy, ad::Var features) const;

  const std::vector<DilatedUnit>& units() const { return units_; }
  // Frames of look-ahead (and look-back) of the residual-unit stack.
  std::size_t receptive_radius() const;

 private:
  ComplexBlockConfig cfg_;
  layers::Conv projection_;
  EncoderDecoder body_;
  std::vector<DilatedUnit> units_;
  layers::Conv out_;
};

struct ModelOutputs {
  ad::Var features;  // FEB output [C, T, F]
  ad::Var mask;      // [T, F]
  ad::Var complex;   // ComEB output [2, T, F]
  CompensationVars compensation;
  ad::Var enhanced;  // [2, T, F]
};

// The full network: features from the FEB feed both the mask path and the
// complex path; the compensation block fuses them.
class Ccdn {
 public:
  explicit Ccdn(const ModelConfig& cfg);
  Ccdn(const Ccdn&) = delete;
  Ccdn& operator=(const Ccdn&) = delete;

  // noisy: planar [2, T, F].
  ModelOutputs forward(Graph& g, ad::Var noisy) const;

  // Inference-mode helpers (batch norm uses running statistics).
  dsp::ComplexSpectrogram enhance(const dsp::ComplexSpectrogram& noisy);
  // Output length equals input length.
  dsp::Waveform enhance(const dsp::Waveform& noisy);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const FeatureExtractor& feb() const { return feb_; }
  const MaskBlock& mask_block() const { return mb_; }
  const ComplexBlock& complex_block() const { return comeb_; }

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  FeatureExtractor feb_;
  MaskBlock mb_;
  ComplexBlock comeb_;
};

// Exact number of trainable scalars, computed from the config alone.
std::size_t param_count(const ModelConfig& cfg);

struct ShapeRow {
  std::string block;
  std::string layer;
  Shape output;
  std::size_t params = 0;
};

// Layer-by-layer output shapes for an input of `frames` frames.
std::vector<ShapeRow> shape_table(const ModelConfig& cfg, std::size_t frames);

}  // namespace ccdn::blocks
