#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccdn/autodiff.hpp"

namespace ccdn::layers {

// Uniform reals from a 64-bit Mersenne twister, independent of the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  Real uniform(Real lo, Real hi) {
    const Real u = static_cast<Real>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  Real normal();
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }
  const std::mt19937_64& engine() const { return engine_; }

 private:
  std::mt19937_64 engine_;
};

struct Parameter {
  std::string name;
  Shape shape;
  std::vector<Real> value;
};

// Owns every trainable array and every batch-norm statistic of a model, in
// creation order. Addresses are stable for the store's lifetime.
class ParameterStore {
 public:
  // A store built with allocate = false records names and shapes only; it is
  // used to count parameters of configurations too large to materialize.
  explicit ParameterStore(bool allocate = true) : allocate_(allocate) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& add(std::string name, Shape shape, std::vector<Real> value);
  // Uniform in +-sqrt(1/fan_in).
  Parameter& uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng);
  Parameter& zeros(std::string name, Shape shape);
  Parameter& ones(std::string name, Shape shape);
  ad::BatchNormStats& add_stats(std::string name, std::size_t channels);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  ad::BatchNormStats* find_stats(const std::string& name);

  std::deque<Parameter>& params() { return params_; }
  const std::deque<Parameter>& params() const { return params_; }
  std::deque<std::pair<std::string, ad::BatchNormStats>>& stats() { return stats_; }
  const std::deque<std::pair<std::string, ad::BatchNormStats>>& stats() const { return stats_; }

  std::size_t param_count() const;
  bool allocated() const { return allocate_; }

 private:
  bool allocate_ = true;
  std::deque<Parameter> params_;
  std::deque<std::pair<std::string, ad::BatchNormStats>> stats_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binds parameters onto a tape for one forward pass. Each parameter becomes
// one requires_grad leaf, created on first use.
class Graph {
 public:
  Graph(ad::Tape& tape, ad::NormMode mode, bool requires_grad = true)
      : tape_(tape), mode_(mode), requires_grad_(requires_grad) {}

  ad::Var bind(const Parameter& p);
  // Uses `v` in place of `p` for the rest of this pass.
  void substitute(const Parameter& p, ad::Var v);

  ad::Tape& tape() { return tape_; }
  ad::NormMode mode() const { return mode_; }
  const std::vector<std::pair<const Parameter*, ad::Var>>& bound() const { return order_; }

 private:
  ad::Tape& tape_;
  ad::NormMode mode_;
  bool requires_grad_;
  std::unordered_map<const Parameter*, ad::Var> cache_;
  std::vector<std::pair<const Parameter*, ad::Var>> order_;
};

// ---- convolution ----------------------------------------------------------

// Shapes are [C, L] for 1-D and [C, H, W] for 2-D (H = time, W = frequency
// in the spectral blocks). Per-dim arrays use index 0 for the only axis of a
// 1-D conv. Transposed weights are laid out [in, out, kh, kw], plain ones
// [out, in, kh, kw].
struct ConvSpec {
  int dims = 2;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::array<std::size_t, 2> kernel{1, 1};
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> dilation{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
  std::array<std::size_t, 2> output_padding{0, 0};
  bool transposed = false;

  static ConvSpec conv1d(std::size_t in, std::size_t out, std::size_t kernel,
                         std::size_t stride = 1, std::size_t dilation = 1,
                         std::size_t padding = 0);
  static ConvSpec conv2d(std::size_t in, std::size_t out, std::array<std::size_t, 2> kernel,
                         std::array<std::size_t, 2> stride = {1, 1},
                         std::array<std::size_t, 2> padding = {0, 0},
                         std::array<std::size_t, 2> dilation = {1, 1});
  // The transposed conv whose output shape is exactly `input_spatial`, the
  // spatial input of this (forward) conv.
  ConvSpec inverse(const std::vector<std::size_t>& input_spatial) const;

  Shape weight_shape() const;
  std::size_t fan_in() const;
  // Throws ShapeError on channel mismatch or an empty output.
  Shape output_shape(const Shape& input) const;
  void validate() const;
};

// bias may be a default-constructed Var (no bias).
ad::Var conv(ad::Var x, ad::Var weight, ad::Var bias, const ConvSpec& spec);

class Conv {
 public:
  Conv() = default;
  Conv(ParameterStore& store, const std::string& name, const ConvSpec& spec, Rng& rng,
       bool with_bias = true);

  ad::Var operator()(Graph& g, ad::Var x) const;
  const ConvSpec& spec() const { return spec_; }
  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }

 private:
  ConvSpec spec_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

// ---- activations ----------------------------------------------------------

// Splits the channel axis (axis 0) into halves (a, b) and returns a * sigmoid(b).
ad::Var glu(ad::Var x);
inline ad::Var elu(ad::Var x) { return ad::elu(x); }

// ---- normalization --------------------------------------------------------

// Per-frame layer norm of a [C, T, F] map over its (C, F) features.
class FrameLayerNorm {
 public:
  FrameLayerNorm() = default;
  FrameLayerNorm(ParameterStore& store, const std::string& name, std::size_t channels,
                 std::size_t bins);
  ad::Var operator()(Graph& g, ad::Var x) const;

 private:
  Parameter* gain_ = nullptr;
  Parameter* bias_ = nullptr;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels);
  ad::Var operator()(Graph& g, ad::Var x) const;

 private:
  Parameter* gain_ = nullptr;
  Parameter* bias_ = nullptr;
  ad::BatchNormStats* stats_ = nullptr;
};

// ---- recurrence -----------------------------------------------------------

struct LstmSpec {
  std::size_t input_dim = 1;
  std::size_t hidden_dim = 1;
};

// Forward-only LSTM, zero initial state, gate order (input, forget, cell,
// output). x: [B, T, input_dim] -> [B, T, hidden_dim].
class Lstm {
 public:
  Lstm() = default;
  Lstm(ParameterStore& store, const std::string& name, const LstmSpec& spec, Rng& rng);
  ad::Var operator()(Graph& g, ad::Var x) const;
  const LstmSpec& spec() const { return spec_; }
  Parameter& input_weight() const { return *wx_; }
  Parameter& hidden_weight() const { return *wh_; }
  Parameter& bias() const { return *b_; }

 private:
  LstmSpec spec_;
  Parameter* wx_ = nullptr;  // [input_dim, 4 * hidden_dim]
  Parameter* wh_ = nullptr;  // [hidden_dim, 4 * hidden_dim]
  Parameter* b_ = nullptr;   // [4 * hidden_dim]
};

// ---- attention ------------------------------------------------------------

enum class AttentionAxis { time, frequency };

enum class AttentionScale {
  head_dim,         // sqrt(d_k)
  sequence_length,  // sqrt(L)
};

struct MhsaConfig {
  std::size_t heads = 2;
  std::size_t model_dim = 2;
  AttentionAxis axis = AttentionAxis::time;
  AttentionScale scale = AttentionScale::head_dim;
};

// Self-attention over sequences x: [B, L, D]. Heads are column blocks of the
// stacked projections; outputs are concatenated and projected by W_out. No
// positional encoding.
class Mhsa {
 public:
  Mhsa() = default;
  Mhsa(ParameterStore& store, const std::string& name, const MhsaConfig& cfg, Rng& rng);

  // When `attention` is non-null it receives the [B * heads, L, L] softmax maps.
  ad::Var operator()(Graph& g, ad::Var x, ad::Var* attention = nullptr) const;
  // Applies the attention along cfg.axis of a [C, T, F] map (C = model_dim).
  ad::Var on_map(Graph& g, ad::Var map) const;

  const MhsaConfig& config() const { return cfg_; }
  Parameter& wq() const { return *wq_; }
  Parameter& wk() const { return *wk_; }
  Parameter& wv() const { return *wv_; }
  Parameter& wo() const { return *wo_; }

 private:
  MhsaConfig cfg_;
  Parameter* wq_ = nullptr;
  Parameter* wk_ = nullptr;
  Parameter* wv_ = nullptr;
  Parameter* wo_ = nullptr;
};

}  // namespace ccdn::layers
