#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ccdn/blocks.hpp"
#include "ccdn/data.hpp"
#include "ccdn/losses.hpp"

namespace ccdn::trainer {

struct TrainConfig {
  std::size_t epochs = 1;
  // 0 means one pass over the training split per epoch.
  std::size_t steps_per_epoch = 0;
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real adam_eps = 1e-8;
  // Global gradient-norm clip; 0 disables.
  Real clip_norm = 5.0;
  Real crop_seconds = 2.0;
  std::uint64_t seed = 0;
  losses::LossConfig loss;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  // Keys are the to_map() names; unknown keys throw.
  void apply(const std::map<std::string, std::string>& kv);
};

// lr * 2^-epoch.
Real lr_for_epoch(Real base_lr, std::size_t epoch);

struct OptimState {
  std::uint64_t step = 0;
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;

  static OptimState for_params(const layers::ParameterStore& store, const TrainConfig& cfg);
};

// Bias-corrected Adam. grads[i] pairs with params[i]. Throws ShapeError on a
// size mismatch and NonFiniteError (before touching anything) on a
// non-finite gradient.
void adam_step(std::deque<layers::Parameter>& params, const std::vector<std::vector<Real>>& grads,
               OptimState& state);

// Scales grads in place so their global L2 norm is at most max_norm and
// returns the norm before scaling. max_norm <= 0 only measures.
Real clip_grad_norm(std::vector<std::vector<Real>>& grads, Real max_norm);

struct Example {
  std::string id;
  dsp::Waveform noisy;
  dsp::Waveform clean;
};

// Mixes the entry at its SNR with its seed.
Example load_example(const data::ManifestEntry& entry);
// Fixed-length crop (zero-padded when short), offset drawn from
// (seed, epoch, index).
Example crop(const Example& ex, std::size_t samples, std::uint64_t seed, std::size_t epoch,
             std::size_t index);

struct StepResult {
  Real loss = 0.0;
  Real mae = 0.0;
  Real si_sdr = 0.0;
  Real grad_norm = 0.0;
};

// Forward, joint loss, backward and one Adam update. The model and state
// are left untouched when the gradient is non-finite.
StepResult train_step(blocks::Ccdn& model, OptimState& state, const Example& ex,
                      const TrainConfig& cfg);

struct TrainLogRow {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  Real lr = 0.0;
  Real loss = 0.0;
  Real mae = 0.0;
  Real si_sdr = 0.0;
  Real grad_norm = 0.0;
};

inline constexpr const char* kLogHeader = "epoch,step,lr,loss,mae,si_sdr,grad_norm";
std::string format_log_row(const TrainLogRow& row);

// Everything a training run owns.
struct TrainState {
  blocks::ModelConfig model_config;
  TrainConfig config;
  std::unique_ptr<blocks::Ccdn> model;
  OptimState optim;
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
  layers::Rng rng;        // picks training utterances

  static TrainState fresh(const blocks::ModelConfig& model_cfg, const TrainConfig& cfg);
};

// ---- checkpoints ---------------------------------------------------------

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize(const TrainState& s);
TrainState deserialize(std::span<const std::uint8_t> bytes);
// Writes to path + ".partial", then renames.
void save_checkpoint(const std::filesystem::path& path, const TrainState& s);
TrainState load_checkpoint(const std::filesystem::path& path);

// ---- training loop -------------------------------------------------------

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_step;
  std::function<void(std::size_t epoch, const std::filesystem::path&)> on_checkpoint;
};

// Runs epochs state.epoch .. config.epochs - 1 over `examples`. Writes
// train_log.csv (appending on resume), epoch_<k>.ckpt after every epoch and
// last.ckpt under out_dir. With zero epochs to run, only the initial
// checkpoint epoch_0.ckpt / last.ckpt is written.
std::vector<TrainLogRow> train(TrainState& state, const std::vector<Example>& examples,
                               const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

}  // namespace ccdn::trainer
