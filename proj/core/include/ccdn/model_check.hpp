#pragma once

#include <string>
#include <vector>

#include "ccdn/blocks.hpp"
#include "ccdn/gradcheck.hpp"
#include "ccdn/losses.hpp"

namespace ccdn::blocks {

struct ModelGradCheckConfig {
  ModelConfig model;
  std::size_t frames = 4;
  Real eps = 1e-4;
  // Input-spectrum coordinates checked.
  std::size_t input_coords = 24;
  // Coordinates sampled from every parameter tensor.
  std::size_t coords_per_param = 1;
  std::uint64_t seed = 0;
  losses::LossConfig loss;
};

struct ModelGradCheckEntry {
  std::string target;  // "input" or a parameter name
  ad::GradCheckResult result;
};

struct ModelGradCheckReport {
  std::vector<ModelGradCheckEntry> entries;
  Real max_rel_error = 0.0;
  std::string worst;
};

// The preset topology with every block width capped at 8 channels.
ModelConfig gradcheck_config(Scale scale, std::uint64_t seed = 0);

// Central-difference check of the joint loss through the whole network,
// with respect to the noisy input spectrum and sampled parameter entries.
ModelGradCheckReport model_gradcheck(const ModelGradCheckConfig& cfg);

}  // namespace ccdn::blocks
