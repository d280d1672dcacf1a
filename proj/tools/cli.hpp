#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccdn/blocks.hpp"
#include "ccdn/trainer.hpp"

namespace ccdn::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

// Bad flags, bad config values, missing inputs: exit code 2.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Parses "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> parse_kv(const std::string& text, const std::string& origin);
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);

struct RunConfig {
  std::string command;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scale;
};

struct Settings {
  blocks::ModelConfig model;
  trainer::TrainConfig train;
};

// Preset for --scale (default desk), then the config file, then --seed.
// Throws UsageError.
Settings resolve(const RunConfig& rc);

// Runs one command line; never throws. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ccdn::cli
