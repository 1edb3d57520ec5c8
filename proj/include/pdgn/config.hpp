#pragma once

// Flat `key = value` configuration covering every tunable. Lines starting
// with '#' are comments; unknown keys and invalid values are rejected at
// load time. Lists are comma-separated; disc_widths separates resolutions
// with ';' or is "auto" for the per-resolution defaults.

#include "pdgn/io.hpp"
#include "pdgn/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace pdgn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Config {
  training::TrainConfig train;

  std::string data_dir;  // empty: use a synthetic corpus
  io::SynthKind synth_kind = io::SynthKind::sphere;
  std::size_t synth_count = 200;
  ad::Index synth_points = 2048;
  std::uint64_t synth_seed = 0;
  std::string out_dir = "run";

  int jsd_grid = 28;
  unsigned metric_workers = 1;
  ad::Index emd_exact_limit = 512;

  static Config parse(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);
  /// Every key, one per line, in a fixed order.
  std::string serialize() const;
  void validate() const;

  /// Keys in serialization order.
  static std::vector<std::string> keys();
};

}  // namespace pdgn
