#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nbv/dataset.hpp"
#include "nbv/network.hpp"

namespace nbv {

// Resolved pipeline configuration. Precedence: built-in defaults, then the
// --config JSON file, then explicit flags.
struct RunConfig {
  std::uint64_t master_seed = 42;
  std::string out_dir = "run";
  GenConfig gen;
  std::vector<int> per_point = {3, 64, 128};
  std::vector<int> head_hidden = {128, 64};
  double dropout_rate = 0.5;
  int epochs = 300;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double lambda = 1e-4;
  int n_mc = 40;
  int n_thresholds = 40;
  int n_bins = 20;
  double target_error = 0.5;
  double target_accuracy = 50.0;  // percent
};

// Throws ConfigError on out-of-range fields.
void validate_run_config(const RunConfig& config);

// Overlays flat JSON keys onto config; unknown keys or wrong types are
// ConfigError.
void apply_config_file(RunConfig& config, const std::string& path);

// per_point ++ pool ++ view_state -> head_hidden -> n_views.
Architecture architecture_for(const RunConfig& config);

// Full command-line surface; returns the process exit code
// (0 ok, 2 config error, 3 data error, 4 numerical failure).
int run_cli(const std::vector<std::string>& args);

}  // namespace nbv
