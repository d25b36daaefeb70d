#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nbv/geometry.hpp"

namespace nbv {

// 8 training families plus 8 held-out families that only ever appear in the
// novel split.
enum class ShapeFamily {
  kSphere,
  kBox,
  kCylinder,
  kTorus,
  kCone,
  kEllipsoid,
  kCapsule,
  kPerlinBlob,
  kPyramid,
  kStarPrism,
  kHelix,
  kHyperboloid,
  kLens,
  kCross,
  kParaboloid,
  kEgg,
};

const std::array<ShapeFamily, 8>& known_families();
const std::array<ShapeFamily, 8>& novel_families();

std::string family_name(ShapeFamily family);
ShapeFamily family_from_name(const std::string& name);

// Deterministic surface sampling for (family, seed); centered at the origin
// and scaled to unit bounding radius. n_points >= 64.
PointCloud generate_shape(ShapeFamily family, std::uint64_t seed, std::size_t n_points);

// One supervised record from the simulated scan loop. `partial` always holds
// exactly n_in points (resampled with replacement when the true partial has a
// different size); `gt` is the per-view coverage gain measured from that
// stored partial.
struct NbvSample {
  std::string model_id;
  std::string family;
  int step = 0;
  PointCloud partial;
  std::vector<std::uint8_t> view_state;
  std::vector<double> gt;
};

enum class ScanPolicy { kGreedy, kRandom, kMixed };

// Side channel for tests and debugging: which views the scan visited and the
// coverage of the true (un-resampled) partial after each step.
struct ScanTrace {
  std::vector<int> visited_order;
  std::vector<double> realized_coverage;
};

// Runs `steps` scan steps from a seeded random initial view. Greedy moves to
// the argmax-gt unvisited view (lowest index on ties); random picks a seeded
// unvisited view; mixed plays random with probability random_fraction.
std::vector<NbvSample> simulate_scan_sequence(const PointCloud& full, const ViewSphere& sphere,
                                              const CoverageParams& params, int steps,
                                              ScanPolicy policy, std::uint64_t seed,
                                              std::size_t n_in, double random_fraction = 0.25,
                                              const std::string& model_id = "",
                                              const std::string& family = "",
                                              ScanTrace* trace = nullptr);

struct DatasetSplit {
  std::vector<std::string> train, valid, test, test_novel;
};

struct GenConfig {
  int n_views = 33;
  double radius = 3.0;
  double epsilon_scale = 2.0;
  int angular_bins = 20;
  double depth_band_scale = 5.0;
  int n_points = 512;
  int n_in = 256;
  int steps = 6;
  int train_per_family = 10;
  int valid_per_family = 2;
  int test_per_family = 2;
  int novel_per_family = 2;
  double random_step_fraction = 0.25;
};

// Throws ConfigError on out-of-range fields.
void validate_gen_config(const GenConfig& config);

// Generates every model, writes <out_dir>/{train,valid,test,test_novel}.ndjson
// and <out_dir>/manifest.json, and returns the split. Byte-identical for a
// fixed master seed regardless of thread count.
DatasetSplit build_dataset(const GenConfig& config, std::uint64_t master_seed,
                           const std::string& out_dir);

std::string sample_to_ndjson(const NbvSample& sample);
NbvSample sample_from_ndjson(const std::string& line, const std::string& where);

// Loads and validates every record; errors name the file, line and field.
std::vector<NbvSample> read_dataset(const std::string& path);

}  // namespace nbv
