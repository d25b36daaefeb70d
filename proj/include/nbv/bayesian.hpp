#pragma once

#include <cstdint>
#include <vector>

#include "nbv/network.hpp"

namespace nbv {

// Raw MC-dropout forward passes plus their averaged final prediction. fp is
// computed as row 0 plus the mean row deviation, which is the column mean up
// to rounding but collapses to exactly row 0 when every row is identical, so
// dropout-off inference yields exactly zero spread.
struct McPredictionSet {
  std::vector<std::vector<double>> samples;  // n_mc x n_v
  std::vector<double> fp;
  int n_mc = 0;
  std::uint64_t seed = 0;
};

// Validates a rectangular matrix with >= 2 rows and computes fp.
McPredictionSet make_mc_set(std::vector<std::vector<double>> samples, std::uint64_t seed = 0);

// n_mc stochastic passes with per-pass plans seeded from (seed, pass index);
// the assembled matrix is independent of scheduling.
McPredictionSet mc_inference(const ModelParams& params, const NbvSample& sample, int n_mc,
                             std::uint64_t seed);

// Population standard deviation around fp, per view.
std::vector<double> sigma_by_view(const McPredictionSet& set);
// Arithmetic mean of sigma_by_view.
double sigma_mean(const McPredictionSet& set);
// sigma_by_view at argmax(fp), lowest index on ties.
double sigma_nbv(const McPredictionSet& set);
// sqrt((1/n_mc) sum_i ||fp - mc_i||^2); equals sqrt(sum_j sigma_v_j^2).
double sigma_whole(const McPredictionSet& set);
// Entry i = 1 iff argmax(mc_i) == argmax(fp), lowest index on ties.
std::vector<std::uint8_t> mc_sample_accuracy(const McPredictionSet& set);
// sqrt(disagreeing rows / n_mc).
double sigma_accuracy(const McPredictionSet& set);

struct UncertaintyReport {
  std::vector<double> sigma_v;
  double sigma_mean = 0.0;
  double sigma_nbv = 0.0;
  double sigma_whole = 0.0;
  double sigma_accuracy = 0.0;
};

UncertaintyReport uncertainty_report(const McPredictionSet& set);

namespace reference {

// Serial twin of mc_inference; identical output.
McPredictionSet mc_inference(const ModelParams& params, const NbvSample& sample, int n_mc,
                             std::uint64_t seed);

}  // namespace reference

}  // namespace nbv
