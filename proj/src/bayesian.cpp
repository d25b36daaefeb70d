#include "nbv/bayesian.hpp"

#include <cmath>
#include <stdexcept>

#include "nbv/rng.hpp"
#include "nbv/util.hpp"

namespace nbv {

McPredictionSet make_mc_set(std::vector<std::vector<double>> samples, std::uint64_t seed) {
  if (samples.size() < 2) throw std::invalid_argument("mc set needs at least 2 rows");
  const std::size_t n_v = samples[0].size();
  if (n_v == 0) throw std::invalid_argument("mc set rows must be non-empty");
  for (const auto& row : samples) {
    if (row.size() != n_v) throw std::invalid_argument("mc set rows have unequal lengths");
  }
  McPredictionSet set;
  set.n_mc = static_cast<int>(samples.size());
  set.seed = seed;
  set.fp.resize(n_v);
  for (std::size_t j = 0; j < n_v; ++j) {
    double shift = 0.0;
    for (const auto& row : samples) shift += row[j] - samples[0][j];
    set.fp[j] = samples[0][j] + shift / static_cast<double>(set.n_mc);
  }
  set.samples = std::move(samples);
  return set;
}

McPredictionSet mc_inference(const ModelParams& params, const NbvSample& sample, int n_mc,
                             std::uint64_t seed) {
  if (n_mc < 2) throw std::invalid_argument("mc_inference: n_mc must be >= 2");
  const Rng pass_rng = Rng(seed).child("mc");
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(n_mc));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n_mc; ++i) {
    const DropoutPlan plan =
        make_dropout_plan(params.arch, pass_rng.child(static_cast<std::uint64_t>(i)).seed());
    rows[static_cast<std::size_t>(i)] = forward(params, sample, &plan);
  }
  return make_mc_set(std::move(rows), seed);
}

std::vector<double> sigma_by_view(const McPredictionSet& set) {
  const std::size_t n_v = set.fp.size();
  std::vector<double> sigma(n_v);
  for (std::size_t j = 0; j < n_v; ++j) {
    double acc = 0.0;
    for (const auto& row : set.samples) {
      const double d = set.fp[j] - row[j];
      acc += d * d;
    }
    sigma[j] = std::sqrt(acc / static_cast<double>(set.n_mc));
  }
  return sigma;
}

double sigma_mean(const McPredictionSet& set) {
  const std::vector<double> sigma = sigma_by_view(set);
  double acc = 0.0;
  for (double s : sigma) acc += s;
  return acc / static_cast<double>(sigma.size());
}

double sigma_nbv(const McPredictionSet& set) {
  return sigma_by_view(set)[argmax_lowest(set.fp)];
}

double sigma_whole(const McPredictionSet& set) {
  double acc = 0.0;
  for (const auto& row : set.samples) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double d = set.fp[j] - row[j];
      acc += d * d;
    }
  }
  return std::sqrt(acc / static_cast<double>(set.n_mc));
}

std::vector<std::uint8_t> mc_sample_accuracy(const McPredictionSet& set) {
  const std::size_t best = argmax_lowest(set.fp);
  std::vector<std::uint8_t> acc(set.samples.size());
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    acc[i] = argmax_lowest(set.samples[i]) == best ? 1 : 0;
  }
  return acc;
}

double sigma_accuracy(const McPredictionSet& set) {
  const std::vector<std::uint8_t> acc = mc_sample_accuracy(set);
  int disagree = 0;
  for (auto a : acc) disagree += 1 - a;
  return std::sqrt(static_cast<double>(disagree) / static_cast<double>(set.n_mc));
}

UncertaintyReport uncertainty_report(const McPredictionSet& set) {
  UncertaintyReport report;
  report.sigma_v = sigma_by_view(set);
  double acc = 0.0;
  for (double s : report.sigma_v) acc += s;
  report.sigma_mean = acc / static_cast<double>(report.sigma_v.size());
  report.sigma_nbv = report.sigma_v[argmax_lowest(set.fp)];
  report.sigma_whole = sigma_whole(set);
  report.sigma_accuracy = sigma_accuracy(set);
  return report;
}

namespace reference {

McPredictionSet mc_inference(const ModelParams& params, const NbvSample& sample, int n_mc,
                             std::uint64_t seed) {
  if (n_mc < 2) throw std::invalid_argument("mc_inference: n_mc must be >= 2");
  const Rng pass_rng = Rng(seed).child("mc");
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(n_mc));
  for (int i = 0; i < n_mc; ++i) {
    const DropoutPlan plan =
        make_dropout_plan(params.arch, pass_rng.child(static_cast<std::uint64_t>(i)).seed());
    rows.push_back(forward(params, sample, &plan));
  }
  return make_mc_set(std::move(rows), seed);
}

}  // namespace reference

}  // namespace nbv
