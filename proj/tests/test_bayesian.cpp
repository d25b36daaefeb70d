#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "nbv/bayesian.hpp"
#include "nbv/rng.hpp"
#include "nbv/util.hpp"

namespace {

std::vector<std::vector<double>> random_matrix(nbv::Rng& rng, int rows, int cols) {
  std::vector<std::vector<double>> m(static_cast<std::size_t>(rows));
  for (auto& row : m) {
    row.resize(static_cast<std::size_t>(cols));
    for (auto& v : row) v = rng.uniform();
  }
  return m;
}

nbv::NbvSample toy_sample(nbv::Rng& rng, int n_points, int n_views) {
  nbv::NbvSample s;
  for (int i = 0; i < n_points; ++i) {
    s.partial.points.push_back(
        {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
  }
  s.view_state.assign(static_cast<std::size_t>(n_views), 0);
  s.view_state[0] = 1;
  s.gt.assign(static_cast<std::size_t>(n_views), 0.0);
  return s;
}

}  // namespace

TEST_CASE("make_mc_set validates shape") {
  CHECK_THROWS_AS(nbv::make_mc_set({{0.1, 0.2}}), std::invalid_argument);
  CHECK_THROWS_AS(nbv::make_mc_set({{}, {}}), std::invalid_argument);
  CHECK_THROWS_AS(nbv::make_mc_set({{0.1, 0.2}, {0.1}}), std::invalid_argument);
  CHECK_THROWS_AS(nbv::make_mc_set({{0.1}, {0.2}, {0.3, 0.4}}), std::invalid_argument);
}

TEST_CASE("two rows on one view: fp 0.3, sigma 0.1") {
  const nbv::McPredictionSet set = nbv::make_mc_set({{0.2}, {0.4}});
  CHECK(set.fp[0] == doctest::Approx(0.3).epsilon(1e-15));
  const auto sigma = nbv::sigma_by_view(set);
  CHECK(sigma[0] == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(nbv::sigma_mean(set) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(nbv::sigma_nbv(set) == sigma[0]);
  CHECK(nbv::sigma_whole(set) == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("identical rows collapse every statistic to exact zero") {
  std::vector<double> row = {0.3, 0.1, 0.7, 0.2};
  const nbv::McPredictionSet set = nbv::make_mc_set({row, row, row, row, row});
  for (std::size_t j = 0; j < row.size(); ++j) CHECK(set.fp[j] == row[j]);
  for (double s : nbv::sigma_by_view(set)) CHECK(s == 0.0);
  CHECK(nbv::sigma_mean(set) == 0.0);
  CHECK(nbv::sigma_nbv(set) == 0.0);
  CHECK(nbv::sigma_whole(set) == 0.0);
  CHECK(nbv::sigma_accuracy(set) == 0.0);
  for (auto a : nbv::mc_sample_accuracy(set)) CHECK(a == 1);
}

TEST_CASE("sigma_by_view matches an independent two-pass computation") {
  nbv::Rng rng(5);
  const nbv::McPredictionSet set = nbv::make_mc_set(random_matrix(rng, 40, 33));
  const auto sigma = nbv::sigma_by_view(set);
  for (std::size_t j = 0; j < 33; ++j) {
    double mean = 0.0;
    for (const auto& row : set.samples) mean += row[j];
    mean /= 40.0;
    CHECK(set.fp[j] == doctest::Approx(mean).epsilon(1e-12));
    double var = 0.0;
    for (const auto& row : set.samples) var += (row[j] - mean) * (row[j] - mean);
    var /= 40.0;
    CHECK(sigma[j] == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  }
}

TEST_CASE("sigma_whole identity and brute-force value") {
  nbv::Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const nbv::McPredictionSet set = nbv::make_mc_set(random_matrix(rng, 40, 33));
    const double whole = nbv::sigma_whole(set);
    const auto sigma = nbv::sigma_by_view(set);
    double sum2 = 0.0;
    for (double s : sigma) sum2 += s * s;
    CHECK(whole * whole == doctest::Approx(sum2).epsilon(1e-12));

    double brute = 0.0;
    for (const auto& row : set.samples) {
      for (std::size_t j = 0; j < row.size(); ++j) {
        brute += (set.fp[j] - row[j]) * (set.fp[j] - row[j]);
      }
    }
    CHECK(whole == doctest::Approx(std::sqrt(brute / 40.0)).epsilon(1e-12));
  }
}

TEST_CASE("sigma statistics are invariant under row permutation and constant shift") {
  nbv::Rng rng(7);
  auto rows = random_matrix(rng, 12, 5);
  const nbv::McPredictionSet a = nbv::make_mc_set(rows);

  auto shuffled = rows;
  rng.shuffle(shuffled);
  const nbv::McPredictionSet b = nbv::make_mc_set(shuffled);
  const auto sa = nbv::sigma_by_view(a);
  const auto sb = nbv::sigma_by_view(b);
  for (std::size_t j = 0; j < sa.size(); ++j) CHECK(sa[j] == doctest::Approx(sb[j]).epsilon(1e-12));
  CHECK(nbv::sigma_whole(a) == doctest::Approx(nbv::sigma_whole(b)).epsilon(1e-12));
  CHECK(nbv::sigma_accuracy(a) == nbv::sigma_accuracy(b));

  const double c = 0.37;
  auto lifted = rows;
  for (auto& row : lifted) {
    for (auto& v : row) v += c;
  }
  const nbv::McPredictionSet d = nbv::make_mc_set(lifted);
  for (std::size_t j = 0; j < a.fp.size(); ++j) {
    CHECK(d.fp[j] == doctest::Approx(a.fp[j] + c).epsilon(1e-12));
  }
  const auto sd = nbv::sigma_by_view(d);
  for (std::size_t j = 0; j < sa.size(); ++j) {
    CHECK(sd[j] == doctest::Approx(sa[j]).epsilon(1e-10));
  }
  CHECK(nbv::sigma_whole(d) == doctest::Approx(nbv::sigma_whole(a)).epsilon(1e-10));
}

TEST_CASE("sigma_accuracy closed form and tie-breaking") {
  // 30 rows favor view 0, 10 rows favor view 2; fp lands on view 0.
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 30; ++i) rows.push_back({0.9, 0.1, 0.2});
  for (int i = 0; i < 10; ++i) rows.push_back({0.1, 0.2, 0.9});
  const nbv::McPredictionSet set = nbv::make_mc_set(rows);
  CHECK(nbv::argmax_lowest(set.fp) == 0);
  const auto acc = nbv::mc_sample_accuracy(set);
  int disagree = 0;
  for (auto a : acc) disagree += 1 - a;
  CHECK(disagree == 10);
  CHECK(nbv::sigma_accuracy(set) == 0.5);

  // ties break to the lowest index on both sides
  const nbv::McPredictionSet tied = nbv::make_mc_set({{0.5, 0.5}, {0.5, 0.5}});
  CHECK(nbv::argmax_lowest(tied.fp) == 0);
  for (auto a : nbv::mc_sample_accuracy(tied)) CHECK(a == 1);
  CHECK(nbv::sigma_accuracy(tied) == 0.0);
}

TEST_CASE("uncertainty_report mirrors the individual statistics") {
  nbv::Rng rng(8);
  const nbv::McPredictionSet set = nbv::make_mc_set(random_matrix(rng, 40, 7));
  const nbv::UncertaintyReport rep = nbv::uncertainty_report(set);
  CHECK(rep.sigma_v == nbv::sigma_by_view(set));
  CHECK(rep.sigma_mean == nbv::sigma_mean(set));
  CHECK(rep.sigma_nbv == nbv::sigma_nbv(set));
  CHECK(rep.sigma_whole == nbv::sigma_whole(set));
  CHECK(rep.sigma_accuracy == nbv::sigma_accuracy(set));
  const auto sigma = rep.sigma_v;
  const double max_sigma = *std::max_element(sigma.begin(), sigma.end());
  CHECK(rep.sigma_nbv <= max_sigma);
  CHECK(rep.sigma_mean <= max_sigma);
}

TEST_CASE("mc_inference: determinism, spread, dropout-off collapse, reference twin") {
  nbv::Architecture arch;
  arch.per_point = {3, 8, 12};
  arch.head = {12 + 4, 8, 4};
  arch.dropout_rate = 0.5;
  nbv::ModelParams params = nbv::init_params(arch, 15);

  nbv::Rng rng(16);
  const nbv::NbvSample s = toy_sample(rng, 10, 4);

  CHECK_THROWS_AS(nbv::mc_inference(params, s, 1, 3), std::invalid_argument);

  const nbv::McPredictionSet a = nbv::mc_inference(params, s, 40, 3);
  const nbv::McPredictionSet b = nbv::mc_inference(params, s, 40, 3);
  REQUIRE(a.samples.size() == 40);
  CHECK(a.samples == b.samples);
  CHECK(a.fp == b.fp);

  const nbv::McPredictionSet c = nbv::mc_inference(params, s, 40, 4);
  CHECK(a.samples != c.samples);

  double max_range = 0.0;
  for (std::size_t j = 0; j < a.fp.size(); ++j) {
    double lo = a.samples[0][j], hi = a.samples[0][j];
    for (const auto& row : a.samples) {
      lo = std::min(lo, row[j]);
      hi = std::max(hi, row[j]);
    }
    max_range = std::max(max_range, hi - lo);
  }
  CHECK(max_range > 0.0);

  const nbv::McPredictionSet serial = nbv::reference::mc_inference(params, s, 40, 3);
  CHECK(serial.samples == a.samples);
  CHECK(serial.fp == a.fp);

  nbv::Architecture off = arch;
  off.dropout_rate = 0.0;
  nbv::ModelParams off_params = nbv::init_params(off, 15);
  const nbv::McPredictionSet d = nbv::mc_inference(off_params, s, 40, 3);
  const auto det = nbv::forward(off_params, s);
  for (const auto& row : d.samples) CHECK(row == det);
  CHECK(d.fp == det);
  const nbv::UncertaintyReport rep = nbv::uncertainty_report(d);
  for (double v : rep.sigma_v) CHECK(v == 0.0);
  CHECK(rep.sigma_mean == 0.0);
  CHECK(rep.sigma_nbv == 0.0);
  CHECK(rep.sigma_whole == 0.0);
  CHECK(rep.sigma_accuracy == 0.0);
}
