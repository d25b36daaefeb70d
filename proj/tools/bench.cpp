// Compares the OpenMP kernels against their serial reference twins and
// prints a timing table. Run from anywhere; no files are written.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <omp.h>

#include "nbv/bayesian.hpp"
#include "nbv/dataset.hpp"
#include "nbv/geometry.hpp"
#include "nbv/network.hpp"
#include "nbv/reference.hpp"
#include "nbv/rng.hpp"

using namespace nbv;

namespace {

struct Row {
  std::string name;
  double serial_ms;
  double parallel_ms;
  bool match;
};

template <typename F>
double time_ms(F&& f, int reps) {
  f();  // warm up
  const double t0 = omp_get_wtime();
  for (int i = 0; i < reps; ++i) f();
  return 1000.0 * (omp_get_wtime() - t0) / reps;
}

bool close(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

int main() {
  const int n_points = 20000;
  const PointCloud full = generate_shape(ShapeFamily::kTorus, 7, n_points);
  const ViewSphere sphere = make_view_sphere(33, 3.0);
  const CoverageParams params = coverage_params_for(full);
  const PointCloud partial = visible_points(full, sphere.position(0), params);

  std::vector<Row> rows;

  {
    double s = 0.0, p = 0.0;
    const double tp = time_ms([&] { p = coverage_score(partial, full, params); }, 5);
    const double ts = time_ms([&] { s = reference::coverage_score(partial, full, params); }, 5);
    rows.push_back({"coverage_score (" + std::to_string(n_points) + " pts)", ts, tp, s == p});
  }
  {
    std::vector<std::int32_t> s, p;
    const double tp =
        time_ms([&] { p = visible_indices(full, sphere.position(5), params); }, 5);
    const double ts =
        time_ms([&] { s = reference::visible_indices(full, sphere.position(5), params); }, 5);
    rows.push_back({"visible_indices", ts, tp, s == p});
  }
  {
    std::vector<double> s, p;
    const double tp = time_ms([&] { p = coverage_gain_vector(partial, full, sphere, params); }, 3);
    const double ts =
        time_ms([&] { s = reference::coverage_gain_vector(partial, full, sphere, params); }, 3);
    rows.push_back({"coverage_gain_vector (33 views)", ts, tp, close(s, p)});
  }
  {
    Architecture arch;
    const ModelParams model = init_params(arch, 11);
    NbvSample sample;
    sample.partial = generate_shape(ShapeFamily::kBox, 9, 256);
    sample.view_state.assign(arch.n_views(), 0);
    sample.gt.assign(arch.n_views(), 0.0);
    McPredictionSet s, p;
    const double tp = time_ms([&] { p = mc_inference(model, sample, 40, 3); }, 3);
    const double ts = time_ms([&] { s = reference::mc_inference(model, sample, 40, 3); }, 3);
    rows.push_back({"mc_inference (40 passes)", ts, tp, close(s.fp, p.fp)});
  }

  std::printf("%d thread(s)\n\n", omp_get_max_threads());
  std::printf("%-36s %12s %12s %9s %s\n", "kernel", "serial ms", "parallel ms", "speedup",
              "match");
  for (const Row& r : rows) {
    std::printf("%-36s %12.2f %12.2f %8.2fx %s\n", r.name.c_str(), r.serial_ms, r.parallel_ms,
                r.serial_ms / r.parallel_ms, r.match ? "yes" : "NO");
  }

  for (const Row& r : rows) {
    if (!r.match) return 1;
  }
  return 0;
}
