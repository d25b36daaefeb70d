#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "nbv/errors.hpp"
#include "nbv/geometry.hpp"
#include "nbv/reference.hpp"
#include "nbv/rng.hpp"

using namespace nbv;

namespace {

constexpr double kPi = 3.14159265358979323846;

PointCloud random_cloud(Rng& rng, std::size_t n, double scale) {
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) {
    p = {rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale)};
  }
  return PointCloud(std::move(pts));
}

PointCloud blob_cloud(Rng& rng, std::size_t n) {
  // two tight gaussian blobs far apart; stresses the grid's empty-ring walk
  std::vector<Vec3> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 c = (i % 2 == 0) ? Vec3{-40, 0, 0} : Vec3{40, 5, -3};
    pts[i] = c + Vec3{rng.normal(), rng.normal(), rng.normal()} * 0.2;
  }
  return PointCloud(std::move(pts));
}

PointCloud sphere_cloud(Rng& rng, std::size_t n, double radius = 1.0) {
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) {
    const double z = rng.uniform(-1.0, 1.0);
    const double t = rng.uniform(0.0, 2.0 * kPi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    p = Vec3{r * std::cos(t), r * std::sin(t), z} * radius;
  }
  return PointCloud(std::move(pts));
}

bool same_point_set(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) return false;
  auto key = [](const Vec3& p) { return std::tuple{p.x, p.y, p.z}; };
  std::vector<std::tuple<double, double, double>> ka, kb;
  for (const Vec3& p : a.points) ka.push_back(key(p));
  for (const Vec3& p : b.points) kb.push_back(key(p));
  std::sort(ka.begin(), ka.end());
  std::sort(kb.begin(), kb.end());
  return ka == kb;
}

}  // namespace

TEST_CASE("view sphere: 33 default views") {
  const ViewSphere s = make_view_sphere(33, 1.0);
  REQUIRE(s.size() == 33);
  for (const Vec3& v : s.views) CHECK(std::abs(v.norm() - 1.0) <= 1e-9);

  double min_angle = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = i + 1; j < s.size(); ++j) {
      const double d = std::clamp(s.views[i].dot(s.views[j]), -1.0, 1.0);
      min_angle = std::min(min_angle, std::acos(d));
    }
  }
  CHECK(min_angle > 0.0);
  CHECK(min_angle * 180.0 / kPi >= 20.0);
  // regression value, brute-forced over all 528 pairs
  CHECK(min_angle == doctest::Approx(0.54419227391918923).epsilon(1e-12));
}

TEST_CASE("view sphere: two views are near-antipodal") {
  const ViewSphere s = make_view_sphere(2, 1.0);
  REQUIRE(s.size() == 2);
  CHECK(std::abs(s.views[0].norm() - 1.0) <= 1e-9);
  CHECK(std::abs(s.views[1].norm() - 1.0) <= 1e-9);
  CHECK(s.views[0].dot(s.views[1]) < -0.5);
}

TEST_CASE("view sphere: radius and center place the cameras") {
  const Vec3 c{1.0, -2.0, 0.5};
  const ViewSphere s = make_view_sphere(7, 3.0, c);
  for (std::size_t j = 0; j < s.size(); ++j) {
    CHECK(std::abs((s.position(j) - c).norm() - 3.0) <= 1e-12);
  }
}

TEST_CASE("view sphere: deterministic and rejects bad arguments") {
  const ViewSphere a = make_view_sphere(33, 2.5);
  const ViewSphere b = make_view_sphere(33, 2.5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.views[i].x == b.views[i].x);
    CHECK(a.views[i].y == b.views[i].y);
    CHECK(a.views[i].z == b.views[i].z);
  }
  CHECK_THROWS_AS(make_view_sphere(1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_view_sphere(33, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(make_view_sphere(33, -1.0), std::invalid_argument);
}

TEST_CASE("nearest_distance: hand cases") {
  PointCloud cloud(std::vector<Vec3>{{1, 0, 0}, {0, 2, 0}});
  CHECK(nearest_distance({0, 0, 0}, cloud) == 1.0);
  CHECK(nearest_distance({1, 0, 0}, cloud) == 0.0);
  CHECK_THROWS_AS(nearest_distance({0, 0, 0}, PointCloud{}), std::invalid_argument);
}

TEST_CASE("nearest_distance: matches brute force on random instances") {
  Rng rng(101);
  for (double scale : {1e-3, 1.0, 1e3}) {
    const PointCloud cloud = random_cloud(rng, 1000, scale);
    for (int q = 0; q < 1000; ++q) {
      const Vec3 query{rng.uniform(-1.5 * scale, 1.5 * scale),
                       rng.uniform(-1.5 * scale, 1.5 * scale),
                       rng.uniform(-1.5 * scale, 1.5 * scale)};
      const double got = nearest_distance(query, cloud);
      const double want = reference::nearest_distance(query, cloud);
      CHECK(std::abs(got - want) <= 1e-12);
    }
  }
}

TEST_CASE("spatial grid: clustered clouds and self-exclusion") {
  Rng rng(202);
  const PointCloud cloud = blob_cloud(rng, 300);
  const SpatialGrid grid(cloud);
  for (std::size_t i = 0; i < cloud.size(); i += 7) {
    const Vec3& q = cloud.points[i];
    double want = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cloud.size(); ++j) {
      if (j == i) continue;
      want = std::min(want, distance(q, cloud.points[j]));
    }
    const double got = grid.nearest(q, static_cast<std::ptrdiff_t>(i));
    CHECK(std::abs(got - want) <= 1e-12);
  }
}

TEST_CASE("spatial grid: sizes straddling the brute-force limit") {
  Rng rng(303);
  for (std::size_t n : {2ul, 5ul, 63ul, 64ul, 65ul, 200ul}) {
    const PointCloud cloud = random_cloud(rng, n, 2.0);
    const SpatialGrid grid(cloud);
    for (int q = 0; q < 50; ++q) {
      const Vec3 query{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
      CHECK(std::abs(grid.nearest(query) - reference::nearest_distance(query, cloud)) <= 1e-12);
    }
  }
}

TEST_CASE("spatial grid: any_within agrees with the exact distance") {
  Rng rng(404);
  for (std::size_t n : {10ul, 64ul, 500ul}) {
    const PointCloud cloud = random_cloud(rng, n, 1.0);
    const SpatialGrid grid(cloud, 0.1);
    for (int q = 0; q < 200; ++q) {
      const Vec3 query{rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
      const double d = reference::nearest_distance(query, cloud);
      const double eps = rng.uniform(0.0, 0.5);
      CHECK(grid.any_within(query, eps) == (d <= eps));
    }
  }
  // inclusive boundary
  PointCloud one(std::vector<Vec3>{{1, 0, 0}});
  CHECK(SpatialGrid(one, 0.5).any_within({0, 0, 0}, 1.0));
}

TEST_CASE("default_epsilon: median spacing hand case") {
  PointCloud line(std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  CHECK(default_epsilon(line) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(default_epsilon(line, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(default_epsilon(PointCloud(std::vector<Vec3>{{0, 0, 0}})),
                  std::invalid_argument);
}

TEST_CASE("coverage_score: hand cases") {
  const CoverageParams params{0.5, 32};
  PointCloud full(std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}});
  PointCloud two(std::vector<Vec3>{{0, 0, 0}, {2, 0, 0}});
  CHECK(coverage_score(two, full, params) == 0.4);
  CHECK(coverage_score(full, full, params) == 1.0);
  CHECK(coverage_score(PointCloud{}, full, params) == 0.0);
  CHECK_THROWS_AS(coverage_score(two, PointCloud{}, params), std::invalid_argument);
}

TEST_CASE("coverage_score: monotone, idempotent, bounded") {
  Rng rng(505);
  for (int it = 0; it < 30; ++it) {
    const PointCloud full = random_cloud(rng, 40 + rng.uniform_int(60), 1.0);
    PointCloud partial = random_cloud(rng, 1 + rng.uniform_int(30), 1.0);
    const CoverageParams params{rng.uniform(0.05, 0.6), 32};

    const double s0 = coverage_score(partial, full, params);
    CHECK(s0 >= 0.0);
    CHECK(s0 <= 1.0);

    PointCloud doubled = partial;
    doubled.points.insert(doubled.points.end(), partial.points.begin(), partial.points.end());
    CHECK(coverage_score(doubled, full, params) == s0);

    PointCloud grown = partial;
    for (int k = 0; k < 5; ++k) {
      grown.points.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                              rng.uniform(-1.0, 1.0)});
    }
    CHECK(coverage_score(grown, full, params) >= s0);
  }
}

TEST_CASE("coverage_score: parallel equals serial reference exactly") {
  Rng rng(606);
  for (std::size_t np : {1ul, 10ul, 63ul, 64ul, 200ul}) {
    for (std::size_t nf : {5ul, 100ul, 500ul}) {
      const PointCloud partial = random_cloud(rng, np, 1.0);
      const PointCloud full = random_cloud(rng, nf, 1.0);
      const CoverageParams params{rng.uniform(0.02, 0.8), 32};
      CHECK(coverage_score(partial, full, params) ==
            reference::coverage_score(partial, full, params));
    }
  }
}

TEST_CASE("visibility: single point is always visible") {
  PointCloud one(std::vector<Vec3>{{0.3, -0.2, 0.1}});
  const CoverageParams params{0.05, 32};
  const auto idx = visible_indices(one, {3, 0, 0}, params);
  REQUIRE(idx.size() == 1);
  CHECK(idx[0] == 0);
}

TEST_CASE("visibility: nearer collinear point occludes the farther") {
  PointCloud two(std::vector<Vec3>{{0, 0, 1}, {0, 0, -1}});
  const CoverageParams params{0.05, 32};
  const auto idx = visible_indices(two, {0, 0, 5}, params);
  REQUIRE(idx.size() == 1);
  CHECK(idx[0] == 0);

  const auto flipped = visible_indices(two, {0, 0, -5}, params);
  REQUIRE(flipped.size() == 1);
  CHECK(flipped[0] == 1);
}

TEST_CASE("visibility: subset and idempotence") {
  Rng rng(707);
  const PointCloud full = sphere_cloud(rng, 300);
  const CoverageParams params = coverage_params_for(full);
  const Vec3 viewpoint{0.0, 2.1, 2.1};
  const PointCloud vis = visible_points(full, viewpoint, params);
  CHECK(vis.size() <= full.size());
  for (const Vec3& p : vis.points) {
    CHECK(reference::nearest_distance(p, full) == 0.0);
  }
  const PointCloud again = visible_points(vis, viewpoint, params);
  CHECK(same_point_set(vis, again));
}

TEST_CASE("visibility: unit sphere from any view shows 30-70 percent") {
  Rng rng(808);
  const PointCloud full = sphere_cloud(rng, 500);
  const CoverageParams params = coverage_params_for(full);
  const ViewSphere sphere = make_view_sphere(33, 3.0);
  const double cell_el = kPi / params.angular_bins;
  for (std::size_t j = 0; j < sphere.size(); j += 4) {
    const auto idx = visible_indices(full, sphere.position(j), params);
    const double frac = static_cast<double>(idx.size()) / static_cast<double>(full.size());
    CHECK(frac >= 0.30);
    CHECK(frac <= 0.70);
    // nothing survives past the front hemisphere plus one z-buffer cell
    for (std::int32_t i : idx) {
      CHECK(full.points[static_cast<std::size_t>(i)].normalized().dot(sphere.views[j]) >=
            -std::sin(cell_el) - 1e-12);
    }
  }
}

TEST_CASE("visibility: parallel equals serial reference exactly") {
  Rng rng(909);
  for (int it = 0; it < 10; ++it) {
    const PointCloud full = sphere_cloud(rng, 50 + rng.uniform_int(450));
    const CoverageParams params{rng.uniform(0.02, 0.3), 32};
    const Vec3 viewpoint = Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized() * 3.0;
    CHECK(visible_indices(full, viewpoint, params) ==
          reference::visible_indices(full, viewpoint, params));
  }
}

TEST_CASE("gain vector: trivial endpoints") {
  Rng rng(111);
  const PointCloud full = sphere_cloud(rng, 200);
  const CoverageParams params = coverage_params_for(full);
  const ViewSphere sphere = make_view_sphere(6, 3.0);

  const auto at_full = coverage_gain_vector(full, full, sphere, params);
  for (double g : at_full) CHECK(g == 0.0);

  const auto from_empty = coverage_gain_vector(PointCloud{}, full, sphere, params);
  for (std::size_t j = 0; j < sphere.size(); ++j) {
    const PointCloud vis = visible_points(full, sphere.position(j), params);
    CHECK(from_empty[j] == coverage_score(vis, full, params));
  }
}

TEST_CASE("gain vector: two collinear points, hand enumeration") {
  PointCloud full(std::vector<Vec3>{{1, 0, 0}, {2, 0, 0}});
  const CoverageParams params{0.1, 32};
  ViewSphere sphere;
  sphere.views = {{1, 0, 0}, {-1, 0, 0}};
  sphere.radius = 5.0;
  const auto gains = coverage_gain_vector(PointCloud{}, full, sphere, params);
  REQUIRE(gains.size() == 2);
  // each side sees only its nearer point, which covers half the cloud
  CHECK(gains[0] == 0.5);
  CHECK(gains[1] == 0.5);
}

TEST_CASE("gain vector: bounds and reference match on random instances") {
  Rng rng(222);
  for (int it = 0; it < 8; ++it) {
    const PointCloud full = sphere_cloud(rng, 60 + rng.uniform_int(140));
    const std::size_t keep = 1 + rng.uniform_int(full.size() / 2);
    PointCloud partial;
    for (std::size_t i = 0; i < keep; ++i) partial.points.push_back(full.points[i]);
    const CoverageParams params{rng.uniform(0.05, 0.4), 32};
    const ViewSphere sphere = make_view_sphere(4 + static_cast<int>(rng.uniform_int(6)), 3.0);

    const auto gains = coverage_gain_vector(partial, full, sphere, params);
    const auto want = reference::coverage_gain_vector(partial, full, sphere, params);
    const double base = coverage_score(partial, full, params);
    REQUIRE(gains.size() == sphere.size());
    for (std::size_t j = 0; j < gains.size(); ++j) {
      CHECK(gains[j] == want[j]);
      CHECK(gains[j] >= 0.0);
      CHECK(gains[j] <= 1.0 - base + 1e-15);
    }
  }
}

TEST_CASE("serialization: json round trip is exact") {
  Rng rng(333);
  const PointCloud cloud = random_cloud(rng, 57, 3.0);
  const PointCloud back = cloud_from_json(cloud_to_json(cloud));
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(back.points[i].x == cloud.points[i].x);
    CHECK(back.points[i].y == cloud.points[i].y);
    CHECK(back.points[i].z == cloud.points[i].z);
  }
}

TEST_CASE("serialization: malformed json is a data error") {
  CHECK_THROWS_AS(cloud_from_json("not json"), DataError);
  CHECK_THROWS_AS(cloud_from_json("{\"a\":1}"), DataError);
  CHECK_THROWS_AS(cloud_from_json("[[1,2]]"), DataError);
  CHECK_THROWS_AS(cloud_from_json("[[1,2,\"x\"]]"), DataError);
}

TEST_CASE("serialization: xyz files round trip exactly") {
  Rng rng(444);
  const PointCloud cloud = random_cloud(rng, 64, 10.0);
  const std::string path = "test_geometry_cloud.xyz";
  write_cloud_xyz(path, cloud);
  const PointCloud back = read_cloud_xyz(path);
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(back.points[i].x == cloud.points[i].x);
    CHECK(back.points[i].y == cloud.points[i].y);
    CHECK(back.points[i].z == cloud.points[i].z);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_cloud_xyz("does_not_exist.xyz"), DataError);
}

TEST_CASE("serialization: json files round trip exactly") {
  Rng rng(555);
  const PointCloud cloud = random_cloud(rng, 33, 0.01);
  const std::string path = "test_geometry_cloud.json";
  write_cloud_json(path, cloud);
  const PointCloud back = read_cloud_json(path);
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(back.points[i].x == cloud.points[i].x);
  }
  std::remove(path.c_str());
}
