#include "nbv/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nbv::reference {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double nearest_distance(const Vec3& query, const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("reference::nearest_distance: empty cloud");
  double best2 = std::numeric_limits<double>::infinity();
  for (const Vec3& p : cloud.points) best2 = std::min(best2, distance2(query, p));
  return std::sqrt(best2);
}

double coverage_score(const PointCloud& partial, const PointCloud& full,
                      const CoverageParams& params) {
  if (full.empty()) throw std::invalid_argument("reference::coverage_score: full cloud is empty");
  if (partial.empty()) return 0.0;
  std::int64_t covered = 0;
  for (const Vec3& p0 : full.points) {
    if (reference::nearest_distance(p0, partial) <= params.epsilon) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(full.size());
}

std::vector<std::int32_t> visible_indices(const PointCloud& full, const Vec3& viewpoint,
                                          const CoverageParams& params, const Vec3& target) {
  if (full.empty()) throw std::invalid_argument("reference::visible_indices: empty cloud");
  const Vec3 forward = (target - viewpoint).normalized();
  const Vec3 up0 = std::abs(forward.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  const Vec3 right = up0.cross(forward).normalized();
  const Vec3 up = forward.cross(right);

  const int bins = params.angular_bins;
  std::vector<std::int32_t> cell(full.size());
  std::vector<double> depth(full.size());
  std::vector<double> min_depth(static_cast<std::size_t>(bins) * bins,
                                std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < full.size(); ++i) {
    const Vec3 d = full.points[i] - viewpoint;
    const double dist = d.norm();
    const Vec3 dn = d / dist;
    const double az = std::atan2(dn.dot(right), dn.dot(forward));
    const double el = std::asin(std::clamp(dn.dot(up), -1.0, 1.0));
    const int az_bin = std::clamp(static_cast<int>((az + kPi) / (2.0 * kPi) * bins), 0, bins - 1);
    const int el_bin = std::clamp(static_cast<int>((el + kPi / 2.0) / kPi * bins), 0, bins - 1);
    cell[i] = az_bin * bins + el_bin;
    depth[i] = dist;
    double& m = min_depth[static_cast<std::size_t>(cell[i])];
    m = std::min(m, dist);
  }
  const double band = params.epsilon * params.depth_band_scale;
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (depth[i] <= min_depth[static_cast<std::size_t>(cell[i])] + band) {
      out.push_back(static_cast<std::int32_t>(i));
    }
  }
  return out;
}

std::vector<double> coverage_gain_vector(const PointCloud& partial, const PointCloud& full,
                                         const ViewSphere& sphere, const CoverageParams& params) {
  const double base = reference::coverage_score(partial, full, params);
  std::vector<double> gains(sphere.size());
  for (std::size_t j = 0; j < sphere.size(); ++j) {
    PointCloud merged = partial;
    for (std::int32_t i :
         reference::visible_indices(full, sphere.position(j), params, sphere.center)) {
      merged.points.push_back(full.points[static_cast<std::size_t>(i)]);
    }
    gains[j] = reference::coverage_score(merged, full, params) - base;
  }
  return gains;
}

}  // namespace nbv::reference
