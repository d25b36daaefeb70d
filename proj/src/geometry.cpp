#include "nbv/geometry.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "nbv/errors.hpp"
#include "nbv/rng.hpp"
#include "nbv/util.hpp"

namespace nbv {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

ViewSphere make_view_sphere(int n_views, double radius, const Vec3& center) {
  if (n_views < 2) throw std::invalid_argument("make_view_sphere: n_views must be >= 2");
  if (!(radius > 0.0)) throw std::invalid_argument("make_view_sphere: radius must be > 0");

  ViewSphere sphere;
  sphere.radius = radius;
  sphere.center = center;
  sphere.views.reserve(static_cast<std::size_t>(n_views));

  const double golden_angle = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_views; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n_views;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * i;
    sphere.views.push_back(Vec3{r * std::cos(phi), r * std::sin(phi), z});
  }
  return sphere;
}

// --- spatial hash grid ---

std::size_t SpatialGrid::CellKeyHash::operator()(const CellKey& k) const {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(k.x));
  h = mix64(h ^ static_cast<std::uint64_t>(k.y));
  h = mix64(h ^ static_cast<std::uint64_t>(k.z));
  return static_cast<std::size_t>(h);
}

SpatialGrid::CellKey SpatialGrid::key_of(const Vec3& p) const {
  return CellKey{static_cast<std::int64_t>(std::floor(p.x / cell_)),
                 static_cast<std::int64_t>(std::floor(p.y / cell_)),
                 static_cast<std::int64_t>(std::floor(p.z / cell_))};
}

double SpatialGrid::suggest_cell(const PointCloud& cloud) {
  if (cloud.empty()) return 1.0;
  Vec3 lo = cloud.points[0], hi = cloud.points[0];
  for (const Vec3& p : cloud.points) {
    lo.x = std::min(lo.x, p.x); lo.y = std::min(lo.y, p.y); lo.z = std::min(lo.z, p.z);
    hi.x = std::max(hi.x, p.x); hi.y = std::max(hi.y, p.y); hi.z = std::max(hi.z, p.z);
  }
  const double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
  if (extent <= 0.0) return 1.0;
  return extent / std::cbrt(static_cast<double>(cloud.size()));
}

SpatialGrid::SpatialGrid(const PointCloud& cloud, double cell_size)
    : pts_(cloud.points), cell_(cell_size) {
  if (!(cell_ > 0.0)) throw std::invalid_argument("SpatialGrid: cell size must be > 0");
  if (pts_.size() < kBruteForceLimit) return;  // brute-force mode, no buckets
  bool first = true;
  for (std::size_t i = 0; i < pts_.size(); ++i) {
    const CellKey k = key_of(pts_[i]);
    cells_[k].push_back(static_cast<std::int32_t>(i));
    if (first) {
      lo_ = hi_ = k;
      first = false;
    } else {
      lo_.x = std::min(lo_.x, k.x); lo_.y = std::min(lo_.y, k.y); lo_.z = std::min(lo_.z, k.z);
      hi_.x = std::max(hi_.x, k.x); hi_.y = std::max(hi_.y, k.y); hi_.z = std::max(hi_.z, k.z);
    }
  }
}

SpatialGrid::SpatialGrid(const PointCloud& cloud) : SpatialGrid(cloud, suggest_cell(cloud)) {}

double SpatialGrid::nearest(const Vec3& query, std::ptrdiff_t exclude) const {
  if (pts_.empty()) throw std::invalid_argument("SpatialGrid::nearest: empty cloud");

  double best2 = std::numeric_limits<double>::infinity();
  if (pts_.size() < kBruteForceLimit) {
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      if (static_cast<std::ptrdiff_t>(i) == exclude) continue;
      best2 = std::min(best2, distance2(query, pts_[i]));
    }
    return std::sqrt(best2);
  }

  const CellKey qc = key_of(query);
  // Points in a cell at Chebyshev cell-distance k are at least (k-1)*cell
  // away, so once best <= r*cell after finishing ring r we can stop.
  const std::int64_t max_ring =
      std::max({std::max(qc.x - lo_.x, hi_.x - qc.x), std::max(qc.y - lo_.y, hi_.y - qc.y),
                std::max(qc.z - lo_.z, hi_.z - qc.z)});

  for (std::int64_t r = 0; r <= max_ring; ++r) {
    if (r > 0) {
      // Ring r cells hold points at distance >= (r-1)*cell from the query.
      const double reach = static_cast<double>(r - 1) * cell_;
      if (best2 <= reach * reach) break;
    }
    for (std::int64_t dx = -r; dx <= r; ++dx) {
      for (std::int64_t dy = -r; dy <= r; ++dy) {
        const bool on_xy_face = (std::llabs(dx) == r) || (std::llabs(dy) == r);
        const std::int64_t step = on_xy_face ? 1 : 2 * r;
        for (std::int64_t dz = -r; dz <= r; dz += std::max<std::int64_t>(step, 1)) {
          const CellKey k{qc.x + dx, qc.y + dy, qc.z + dz};
          if (k.x < lo_.x || k.x > hi_.x || k.y < lo_.y || k.y > hi_.y || k.z < lo_.z ||
              k.z > hi_.z) {
            continue;
          }
          auto it = cells_.find(k);
          if (it == cells_.end()) continue;
          for (std::int32_t idx : it->second) {
            if (static_cast<std::ptrdiff_t>(idx) == exclude) continue;
            best2 = std::min(best2, distance2(query, pts_[static_cast<std::size_t>(idx)]));
          }
        }
      }
    }
  }
  return std::sqrt(best2);
}

bool SpatialGrid::any_within(const Vec3& query, double eps) const {
  const double eps2 = eps * eps;
  if (pts_.size() < kBruteForceLimit) {
    for (const Vec3& p : pts_) {
      if (distance2(query, p) <= eps2) return true;
    }
    return false;
  }
  const auto cell_floor = [this](double v) {
    return static_cast<std::int64_t>(std::floor(v / cell_));
  };
  const std::int64_t x0 = std::max(lo_.x, cell_floor(query.x - eps));
  const std::int64_t x1 = std::min(hi_.x, cell_floor(query.x + eps));
  const std::int64_t y0 = std::max(lo_.y, cell_floor(query.y - eps));
  const std::int64_t y1 = std::min(hi_.y, cell_floor(query.y + eps));
  const std::int64_t z0 = std::max(lo_.z, cell_floor(query.z - eps));
  const std::int64_t z1 = std::min(hi_.z, cell_floor(query.z + eps));
  for (std::int64_t x = x0; x <= x1; ++x) {
    for (std::int64_t y = y0; y <= y1; ++y) {
      for (std::int64_t z = z0; z <= z1; ++z) {
        auto it = cells_.find(CellKey{x, y, z});
        if (it == cells_.end()) continue;
        for (std::int32_t idx : it->second) {
          if (distance2(query, pts_[static_cast<std::size_t>(idx)]) <= eps2) return true;
        }
      }
    }
  }
  return false;
}

double nearest_distance(const Vec3& query, const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("nearest_distance: empty cloud");
  if (cloud.size() < SpatialGrid::kBruteForceLimit) {
    double best2 = std::numeric_limits<double>::infinity();
    for (const Vec3& p : cloud.points) best2 = std::min(best2, distance2(query, p));
    return std::sqrt(best2);
  }
  return SpatialGrid(cloud).nearest(query);
}

double default_epsilon(const PointCloud& cloud, double scale) {
  if (cloud.size() < 2) throw std::invalid_argument("default_epsilon: need >= 2 points");
  SpatialGrid grid(cloud);
  std::vector<double> spacing(cloud.size());
  const std::int64_t n = static_cast<std::int64_t>(cloud.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    spacing[static_cast<std::size_t>(i)] =
        grid.nearest(cloud.points[static_cast<std::size_t>(i)], i);
  }
  auto mid = spacing.begin() + static_cast<std::ptrdiff_t>(spacing.size() / 2);
  std::nth_element(spacing.begin(), mid, spacing.end());
  return scale * *mid;
}

CoverageParams coverage_params_for(const PointCloud& full, double epsilon_scale,
                                   int angular_bins) {
  return CoverageParams{default_epsilon(full, epsilon_scale), angular_bins};
}

double coverage_score(const PointCloud& partial, const PointCloud& full,
                      const CoverageParams& params) {
  if (full.empty()) throw std::invalid_argument("coverage_score: full cloud is empty");
  if (partial.empty()) return 0.0;

  const SpatialGrid grid(partial, params.epsilon);
  const std::int64_t n = static_cast<std::int64_t>(full.size());
  std::int64_t covered = 0;
#pragma omp parallel for schedule(static) reduction(+ : covered)
  for (std::int64_t i = 0; i < n; ++i) {
    if (grid.any_within(full.points[static_cast<std::size_t>(i)], params.epsilon)) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(n);
}

std::vector<std::int32_t> visible_indices(const PointCloud& full, const Vec3& viewpoint,
                                          const CoverageParams& params, const Vec3& target) {
  if (full.empty()) throw std::invalid_argument("visible_indices: full cloud is empty");
  if (params.angular_bins < 8) throw std::invalid_argument("visible_indices: angular_bins < 8");

  const Vec3 look = target - viewpoint;
  if (look.norm2() <= 0.0) {
    throw std::invalid_argument("visible_indices: viewpoint coincides with target");
  }
  const Vec3 forward = look.normalized();
  const Vec3 up0 = std::abs(forward.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  const Vec3 right = up0.cross(forward).normalized();
  const Vec3 up = forward.cross(right);

  const int bins = params.angular_bins;
  const std::int64_t n = static_cast<std::int64_t>(full.size());
  std::vector<std::int32_t> cell(full.size());
  std::vector<double> depth(full.size());

#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const Vec3 d = full.points[static_cast<std::size_t>(i)] - viewpoint;
    const double dist = d.norm();
    const Vec3 dn = d / dist;
    const double az = std::atan2(dn.dot(right), dn.dot(forward));
    const double el = std::asin(std::clamp(dn.dot(up), -1.0, 1.0));
    const int az_bin = std::clamp(static_cast<int>((az + kPi) / (2.0 * kPi) * bins), 0, bins - 1);
    const int el_bin =
        std::clamp(static_cast<int>((el + kPi / 2.0) / kPi * bins), 0, bins - 1);
    cell[static_cast<std::size_t>(i)] = az_bin * bins + el_bin;
    depth[static_cast<std::size_t>(i)] = dist;
  }

  std::vector<double> min_depth(static_cast<std::size_t>(bins) * bins,
                                std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < full.size(); ++i) {
    double& m = min_depth[static_cast<std::size_t>(cell[i])];
    m = std::min(m, depth[i]);
  }

  const double band = params.epsilon * params.depth_band_scale;
  std::vector<std::uint8_t> keep(full.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t ui = static_cast<std::size_t>(i);
    keep[ui] = depth[ui] <= min_depth[static_cast<std::size_t>(cell[ui])] + band;
  }

  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (keep[i]) out.push_back(static_cast<std::int32_t>(i));
  }
  return out;
}

PointCloud visible_points(const PointCloud& full, const Vec3& viewpoint,
                          const CoverageParams& params, const Vec3& target) {
  PointCloud out;
  for (std::int32_t i : visible_indices(full, viewpoint, params, target)) {
    out.points.push_back(full.points[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<double> coverage_gain_vector(const PointCloud& partial, const PointCloud& full,
                                         const ViewSphere& sphere, const CoverageParams& params) {
  if (full.empty()) throw std::invalid_argument("coverage_gain_vector: full cloud is empty");

  const double base = coverage_score(partial, full, params);
  std::vector<double> gains(sphere.size());
  const std::int64_t n_v = static_cast<std::int64_t>(sphere.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t j = 0; j < n_v; ++j) {
    const std::size_t uj = static_cast<std::size_t>(j);
    PointCloud merged = partial;
    for (std::int32_t i : visible_indices(full, sphere.position(uj), params, sphere.center)) {
      merged.points.push_back(full.points[static_cast<std::size_t>(i)]);
    }
    gains[uj] = coverage_score(merged, full, params) - base;
  }
  return gains;
}

// --- serialization ---

std::string cloud_to_json(const PointCloud& cloud) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Vec3& p : cloud.points) arr.push_back({p.x, p.y, p.z});
  return arr.dump();
}

PointCloud cloud_from_json(const std::string& text) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("cloud JSON parse failed: ") + e.what());
  }
  if (!arr.is_array()) throw DataError("cloud JSON: expected a top-level array");
  PointCloud cloud;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& t = arr[i];
    if (!t.is_array() || t.size() != 3 || !t[0].is_number() || !t[1].is_number() ||
        !t[2].is_number()) {
      throw DataError("cloud JSON: entry " + std::to_string(i) + " is not an [x,y,z] triple");
    }
    Vec3 p{t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
    if (!p.finite()) throw DataError("cloud JSON: entry " + std::to_string(i) + " is not finite");
    cloud.points.push_back(p);
  }
  return cloud;
}

void write_cloud_json(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << cloud_to_json(cloud) << '\n';
}

PointCloud read_cloud_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return cloud_from_json(ss.str());
}

void write_cloud_xyz(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const Vec3& p : cloud.points) {
    out << fmt_double(p.x) << ' ' << fmt_double(p.y) << ' ' << fmt_double(p.z) << '\n';
  }
}

PointCloud read_cloud_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Vec3 p;
    if (!(ss >> p.x >> p.y >> p.z) || !p.finite()) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": expected 'x y z'");
    }
    cloud.points.push_back(p);
  }
  return cloud;
}

}  // namespace nbv
