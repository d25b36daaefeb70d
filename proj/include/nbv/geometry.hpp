#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace nbv {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return x * x + y * y + z * z; }
  double norm() const { return std::sqrt(norm2()); }
  Vec3 normalized() const { return *this / norm(); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance2(const Vec3& a, const Vec3& b) { return (a - b).norm2(); }
inline double distance(const Vec3& a, const Vec3& b) { return std::sqrt(distance2(a, b)); }

// Ordered list of surface samples in dimensionless model units. May be empty
// (the empty reconstruction); coordinates must stay finite.
struct PointCloud {
  std::vector<Vec3> points;

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool finite() const {
    for (const Vec3& p : points) {
      if (!p.finite()) return false;
    }
    return true;
  }
};

// Candidate camera positions: unit directions on a sphere of given radius
// around a center. Camera j sits at center + radius * views[j].
struct ViewSphere {
  std::vector<Vec3> views;
  double radius = 3.0;
  Vec3 center{};

  std::size_t size() const { return views.size(); }
  Vec3 position(std::size_t j) const { return center + views[j] * radius; }
};

// epsilon: coverage distance threshold. angular_bins: resolution per axis of
// the spherical z-buffer used for visibility (angular_bins^2 cells).
// depth_band_scale: the z-buffer keeps points within depth_band_scale*epsilon
// of the nearest depth in their cell; wider than epsilon itself because cells
// span a range of surface depths on sparsely sampled clouds.
struct CoverageParams {
  double epsilon = 0.05;
  int angular_bins = 20;
  double depth_band_scale = 5.0;
};

// Fibonacci-spiral view sampling; deterministic, near-uniform.
// Throws std::invalid_argument for n_views < 2 or radius <= 0.
ViewSphere make_view_sphere(int n_views, double radius, const Vec3& center = {});

// scale x the median nearest-neighbor spacing of the cloud. Needs >= 2 points.
double default_epsilon(const PointCloud& cloud, double scale = 2.0);

CoverageParams coverage_params_for(const PointCloud& full, double epsilon_scale = 2.0,
                                   int angular_bins = 20);

// Uniform spatial hash grid over a point cloud. Queries are exact; clouds
// smaller than kBruteForceLimit are scanned directly instead.
class SpatialGrid {
 public:
  static constexpr std::size_t kBruteForceLimit = 64;

  SpatialGrid(const PointCloud& cloud, double cell_size);
  explicit SpatialGrid(const PointCloud& cloud);

  static double suggest_cell(const PointCloud& cloud);

  // Exact min distance from query to the cloud. exclude skips one index
  // (used for self-excluding nearest-neighbor spacing).
  double nearest(const Vec3& query, std::ptrdiff_t exclude = -1) const;

  // True iff some point lies within eps of query (inclusive).
  bool any_within(const Vec3& query, double eps) const;

  double cell_size() const { return cell_; }

 private:
  struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
  };
  struct CellKeyHash {
    std::size_t operator()(const CellKey& k) const;
  };

  CellKey key_of(const Vec3& p) const;

  std::vector<Vec3> pts_;
  double cell_ = 1.0;
  std::unordered_map<CellKey, std::vector<std::int32_t>, CellKeyHash> cells_;
  CellKey lo_{0, 0, 0}, hi_{0, 0, 0};  // occupied cell bounds
};

// Exact min Euclidean distance from query to a non-empty cloud.
double nearest_distance(const Vec3& query, const PointCloud& cloud);

// Fraction of `full` whose nearest neighbor in `partial` lies within
// params.epsilon. Empty partial scores 0; empty full is an error.
double coverage_score(const PointCloud& partial, const PointCloud& full,
                      const CoverageParams& params);

// Spherical z-buffer visibility: indices of `full` whose depth from the
// viewpoint is within params.epsilon of the nearest depth in their
// (azimuth, elevation) cell. `target` is where the camera looks.
std::vector<std::int32_t> visible_indices(const PointCloud& full, const Vec3& viewpoint,
                                          const CoverageParams& params,
                                          const Vec3& target = {});

PointCloud visible_points(const PointCloud& full, const Vec3& viewpoint,
                          const CoverageParams& params, const Vec3& target = {});

// Per-view coverage gain: entry j is the coverage added by scanning from
// view j on top of `partial`.
std::vector<double> coverage_gain_vector(const PointCloud& partial, const PointCloud& full,
                                         const ViewSphere& sphere, const CoverageParams& params);

// --- serialization ---

// JSON array of [x, y, z] triples.
std::string cloud_to_json(const PointCloud& cloud);
PointCloud cloud_from_json(const std::string& text);
void write_cloud_json(const std::string& path, const PointCloud& cloud);
PointCloud read_cloud_json(const std::string& path);

// Plain-text XYZ, one "x y z" per line.
void write_cloud_xyz(const std::string& path, const PointCloud& cloud);
PointCloud read_cloud_xyz(const std::string& path);

}  // namespace nbv
