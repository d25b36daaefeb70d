#include "nbv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "nbv/errors.hpp"
#include "nbv/rng.hpp"
#include "nbv/util.hpp"

namespace nbv {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec3 unit_dir(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double t = rng.uniform(0.0, 2.0 * kPi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(t), r * std::sin(t), z};
}

Vec3 tri_sample(Rng& rng, const Vec3& a, const Vec3& b, const Vec3& c) {
  const double s = std::sqrt(rng.uniform());
  const double v = rng.uniform();
  return a * (1.0 - s) + b * (s * (1.0 - v)) + c * (s * v);
}

double tri_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

// picks an index with probability proportional to weights[i]
std::size_t pick_weighted(Rng& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  return weights.size() - 1;
}

void sample_sphere(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double r = rng.uniform(0.5, 1.5);
  for (std::size_t i = 0; i < n; ++i) out.push_back(unit_dir(rng) * r);
}

// face point of an axis-aligned box with half extents h, area-weighted
Vec3 box_surface_point(Rng& rng, const Vec3& h) {
  const std::vector<double> areas = {4.0 * h.y * h.z, 4.0 * h.x * h.z, 4.0 * h.x * h.y};
  const std::size_t axis = pick_weighted(rng, areas);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  Vec3 p{rng.uniform(-h.x, h.x), rng.uniform(-h.y, h.y), rng.uniform(-h.z, h.z)};
  if (axis == 0) p.x = sign * h.x;
  if (axis == 1) p.y = sign * h.y;
  if (axis == 2) p.z = sign * h.z;
  return p;
}

void sample_box(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const Vec3 h{rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2)};
  for (std::size_t i = 0; i < n; ++i) out.push_back(box_surface_point(rng, h));
}

void sample_cylinder(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double r = rng.uniform(0.3, 0.9);
  const double h = rng.uniform(0.5, 1.4);
  const std::vector<double> areas = {2.0 * kPi * r * 2.0 * h, 2.0 * kPi * r * r};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, 2.0 * kPi);
    if (pick_weighted(rng, areas) == 0) {
      out.push_back({r * std::cos(t), r * std::sin(t), rng.uniform(-h, h)});
    } else {
      const double rho = r * std::sqrt(rng.uniform());
      const double z = rng.uniform() < 0.5 ? -h : h;
      out.push_back({rho * std::cos(t), rho * std::sin(t), z});
    }
  }
}

void sample_torus(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double R = rng.uniform(0.6, 1.1);
  const double r = R * rng.uniform(0.2, 0.55);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform(0.0, 2.0 * kPi);
    double v = 0.0;
    // area element on the tube goes as R + r*cos(v)
    for (int attempt = 0; attempt < 10000; ++attempt) {
      v = rng.uniform(0.0, 2.0 * kPi);
      if (rng.uniform() * (R + r) <= R + r * std::cos(v)) break;
    }
    const double w = R + r * std::cos(v);
    out.push_back({w * std::cos(u), w * std::sin(u), r * std::sin(v)});
  }
}

void sample_cone(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double rb = rng.uniform(0.4, 1.0);
  const double h = rng.uniform(0.8, 1.8);
  const double slant = std::sqrt(rb * rb + h * h);
  const std::vector<double> areas = {kPi * rb * slant, kPi * rb * rb};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, 2.0 * kPi);
    const double rho = rb * std::sqrt(rng.uniform());
    if (pick_weighted(rng, areas) == 0) {
      out.push_back({rho * std::cos(t), rho * std::sin(t), h / 2.0 - h * rho / rb});
    } else {
      out.push_back({rho * std::cos(t), rho * std::sin(t), -h / 2.0});
    }
  }
}

void sample_ellipsoid(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const Vec3 ax{rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2)};
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = unit_dir(rng);
    out.push_back({ax.x * d.x, ax.y * d.y, ax.z * d.z});
  }
}

void sample_capsule(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double r = rng.uniform(0.3, 0.7);
  const double h = rng.uniform(0.3, 1.0);
  const std::vector<double> areas = {4.0 * kPi * r * h, 4.0 * kPi * r * r};
  for (std::size_t i = 0; i < n; ++i) {
    if (pick_weighted(rng, areas) == 0) {
      const double t = rng.uniform(0.0, 2.0 * kPi);
      out.push_back({r * std::cos(t), r * std::sin(t), rng.uniform(-h, h)});
    } else {
      const Vec3 d = unit_dir(rng);
      out.push_back({r * d.x, r * d.y, r * d.z + (d.z >= 0.0 ? h : -h)});
    }
  }
}

void sample_perlin_blob(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  // smooth radial displacement of a sphere by a few seeded plane waves
  const int waves = 6;
  std::vector<Vec3> dirs(waves);
  std::vector<double> freq(waves), phase(waves), amp(waves);
  for (int k = 0; k < waves; ++k) {
    dirs[k] = unit_dir(rng);
    freq[k] = rng.uniform(1.5, 4.0);
    phase[k] = rng.uniform(0.0, 2.0 * kPi);
    amp[k] = rng.uniform(0.04, 0.12);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = unit_dir(rng);
    double r = 1.0;
    for (int k = 0; k < waves; ++k) r += amp[k] * std::sin(freq[k] * d.dot(dirs[k]) + phase[k]);
    out.push_back(d * r);
  }
}

void sample_pyramid(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double a = rng.uniform(0.5, 1.0);
  const double h = rng.uniform(0.8, 1.6);
  const Vec3 apex{0, 0, h / 2.0};
  const Vec3 c[4] = {{a, a, -h / 2.0}, {-a, a, -h / 2.0}, {-a, -a, -h / 2.0}, {a, -a, -h / 2.0}};
  const double side = tri_area(apex, c[0], c[1]);
  const std::vector<double> areas = {side, side, side, side, 4.0 * a * a};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t piece = pick_weighted(rng, areas);
    if (piece < 4) {
      out.push_back(tri_sample(rng, apex, c[piece], c[(piece + 1) % 4]));
    } else {
      out.push_back({rng.uniform(-a, a), rng.uniform(-a, a), -h / 2.0});
    }
  }
}

void sample_star_prism(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const int k = 5 + static_cast<int>(rng.uniform_int(3));
  const double r_out = rng.uniform(0.7, 1.0);
  const double r_in = r_out * rng.uniform(0.4, 0.6);
  const double h = rng.uniform(0.4, 0.9);
  std::vector<Vec3> v(2 * k);
  for (int i = 0; i < 2 * k; ++i) {
    const double r = (i % 2 == 0) ? r_out : r_in;
    const double t = kPi * i / k;
    v[static_cast<std::size_t>(i)] = {r * std::cos(t), r * std::sin(t), 0.0};
  }
  const double edge = (v[1] - v[0]).norm();
  const double cap_tri = tri_area({0, 0, 0}, v[0], v[1]);
  const std::vector<double> areas = {2.0 * k * edge * 2.0 * h, 2.0 * (2.0 * k * cap_tri)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t e = rng.uniform_int(static_cast<std::uint64_t>(2 * k));
    const Vec3& p0 = v[e];
    const Vec3& p1 = v[(e + 1) % (2 * static_cast<std::size_t>(k))];
    if (pick_weighted(rng, areas) == 0) {
      Vec3 p = p0 + (p1 - p0) * rng.uniform();
      p.z = rng.uniform(-h, h);
      out.push_back(p);
    } else {
      Vec3 p = tri_sample(rng, {0, 0, 0}, p0, p1);
      p.z = rng.uniform() < 0.5 ? -h : h;
      out.push_back(p);
    }
  }
}

void sample_helix(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double R = rng.uniform(0.55, 0.85);
  const double turns = rng.uniform(2.0, 3.0);
  const double height = rng.uniform(1.0, 1.6);
  const double tube = rng.uniform(0.09, 0.18);
  const double t_max = turns * 2.0 * kPi;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, t_max);
    const Vec3 c{R * std::cos(t), R * std::sin(t), height * t / t_max - height / 2.0};
    const Vec3 tangent =
        Vec3{-R * std::sin(t), R * std::cos(t), height / t_max}.normalized();
    const Vec3 nrm = tangent.cross(Vec3{0, 0, 1}).normalized();
    const Vec3 bin = tangent.cross(nrm);
    const double psi = rng.uniform(0.0, 2.0 * kPi);
    out.push_back(c + (nrm * std::cos(psi) + bin * std::sin(psi)) * tube);
  }
}

void sample_hyperboloid(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double a = rng.uniform(0.35, 0.65);
  const double b = rng.uniform(0.35, 0.65);
  const double c = rng.uniform(0.5, 1.0);
  const double h = rng.uniform(0.6, 1.1);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = rng.uniform(-h, h);
    const double rho = std::sqrt(1.0 + z * z / (c * c));
    const double t = rng.uniform(0.0, 2.0 * kPi);
    out.push_back({a * rho * std::cos(t), b * rho * std::sin(t), z});
  }
}

void sample_lens(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double R = rng.uniform(0.9, 1.4);
  const double alpha = rng.uniform(0.5, 0.9);
  const double zc = R * std::cos(alpha);
  for (std::size_t i = 0; i < n; ++i) {
    // z-uniform cap sampling on a sphere of radius R
    const double zs = rng.uniform(zc, R);
    const double t = rng.uniform(0.0, 2.0 * kPi);
    const double rho = std::sqrt(std::max(0.0, R * R - zs * zs));
    const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
    out.push_back({rho * std::cos(t), rho * std::sin(t), side * (zs - zc)});
  }
}

void sample_cross(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double L = rng.uniform(0.7, 1.0);
  const double w = rng.uniform(0.15, 0.3);
  const Vec3 arms[3] = {{L, w, w}, {w, L, w}, {w, w, L}};
  auto strictly_inside = [](const Vec3& p, const Vec3& h) {
    return std::abs(p.x) < h.x && std::abs(p.y) < h.y && std::abs(p.z) < h.z;
  };
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p{};
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const std::size_t arm = rng.uniform_int(3);
      p = box_surface_point(rng, arms[arm]);
      if (!strictly_inside(p, arms[(arm + 1) % 3]) && !strictly_inside(p, arms[(arm + 2) % 3])) {
        break;
      }
    }
    out.push_back(p);
  }
}

void sample_paraboloid(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double f = rng.uniform(0.3, 0.6);
  const double rim = rng.uniform(0.8, 1.2);
  const double depth = rim * rim / (4.0 * f);
  for (std::size_t i = 0; i < n; ++i) {
    const double rho = rim * std::sqrt(rng.uniform());
    const double t = rng.uniform(0.0, 2.0 * kPi);
    out.push_back({rho * std::cos(t), rho * std::sin(t), rho * rho / (4.0 * f) - depth / 2.0});
  }
}

void sample_egg(Rng& rng, std::size_t n, std::vector<Vec3>& out) {
  const double a = rng.uniform(0.5, 0.75);
  const double c_top = a * rng.uniform(1.1, 1.6);
  const double c_bot = a * rng.uniform(0.7, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = unit_dir(rng);
    out.push_back({a * d.x, a * d.y, (d.z >= 0.0 ? c_top : c_bot) * d.z});
  }
}

struct FamilyEntry {
  ShapeFamily family;
  const char* name;
  void (*sampler)(Rng&, std::size_t, std::vector<Vec3>&);
};

const FamilyEntry kFamilies[] = {
    {ShapeFamily::kSphere, "sphere", sample_sphere},
    {ShapeFamily::kBox, "box", sample_box},
    {ShapeFamily::kCylinder, "cylinder", sample_cylinder},
    {ShapeFamily::kTorus, "torus", sample_torus},
    {ShapeFamily::kCone, "cone", sample_cone},
    {ShapeFamily::kEllipsoid, "ellipsoid", sample_ellipsoid},
    {ShapeFamily::kCapsule, "capsule", sample_capsule},
    {ShapeFamily::kPerlinBlob, "perlin-blob", sample_perlin_blob},
    {ShapeFamily::kPyramid, "pyramid", sample_pyramid},
    {ShapeFamily::kStarPrism, "star-prism", sample_star_prism},
    {ShapeFamily::kHelix, "helix", sample_helix},
    {ShapeFamily::kHyperboloid, "hyperboloid", sample_hyperboloid},
    {ShapeFamily::kLens, "lens", sample_lens},
    {ShapeFamily::kCross, "cross", sample_cross},
    {ShapeFamily::kParaboloid, "paraboloid", sample_paraboloid},
    {ShapeFamily::kEgg, "egg", sample_egg},
};

const FamilyEntry& entry_of(ShapeFamily family) {
  for (const FamilyEntry& e : kFamilies) {
    if (e.family == family) return e;
  }
  throw std::invalid_argument("unknown shape family");
}

}  // namespace

const std::array<ShapeFamily, 8>& known_families() {
  static const std::array<ShapeFamily, 8> fams = {
      ShapeFamily::kSphere,    ShapeFamily::kBox,     ShapeFamily::kCylinder,
      ShapeFamily::kTorus,     ShapeFamily::kCone,    ShapeFamily::kEllipsoid,
      ShapeFamily::kCapsule,   ShapeFamily::kPerlinBlob};
  return fams;
}

const std::array<ShapeFamily, 8>& novel_families() {
  static const std::array<ShapeFamily, 8> fams = {
      ShapeFamily::kPyramid, ShapeFamily::kStarPrism,   ShapeFamily::kHelix,
      ShapeFamily::kHyperboloid, ShapeFamily::kLens,    ShapeFamily::kCross,
      ShapeFamily::kParaboloid,  ShapeFamily::kEgg};
  return fams;
}

std::string family_name(ShapeFamily family) { return entry_of(family).name; }

ShapeFamily family_from_name(const std::string& name) {
  for (const FamilyEntry& e : kFamilies) {
    if (name == e.name) return e.family;
  }
  throw DataError("unknown shape family: " + name);
}

PointCloud generate_shape(ShapeFamily family, std::uint64_t seed, std::size_t n_points) {
  if (n_points < 64) throw std::invalid_argument("generate_shape: n_points must be >= 64");
  Rng rng(seed);
  std::vector<Vec3> pts;
  pts.reserve(n_points);
  entry_of(family).sampler(rng, n_points, pts);

  double max2 = 0.0;
  for (const Vec3& p : pts) max2 = std::max(max2, p.norm2());
  if (!(max2 > 0.0) || !std::isfinite(max2)) {
    throw std::invalid_argument("generate_shape: degenerate surface");
  }
  const double s = 1.0 / std::sqrt(max2);
  for (Vec3& p : pts) p = p * s;
  return PointCloud(std::move(pts));
}

std::vector<NbvSample> simulate_scan_sequence(const PointCloud& full, const ViewSphere& sphere,
                                              const CoverageParams& params, int steps,
                                              ScanPolicy policy, std::uint64_t seed,
                                              std::size_t n_in, double random_fraction,
                                              const std::string& model_id,
                                              const std::string& family, ScanTrace* trace) {
  if (steps < 1) throw std::invalid_argument("simulate_scan_sequence: steps must be >= 1");
  if (full.empty()) throw std::invalid_argument("simulate_scan_sequence: full cloud is empty");
  if (sphere.size() == 0) throw std::invalid_argument("simulate_scan_sequence: empty view sphere");
  if (n_in == 0) throw std::invalid_argument("simulate_scan_sequence: n_in must be positive");

  Rng rng(seed);
  const std::size_t n_v = sphere.size();
  std::vector<std::uint8_t> visited(n_v, 0);
  std::vector<std::uint8_t> in_partial(full.size(), 0);
  std::vector<Vec3> true_partial;

  auto absorb = [&](std::size_t view) {
    visited[view] = 1;
    if (trace) trace->visited_order.push_back(static_cast<int>(view));
    for (std::int32_t i : visible_indices(full, sphere.position(view), params)) {
      const std::size_t ui = static_cast<std::size_t>(i);
      if (!in_partial[ui]) {
        in_partial[ui] = 1;
        true_partial.push_back(full.points[ui]);
      }
    }
  };
  absorb(rng.uniform_int(n_v));

  std::vector<NbvSample> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    NbvSample s;
    s.model_id = model_id;
    s.family = family;
    s.step = k;
    s.view_state = visited;
    if (true_partial.size() == n_in) {
      s.partial = PointCloud(true_partial);
    } else {
      s.partial.points.reserve(n_in);
      for (std::size_t i = 0; i < n_in; ++i) {
        s.partial.points.push_back(true_partial[rng.uniform_int(true_partial.size())]);
      }
    }
    s.gt = coverage_gain_vector(s.partial, full, sphere, params);
    if (trace) {
      trace->realized_coverage.push_back(
          coverage_score(PointCloud(true_partial), full, params));
    }
    out.push_back(std::move(s));
    if (k + 1 == steps) break;

    const std::vector<double>& gt = out.back().gt;
    std::vector<std::size_t> open;
    for (std::size_t j = 0; j < n_v; ++j) {
      if (!visited[j]) open.push_back(j);
    }
    std::size_t next;
    if (open.empty()) {
      next = argmax_lowest(gt);
    } else {
      const bool go_random =
          policy == ScanPolicy::kRandom ||
          (policy == ScanPolicy::kMixed && rng.uniform() < random_fraction);
      if (go_random) {
        next = open[rng.uniform_int(open.size())];
      } else {
        next = open[0];
        for (std::size_t j : open) {
          if (gt[j] > gt[next]) next = j;
        }
      }
    }
    absorb(next);
  }
  return out;
}

void validate_gen_config(const GenConfig& config) {
  if (config.n_views < 2) throw ConfigError("gen config: n_views must be >= 2");
  if (!(config.radius > 0.0)) throw ConfigError("gen config: radius must be > 0");
  if (!(config.epsilon_scale > 0.0)) throw ConfigError("gen config: epsilon_scale must be > 0");
  if (config.angular_bins < 8) throw ConfigError("gen config: angular_bins must be >= 8");
  if (!(config.depth_band_scale > 0.0)) {
    throw ConfigError("gen config: depth_band_scale must be > 0");
  }
  if (config.n_points < 64) throw ConfigError("gen config: n_points must be >= 64");
  if (config.n_in < 1) throw ConfigError("gen config: n_in must be >= 1");
  if (config.steps < 1) throw ConfigError("gen config: steps must be >= 1");
  if (config.train_per_family < 0 || config.valid_per_family < 0 ||
      config.test_per_family < 0 || config.novel_per_family < 0) {
    throw ConfigError("gen config: split counts must be >= 0");
  }
  if (config.random_step_fraction < 0.0 || config.random_step_fraction > 1.0) {
    throw ConfigError("gen config: random_step_fraction must be in [0,1]");
  }
}

namespace {

struct ModelJob {
  std::string id;
  ShapeFamily family;
  int split;  // 0 train, 1 valid, 2 test, 3 test_novel
};

std::string model_id_for(ShapeFamily family, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_%04d", index);
  return family_name(family) + buf;
}

}  // namespace

DatasetSplit build_dataset(const GenConfig& config, std::uint64_t master_seed,
                           const std::string& out_dir) {
  validate_gen_config(config);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory: " + out_dir);

  DatasetSplit split;
  std::vector<ModelJob> jobs;
  for (ShapeFamily fam : known_families()) {
    int idx = 0;
    for (int m = 0; m < config.train_per_family; ++m, ++idx) {
      jobs.push_back({model_id_for(fam, idx), fam, 0});
      split.train.push_back(jobs.back().id);
    }
    for (int m = 0; m < config.valid_per_family; ++m, ++idx) {
      jobs.push_back({model_id_for(fam, idx), fam, 1});
      split.valid.push_back(jobs.back().id);
    }
    for (int m = 0; m < config.test_per_family; ++m, ++idx) {
      jobs.push_back({model_id_for(fam, idx), fam, 2});
      split.test.push_back(jobs.back().id);
    }
  }
  for (ShapeFamily fam : novel_families()) {
    for (int m = 0; m < config.novel_per_family; ++m) {
      jobs.push_back({model_id_for(fam, m), fam, 3});
      split.test_novel.push_back(jobs.back().id);
    }
  }

  std::set<std::string> ids;
  std::set<std::string> known_in_use, novel_in_use;
  for (const ModelJob& job : jobs) {
    if (!ids.insert(job.id).second) throw ConfigError("duplicate model id: " + job.id);
    (job.split == 3 ? novel_in_use : known_in_use).insert(family_name(job.family));
  }
  for (const std::string& fam : novel_in_use) {
    if (known_in_use.count(fam)) {
      throw ConfigError("novel split shares family with train/valid/test: " + fam);
    }
  }

  const Rng data_rng = Rng(master_seed).child("data");
  std::vector<std::vector<NbvSample>> results(jobs.size());
  const std::int64_t n_jobs = static_cast<std::int64_t>(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t j = 0; j < n_jobs; ++j) {
    const ModelJob& job = jobs[static_cast<std::size_t>(j)];
    Rng rng = data_rng.child(job.id);
    const PointCloud full =
        generate_shape(job.family, rng.child("shape").seed(),
                       static_cast<std::size_t>(config.n_points));
    CoverageParams params =
        coverage_params_for(full, config.epsilon_scale, config.angular_bins);
    params.depth_band_scale = config.depth_band_scale;
    const ViewSphere sphere = make_view_sphere(config.n_views, config.radius);
    results[static_cast<std::size_t>(j)] = simulate_scan_sequence(
        full, sphere, params, config.steps, ScanPolicy::kMixed, rng.child("scan").seed(),
        static_cast<std::size_t>(config.n_in), config.random_step_fraction, job.id,
        family_name(job.family));
  }

  const char* names[4] = {"train.ndjson", "valid.ndjson", "test.ndjson", "test_novel.ndjson"};
  std::array<std::ofstream, 4> files;
  for (int s = 0; s < 4; ++s) {
    const std::string path = out_dir + "/" + names[s];
    files[static_cast<std::size_t>(s)].open(path, std::ios::binary);
    if (!files[static_cast<std::size_t>(s)]) throw DataError("cannot open for writing: " + path);
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (const NbvSample& s : results[j]) {
      files[static_cast<std::size_t>(jobs[j].split)] << sample_to_ndjson(s) << '\n';
    }
  }

  nlohmann::json manifest;
  manifest["train"] = split.train;
  manifest["valid"] = split.valid;
  manifest["test"] = split.test;
  manifest["test_novel"] = split.test_novel;
  manifest["config"] = {{"master_seed", master_seed},
                        {"n_views", config.n_views},
                        {"radius", config.radius},
                        {"epsilon_scale", config.epsilon_scale},
                        {"angular_bins", config.angular_bins},
                        {"depth_band_scale", config.depth_band_scale},
                        {"n_points", config.n_points},
                        {"n_in", config.n_in},
                        {"steps", config.steps},
                        {"train_per_family", config.train_per_family},
                        {"valid_per_family", config.valid_per_family},
                        {"test_per_family", config.test_per_family},
                        {"novel_per_family", config.novel_per_family},
                        {"random_step_fraction", config.random_step_fraction}};
  const std::string manifest_path = out_dir + "/manifest.json";
  std::ofstream mf(manifest_path, std::ios::binary);
  if (!mf) throw DataError("cannot open for writing: " + manifest_path);
  mf << manifest.dump(2) << '\n';

  return split;
}

std::string sample_to_ndjson(const NbvSample& sample) {
  nlohmann::json j;
  j["model_id"] = sample.model_id;
  j["family"] = sample.family;
  j["step"] = sample.step;
  nlohmann::json partial = nlohmann::json::array();
  for (const Vec3& p : sample.partial.points) partial.push_back({p.x, p.y, p.z});
  j["partial"] = std::move(partial);
  nlohmann::json vs = nlohmann::json::array();
  for (std::uint8_t v : sample.view_state) vs.push_back(static_cast<int>(v));
  j["view_state"] = std::move(vs);
  j["gt"] = sample.gt;
  return j.dump();
}

NbvSample sample_from_ndjson(const std::string& line, const std::string& where) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": bad json: " + e.what());
  }
  if (!j.is_object()) throw DataError(where + ": record is not an object");

  auto need = [&](const char* field) -> const nlohmann::json& {
    auto it = j.find(field);
    if (it == j.end()) throw DataError(where + ": missing field '" + field + "'");
    return *it;
  };

  NbvSample s;
  const nlohmann::json& model_id = need("model_id");
  if (!model_id.is_string()) throw DataError(where + ": field 'model_id' must be a string");
  s.model_id = model_id.get<std::string>();

  const nlohmann::json& family = need("family");
  if (!family.is_string()) throw DataError(where + ": field 'family' must be a string");
  s.family = family.get<std::string>();

  const nlohmann::json& step = need("step");
  if (!step.is_number_integer() || step.get<int>() < 0) {
    throw DataError(where + ": field 'step' must be a nonnegative integer");
  }
  s.step = step.get<int>();

  const nlohmann::json& partial = need("partial");
  if (!partial.is_array() || partial.empty()) {
    throw DataError(where + ": field 'partial' must be a non-empty array");
  }
  s.partial.points.reserve(partial.size());
  for (const nlohmann::json& t : partial) {
    if (!t.is_array() || t.size() != 3 || !t[0].is_number() || !t[1].is_number() ||
        !t[2].is_number()) {
      throw DataError(where + ": field 'partial' entries must be [x,y,z] triples");
    }
    const Vec3 p{t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
    if (!p.finite()) throw DataError(where + ": field 'partial' has a non-finite point");
    s.partial.points.push_back(p);
  }

  const nlohmann::json& vs = need("view_state");
  if (!vs.is_array()) throw DataError(where + ": field 'view_state' must be an array");
  int n_visited = 0;
  for (const nlohmann::json& v : vs) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
      throw DataError(where + ": field 'view_state' entries must be 0 or 1");
    }
    s.view_state.push_back(static_cast<std::uint8_t>(v.get<int>()));
    n_visited += v.get<int>();
  }
  if (n_visited == 0) throw DataError(where + ": field 'view_state' has no visited view");

  const nlohmann::json& gt = need("gt");
  if (!gt.is_array() || gt.size() != vs.size()) {
    throw DataError(where + ": field 'gt' must be an array matching view_state");
  }
  for (const nlohmann::json& g : gt) {
    if (!g.is_number()) throw DataError(where + ": field 'gt' entries must be numbers");
    const double val = g.get<double>();
    if (!(val >= 0.0 && val <= 1.0)) {
      throw DataError(where + ": field 'gt' entries must lie in [0,1]");
    }
    s.gt.push_back(val);
  }
  return s;
}

std::vector<NbvSample> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<NbvSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(sample_from_ndjson(line, path + ":" + std::to_string(line_no)));
  }
  return out;
}

}  // namespace nbv
