#pragma once

#include <cstdint>
#include <vector>

#include "nbv/geometry.hpp"

namespace nbv::reference {

// Serial, brute-force counterparts of the OpenMP kernels. They are the
// ground truth the parallel kernels are tested against and the baseline the
// benchmark compares with. Keep them simple; never call into the grid or the
// parallel paths.

double nearest_distance(const Vec3& query, const PointCloud& cloud);

double coverage_score(const PointCloud& partial, const PointCloud& full,
                      const CoverageParams& params);

std::vector<std::int32_t> visible_indices(const PointCloud& full, const Vec3& viewpoint,
                                          const CoverageParams& params,
                                          const Vec3& target = {});

std::vector<double> coverage_gain_vector(const PointCloud& partial, const PointCloud& full,
                                         const ViewSphere& sphere, const CoverageParams& params);

}  // namespace nbv::reference
