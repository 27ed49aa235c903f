#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "udma/config.hpp"
#include "udma/point_cloud.hpp"
#include "udma/taxonomy.hpp"

namespace udma {

struct RansacConfig {
    int iterations = 200;
    double threshold = 0.15;          // meters
    double max_tilt = 8.0 * 0.017453292519943295;  // radians from vertical

    static RansacConfig from(const RunConfig& cfg);
};

struct ClusterConfig {
    double base_threshold = 0.5;  // t0, meters
    double range_coeff = 0.01;    // added per meter of min range

    static ClusterConfig from(const RunConfig& cfg);
    double connect_threshold(double r_min) const { return base_threshold + range_coeff * r_min; }
};

struct CategoryConfig {
    double wall_min_height = 2.5;   // meters of vertical extent
    double wall_min_spread = 25.0;  // largest covariance eigenvalue, m^2
    double car_length = 6.0;
    double car_width = 3.0;
    double car_height = 2.5;
    int car_min_points = 30;
    double car_point_min_height = 0.3;  // above the fitted ground

    static CategoryConfig from(const RunConfig& cfg);
};

// Plane n.p = offset with n unit length and n.z > 0.
struct GroundModel {
    std::array<double, 3> normal{0.0, 0.0, 1.0};
    double offset = 0.0;
    double inlier_threshold = 0.15;

    double signed_height(const Point& p) const {
        return normal[0] * p.x + normal[1] * p.y + normal[2] * p.z - offset;
    }
    bool is_inlier(const Point& p) const {
        double d = signed_height(p);
        return (d < 0 ? -d : d) <= inlier_threshold;
    }
};

// Plane with the most inliers among seeded 3-point candidates whose tilt
// stays within cfg.max_tilt. Deterministic per seed.
GroundModel fit_ground(const PointCloud& cloud, const RansacConfig& cfg, std::uint64_t seed);

struct ComponentStats {
    std::array<double, 3> centroid{};
    std::array<double, 3> min_corner{};
    std::array<double, 3> max_corner{};
    std::array<double, 3> eigenvalues{};  // covariance spectrum, ascending
    std::int64_t count = 0;
    std::int64_t high_count = 0;  // points >= car_point_min_height above ground

    std::array<double, 3> extent() const {
        return {max_corner[0] - min_corner[0], max_corner[1] - min_corner[1],
                max_corner[2] - min_corner[2]};
    }
};

struct ComponentMap {
    std::vector<std::int32_t> component_id;  // per point, -1 = unassigned
    std::vector<PriorCategory> categories;   // per component
    std::vector<ComponentStats> stats;
    int ground_component = -1;

    std::size_t num_components() const { return stats.size(); }
};

// Ground inliers form one component; everything else is partitioned by
// single-linkage connectivity at distance t0 + coeff*min(r_p, r_q).
// Component ids are dense, ground first, then by smallest member index.
ComponentMap cluster_components(const PointCloud& cloud, const GroundModel& ground,
                                const ClusterConfig& cfg, const CategoryConfig& cat_cfg);

// Fills per-component categories from the stats. Precedence:
// ground > car > wall > unknown.
void assign_prior_categories(ComponentMap& map, const CategoryConfig& cfg);

// Per-point ids as little-endian 32-bit signed integers.
void write_component_ids(const std::string& path, const std::vector<std::int32_t>& ids);
std::vector<std::int32_t> read_component_ids(const std::string& path);
// Text sidecar: one line per component with category and stats.
std::string component_sidecar(const ComponentMap& map);

}  // namespace udma
