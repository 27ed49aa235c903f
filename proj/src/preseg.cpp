#include "udma/preseg.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "udma/errors.hpp"
#include "udma/rng.hpp"

namespace udma {

namespace {

constexpr double kDegToRad = 0.017453292519943295;

struct UnionFind {
    std::vector<std::int64_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    std::int64_t find(std::int64_t a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
    void unite(std::int64_t a, std::int64_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) parent[b] = a;  // keep the smaller index as root
        else parent[a] = b;
    }
};

double range_of(const Point& p) { return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z); }

double sq_dist(const Point& a, const Point& b) {
    double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace

RansacConfig RansacConfig::from(const RunConfig& cfg) {
    RansacConfig r;
    r.iterations = cfg.ransac_iterations;
    r.threshold = cfg.ransac_threshold;
    r.max_tilt = cfg.ransac_max_tilt_deg * kDegToRad;
    return r;
}

ClusterConfig ClusterConfig::from(const RunConfig& cfg) {
    ClusterConfig c;
    c.base_threshold = cfg.cluster_base_threshold;
    c.range_coeff = cfg.cluster_range_coeff;
    return c;
}

CategoryConfig CategoryConfig::from(const RunConfig& cfg) {
    CategoryConfig c;
    c.wall_min_height = cfg.wall_min_height;
    c.wall_min_spread = cfg.wall_min_spread;
    c.car_length = cfg.car_box_length;
    c.car_width = cfg.car_box_width;
    c.car_height = cfg.car_box_height;
    c.car_min_points = cfg.car_min_points;
    c.car_point_min_height = cfg.car_point_min_height;
    return c;
}

GroundModel fit_ground(const PointCloud& cloud, const RansacConfig& cfg, std::uint64_t seed) {
    std::size_t n = cloud.size();
    if (n < 3) throw DomainError("ground fit needs at least 3 points, got " + std::to_string(n));
    auto rng = make_rng(seed, 0x9a05);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);

    GroundModel best;
    std::int64_t best_inliers = -1;
    for (int it = 0; it < cfg.iterations; ++it) {
        std::size_t ia = pick(rng), ib = pick(rng), ic = pick(rng);
        if (ia == ib || ib == ic || ia == ic) continue;
        const Point& a = cloud.points[ia];
        const Point& b = cloud.points[ib];
        const Point& c = cloud.points[ic];
        double ux = b.x - a.x, uy = b.y - a.y, uz = b.z - a.z;
        double vx = c.x - a.x, vy = c.y - a.y, vz = c.z - a.z;
        double nx = uy * vz - uz * vy;
        double ny = uz * vx - ux * vz;
        double nz = ux * vy - uy * vx;
        double norm = std::sqrt(nx * nx + ny * ny + nz * nz);
        if (norm < 1e-12) continue;  // collinear sample
        nx /= norm;
        ny /= norm;
        nz /= norm;
        if (nz < 0.0) {
            nx = -nx;
            ny = -ny;
            nz = -nz;
        }
        if (std::acos(std::clamp(nz, -1.0, 1.0)) > cfg.max_tilt) continue;
        GroundModel cand;
        cand.normal = {nx, ny, nz};
        cand.offset = nx * a.x + ny * a.y + nz * a.z;
        cand.inlier_threshold = cfg.threshold;
        std::int64_t inliers = 0;
        for (const Point& p : cloud.points)
            if (cand.is_inlier(p)) ++inliers;
        if (inliers > best_inliers) {
            best_inliers = inliers;
            best = cand;
        }
    }
    if (best_inliers < 0)
        throw DomainError("no ground plane candidate within the tilt limit");
    return best;
}

ComponentMap cluster_components(const PointCloud& cloud, const GroundModel& ground,
                                const ClusterConfig& cfg, const CategoryConfig& cat_cfg) {
    std::size_t n = cloud.size();
    ComponentMap map;
    map.component_id.assign(n, -1);

    std::vector<std::size_t> rest;  // non-ground point indices, ascending
    std::vector<std::uint8_t> is_ground(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (ground.is_inlier(cloud.points[i])) is_ground[i] = 1;
        else rest.push_back(i);
    }
    bool has_ground = rest.size() < n;

    // Single linkage over the rest. The voxel edge is the largest possible
    // connection threshold, so any connected pair shares a cell or touches
    // an adjacent one; the result equals brute-force connected components.
    UnionFind uf(rest.size());
    if (!rest.empty()) {
        std::vector<double> ranges(rest.size());
        double r_max = 0.0;
        for (std::size_t k = 0; k < rest.size(); ++k) {
            ranges[k] = range_of(cloud.points[rest[k]]);
            r_max = std::max(r_max, ranges[k]);
        }
        const double cell = cfg.connect_threshold(r_max);
        std::map<std::array<std::int64_t, 3>, std::vector<std::size_t>> grid;
        auto cell_of = [&](const Point& p) {
            return std::array<std::int64_t, 3>{
                static_cast<std::int64_t>(std::floor(p.x / cell)),
                static_cast<std::int64_t>(std::floor(p.y / cell)),
                static_cast<std::int64_t>(std::floor(p.z / cell))};
        };
        for (std::size_t k = 0; k < rest.size(); ++k)
            grid[cell_of(cloud.points[rest[k]])].push_back(k);
        for (std::size_t k = 0; k < rest.size(); ++k) {
            const Point& p = cloud.points[rest[k]];
            auto base = cell_of(p);
            for (std::int64_t dx = -1; dx <= 1; ++dx)
                for (std::int64_t dy = -1; dy <= 1; ++dy)
                    for (std::int64_t dz = -1; dz <= 1; ++dz) {
                        auto it = grid.find({base[0] + dx, base[1] + dy, base[2] + dz});
                        if (it == grid.end()) continue;
                        for (std::size_t j : it->second) {
                            if (j >= k) continue;  // each pair once
                            double t =
                                cfg.connect_threshold(std::min(ranges[k], ranges[j]));
                            if (sq_dist(p, cloud.points[rest[j]]) <= t * t) uf.unite(k, j);
                        }
                    }
        }
    }

    // Dense ids: ground first, then clusters by smallest member index.
    std::int32_t next_id = 0;
    if (has_ground) map.ground_component = next_id++;
    std::map<std::int64_t, std::int32_t> root_to_id;
    for (std::size_t k = 0; k < rest.size(); ++k) {
        std::int64_t root = uf.find(static_cast<std::int64_t>(k));
        auto [it, inserted] = root_to_id.try_emplace(root, next_id);
        if (inserted) ++next_id;
        map.component_id[rest[k]] = it->second;
    }
    for (std::size_t i = 0; i < n; ++i)
        if (is_ground[i]) map.component_id[i] = map.ground_component;

    // Stats: two passes for a stable covariance.
    map.stats.assign(next_id, ComponentStats{});
    for (auto& s : map.stats) {
        s.min_corner = {1e300, 1e300, 1e300};
        s.max_corner = {-1e300, -1e300, -1e300};
    }
    for (std::size_t i = 0; i < n; ++i) {
        ComponentStats& s = map.stats[map.component_id[i]];
        const Point& p = cloud.points[i];
        s.centroid[0] += p.x;
        s.centroid[1] += p.y;
        s.centroid[2] += p.z;
        s.min_corner = {std::min(s.min_corner[0], p.x), std::min(s.min_corner[1], p.y),
                        std::min(s.min_corner[2], p.z)};
        s.max_corner = {std::max(s.max_corner[0], p.x), std::max(s.max_corner[1], p.y),
                        std::max(s.max_corner[2], p.z)};
        ++s.count;
        if (ground.signed_height(p) >= cat_cfg.car_point_min_height) ++s.high_count;
    }
    for (auto& s : map.stats)
        for (auto& c : s.centroid) c /= static_cast<double>(s.count);
    std::vector<Eigen::Matrix3d> cov(next_id, Eigen::Matrix3d::Zero());
    for (std::size_t i = 0; i < n; ++i) {
        const ComponentStats& s = map.stats[map.component_id[i]];
        Eigen::Vector3d d(cloud.points[i].x - s.centroid[0], cloud.points[i].y - s.centroid[1],
                          cloud.points[i].z - s.centroid[2]);
        cov[map.component_id[i]] += d * d.transpose();
    }
    for (std::int32_t c = 0; c < next_id; ++c) {
        cov[c] /= static_cast<double>(map.stats[c].count);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov[c]);
        for (int e = 0; e < 3; ++e) map.stats[c].eigenvalues[e] = solver.eigenvalues()[e];
    }

    map.categories.assign(next_id, PriorCategory::Unknown);
    if (map.ground_component >= 0)
        map.categories[map.ground_component] = PriorCategory::Ground;
    return map;
}

void assign_prior_categories(ComponentMap& map, const CategoryConfig& cfg) {
    for (std::size_t c = 0; c < map.num_components(); ++c) {
        if (static_cast<int>(c) == map.ground_component) {
            map.categories[c] = PriorCategory::Ground;
            continue;
        }
        const ComponentStats& s = map.stats[c];
        auto ext = s.extent();
        double long_side = std::max(ext[0], ext[1]);
        double short_side = std::min(ext[0], ext[1]);
        bool car = long_side <= cfg.car_length && short_side <= cfg.car_width &&
                   ext[2] <= cfg.car_height && s.high_count >= cfg.car_min_points;
        bool wall = ext[2] >= cfg.wall_min_height || s.eigenvalues[2] >= cfg.wall_min_spread;
        map.categories[c] =
            car ? PriorCategory::Car : (wall ? PriorCategory::Wall : PriorCategory::Unknown);
    }
}

void write_component_ids(const std::string& path, const std::vector<std::int32_t>& ids) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(ids.data()),
              static_cast<std::streamsize>(ids.size() * sizeof(std::int32_t)));
    if (!out) throw IoError("failed writing " + path);
}

std::vector<std::int32_t> read_component_ids(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path);
    auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % sizeof(std::int32_t) != 0)
        throw FormatError("component file " + path + " holds " + std::to_string(bytes) +
                          " bytes, not a multiple of 4");
    std::vector<std::int32_t> ids(bytes / sizeof(std::int32_t));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(ids.data()), static_cast<std::streamsize>(bytes));
    return ids;
}

std::string component_sidecar(const ComponentMap& map) {
    std::ostringstream os;
    os << "# id category count high_count centroid(xyz) extent(xyz) eigenvalues(asc)\n";
    for (std::size_t c = 0; c < map.num_components(); ++c) {
        const ComponentStats& s = map.stats[c];
        auto ext = s.extent();
        os << c << ' ' << to_string(map.categories[c]) << ' ' << s.count << ' ' << s.high_count;
        for (double v : s.centroid) os << ' ' << v;
        for (double v : ext) os << ' ' << v;
        for (double v : s.eigenvalues) os << ' ' << v;
        os << '\n';
    }
    return os.str();
}

}  // namespace udma
