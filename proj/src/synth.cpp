#include "udma/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>

#include "udma/errors.hpp"
#include "udma/parallel.hpp"
#include "udma/rng.hpp"

namespace udma {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Train ids are fixed by the evaluation taxonomy; keep them in one place so
// the intensity table below cannot drift out of sync.
enum : ClassId { kRoad = 0, kSidewalk = 1, kBuilding = 2, kVegetation = 3, kTerrain = 4, kCar = 5 };

struct RayHit {
    double t = kInf;
    ClassId cls = 0;
    std::int32_t object = -1;

    bool valid() const { return std::isfinite(t); }
};

// Distance at which a ray from the origin enters an axis-aligned box, or
// +inf when it misses or starts inside.
double box_enter(const std::array<double, 3>& lo, const std::array<double, 3>& hi,
                 const std::array<double, 3>& d) {
    double t0 = 0.0, t1 = kInf;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) {
            if (lo[a] > 0.0 || hi[a] < 0.0) return kInf;
            continue;
        }
        double ta = lo[a] / d[a];
        double tb = hi[a] / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return kInf;
    }
    return t0 > 0.0 ? t0 : kInf;
}

double sphere_enter(const std::array<double, 3>& c, double radius,
                    const std::array<double, 3>& d) {
    double b = d[0] * c[0] + d[1] * c[1] + d[2] * c[2];
    double disc = b * b - (c[0] * c[0] + c[1] * c[1] + c[2] * c[2] - radius * radius);
    if (disc < 0.0) return kInf;
    double s = std::sqrt(disc);
    double t = b - s;
    if (t <= 0.0) t = b + s;
    return t > 0.0 ? t : kInf;
}

RayHit cast_ray(const SceneSpec& spec, const std::array<double, 3>& d) {
    RayHit best;

    // Ground plane z = ground_z(x, y), clipped to the scene extent.
    double denom = d[2] - spec.tilt_x * d[0] - spec.tilt_y * d[1];
    if (std::abs(denom) > 1e-12) {
        double t = -spec.sensor_height / denom;
        if (t > 0.0) {
            double x = t * d[0], y = t * d[1];
            if (std::abs(x) <= spec.ground_half_extent &&
                std::abs(y) <= spec.ground_half_extent && t < best.t) {
                best.t = t;
                best.object = 0;
                double ay = std::abs(y);
                best.cls = ay <= spec.road_half_width      ? kRoad
                           : ay <= spec.sidewalk_half_width ? kSidewalk
                                                            : kTerrain;
            }
        }
    }

    std::int32_t object = 1;
    for (const CarBox& car : spec.cars) {
        double base = spec.ground_z(car.cx, car.cy);
        double t = box_enter({car.cx - car.length / 2, car.cy - car.width / 2, base},
                             {car.cx + car.length / 2, car.cy + car.width / 2, base + car.height},
                             d);
        if (t < best.t) best = {t, kCar, object};
        ++object;
    }
    for (const WallSlab& wall : spec.walls) {
        double base = spec.ground_z(wall.cx, wall.cy);
        double t = box_enter(
            {wall.cx - wall.length / 2, wall.cy - wall.thickness / 2, base},
            {wall.cx + wall.length / 2, wall.cy + wall.thickness / 2, base + wall.height}, d);
        if (t < best.t) best = {t, kBuilding, object};
        ++object;
    }
    for (const VegBlob& blob : spec.blobs) {
        double cz = spec.ground_z(blob.cx, blob.cy) + blob.center_height;
        double t = sphere_enter({blob.cx, blob.cy, cz}, blob.radius, d);
        if (t < best.t) best = {t, kVegetation, object};
        ++object;
    }

    if (best.t > spec.max_range) return RayHit{};
    return best;
}

struct RaySample {
    bool hit = false;
    double range = 0.0;
    double intensity = 0.0;
    ClassId cls = 0;
    std::int32_t object = -1;
    std::array<double, 3> dir{};
};

// One sample per beam pixel. Noise comes from a stream keyed by the ray
// index, so the result is independent of evaluation order.
std::vector<RaySample> render(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int height = spec.beam.height, width = spec.beam.width;
    std::vector<RaySample> rays(static_cast<std::size_t>(height) * width);
    parallel_for(rays.size(), [&](std::size_t k) {
        int v = static_cast<int>(k) / width;
        int u = static_cast<int>(k) % width;
        double elev = spec.beam.elevation_of(v);
        double az = spec.beam.azimuth_of(u);
        std::array<double, 3> d{std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                                std::sin(elev)};
        RayHit hit = cast_ray(spec, d);
        if (!hit.valid()) return;
        RaySample& s = rays[k];
        s.hit = true;
        s.cls = hit.cls;
        s.object = hit.object;
        s.dir = d;
        s.range = hit.t;
        s.intensity = class_intensity(hit.cls);
        if (spec.noise_sigma > 0.0) {
            auto rng = make_rng(seed, k);
            std::normal_distribution<double> noise(0.0, spec.noise_sigma);
            s.range = std::max(hit.t + noise(rng), 0.1);
            s.intensity = std::clamp(s.intensity + noise(rng), 0.0, 1.0);
        }
    });
    return rays;
}

}  // namespace

void SceneSpec::validate() const {
    beam.validate();
    if (ground_half_extent <= 0.0)
        throw DomainError("scene has no ground surface (ground_half_extent must be > 0)");
    if (sensor_height <= 0.0) throw DomainError("sensor_height must be > 0");
    if (max_range <= 0.0) throw DomainError("max_range must be > 0");
    if (noise_sigma < 0.0) throw DomainError("noise_sigma must be >= 0");
    if (road_half_width < 0.0 || sidewalk_half_width < road_half_width)
        throw DomainError("ground bands must satisfy 0 <= road <= sidewalk half width");
}

double class_intensity(ClassId id) {
    switch (id) {
        case kRoad: return 0.20;
        case kSidewalk: return 0.35;
        case kBuilding: return 0.65;
        case kVegetation: return 0.80;
        case kTerrain: return 0.50;
        case kCar: return 0.95;
        default: throw DomainError("no intensity model for class id " + std::to_string(id));
    }
}

SynthScan generate_scan(const SceneSpec& spec, std::uint64_t seed) {
    std::vector<RaySample> rays = render(spec, seed);

    SynthScan out;
    std::vector<std::int32_t> objects;
    for (const RaySample& s : rays) {
        if (!s.hit) continue;
        out.cloud.points.push_back(
            {s.dir[0] * s.range, s.dir[1] * s.range, s.dir[2] * s.range, s.intensity});
        out.cloud.labels.push_back(s.cls);
        objects.push_back(s.object);
    }

    // Dense component ids ordered by scene object id (ground object 0 first
    // whenever it captured any point).
    std::map<std::int32_t, std::int32_t> dense;
    for (std::int32_t obj : objects) dense.try_emplace(obj, 0);
    std::int32_t next = 0;
    for (auto& [obj, id] : dense) id = next++;

    ComponentMap& comp = out.true_components;
    comp.component_id.resize(objects.size());
    comp.categories.assign(dense.size(), PriorCategory::Unknown);
    comp.stats.assign(dense.size(), ComponentStats{});
    const std::int32_t num_cars = static_cast<std::int32_t>(spec.cars.size());
    const std::int32_t num_walls = static_cast<std::int32_t>(spec.walls.size());
    for (const auto& [obj, id] : dense) {
        if (obj == 0) {
            comp.categories[id] = PriorCategory::Ground;
            comp.ground_component = id;
        } else if (obj <= num_cars) {
            comp.categories[id] = PriorCategory::Car;
        } else if (obj <= num_cars + num_walls) {
            comp.categories[id] = PriorCategory::Wall;
        } else {
            comp.categories[id] = PriorCategory::Wall;  // vegetation shares the wall prior
        }
    }
    for (std::size_t k = 0; k < objects.size(); ++k) {
        std::int32_t id = dense.at(objects[k]);
        comp.component_id[k] = id;
        ComponentStats& st = comp.stats[id];
        const Point& p = out.cloud.points[k];
        if (st.count == 0) {
            st.min_corner = st.max_corner = {p.x, p.y, p.z};
        } else {
            st.min_corner = {std::min(st.min_corner[0], p.x), std::min(st.min_corner[1], p.y),
                             std::min(st.min_corner[2], p.z)};
            st.max_corner = {std::max(st.max_corner[0], p.x), std::max(st.max_corner[1], p.y),
                             std::max(st.max_corner[2], p.z)};
        }
        st.centroid[0] += p.x;
        st.centroid[1] += p.y;
        st.centroid[2] += p.z;
        ++st.count;
    }
    for (ComponentStats& st : comp.stats)
        for (double& c : st.centroid) c /= static_cast<double>(st.count);

    out.object_id = std::move(objects);
    return out;
}

SourceSample generate_source(const SceneSpec& spec, std::uint64_t seed,
                             const ClassTaxonomy& taxonomy) {
    std::vector<RaySample> rays = render(spec, seed);

    SourceSample out;
    out.height = spec.beam.height;
    out.width = spec.beam.width;
    const std::size_t n = rays.size();
    out.image.assign(3 * n, 0.0);
    out.labels.assign(n, taxonomy.ignore_id());
    for (std::size_t k = 0; k < n; ++k) {
        const RaySample& s = rays[k];
        if (!s.hit) continue;
        double channels[3] = {s.range, s.range, s.intensity};
        for (int c = 0; c < 3; ++c)
            out.image[c * n + k] = spec.shift_scale[c] * channels[c] + spec.shift_offset[c];
        out.labels[k] = s.cls;
    }
    return out;
}

SceneSpec random_scene(const RunConfig& cfg, std::uint64_t seed) {
    auto rng = make_rng(seed, 0x5ce7eULL);
    auto uniform = [&rng](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    auto pick_sign = [&rng] { return (rng() & 1) ? 1.0 : -1.0; };

    SceneSpec spec;
    spec.beam = ProjectionConfig::from(cfg);
    spec.noise_sigma = cfg.synth_noise_sigma;
    spec.max_range = cfg.synth_max_range;
    spec.tilt_x = uniform(-0.02, 0.02);
    spec.tilt_y = uniform(-0.02, 0.02);
    spec.road_half_width = uniform(4.0, 6.0);
    spec.sidewalk_half_width = spec.road_half_width + uniform(2.0, 4.0);
    spec.shift_scale = {cfg.source_scale_range, cfg.source_scale_range,
                        cfg.source_scale_intensity};
    spec.shift_offset = {cfg.source_offset_range, cfg.source_offset_range,
                         cfg.source_offset_intensity};

    // Keep object centers apart so single-linkage clustering cannot bridge
    // distinct objects: gaps stay well above the connection threshold.
    std::vector<std::array<double, 2>> placed;
    auto far_enough = [](const std::vector<std::array<double, 2>>& centers, double cx, double cy,
                         double gap) {
        for (const auto& q : centers) {
            double dx = cx - q[0], dy = cy - q[1];
            if (dx * dx + dy * dy < gap * gap) return false;
        }
        return true;
    };
    auto place = [&](std::vector<std::array<double, 2>>& same_type, double type_gap, double cx_lo,
                     double cx_hi, double cy_lo,
                     double cy_hi) -> std::optional<std::array<double, 2>> {
        for (int attempt = 0; attempt < 40; ++attempt) {
            double cx = pick_sign() * uniform(cx_lo, cx_hi);
            double cy = pick_sign() * uniform(cy_lo, cy_hi);
            if (!far_enough(placed, cx, cy, 6.0) || !far_enough(same_type, cx, cy, type_gap))
                continue;
            placed.push_back({cx, cy});
            same_type.push_back({cx, cy});
            return std::array<double, 2>{cx, cy};
        }
        return std::nullopt;
    };

    std::vector<std::array<double, 2>> car_centers, wall_centers, blob_centers;
    for (int k = 0; k < cfg.synth_cars; ++k) {
        auto at = place(car_centers, 9.0, 6.0, 26.0, 0.5, spec.road_half_width - 1.2);
        if (!at) continue;
        CarBox car;
        car.cx = (*at)[0];
        car.cy = (*at)[1];
        car.length = uniform(3.8, 4.6);
        car.width = uniform(1.7, 2.0);
        car.height = uniform(1.4, 1.7);
        spec.cars.push_back(car);
    }
    for (int k = 0; k < cfg.synth_walls; ++k) {
        auto at = place(wall_centers, 26.0, 2.0, 24.0, spec.sidewalk_half_width + 2.0,
                        spec.sidewalk_half_width + 6.0);
        if (!at) continue;
        WallSlab wall;
        wall.cx = (*at)[0];
        wall.cy = (*at)[1];
        wall.length = uniform(12.0, 22.0);
        wall.height = uniform(3.0, 6.0);
        spec.walls.push_back(wall);
    }
    for (int k = 0; k < cfg.synth_blobs; ++k) {
        auto at = place(blob_centers, 7.0, 4.0, 30.0, spec.sidewalk_half_width + 10.0,
                        spec.sidewalk_half_width + 10.0 + 12.0);
        if (!at) continue;
        VegBlob blob;
        blob.cx = (*at)[0];
        blob.cy = (*at)[1];
        blob.radius = uniform(1.4, 2.4);
        blob.center_height = blob.radius + uniform(0.2, 1.0);
        spec.blobs.push_back(blob);
    }
    return spec;
}

}  // namespace udma
