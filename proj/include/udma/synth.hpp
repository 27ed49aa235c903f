#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "udma/config.hpp"
#include "udma/point_cloud.hpp"
#include "udma/preseg.hpp"
#include "udma/projection.hpp"

namespace udma {

// Axis-aligned scene objects, all sitting on the local ground surface.
struct CarBox {
    double cx = 0, cy = 0;
    double length = 4.2, width = 1.9, height = 1.6;  // x, y, z extents
};

struct WallSlab {
    double cx = 0, cy = 0;
    double length = 20.0, thickness = 0.3, height = 4.0;
};

struct VegBlob {
    double cx = 0, cy = 0;
    double radius = 2.0;
    double center_height = 2.5;  // sphere center above local ground
};

// One synthetic street scene. The sensor sits at the origin; the ground is
// the plane z = -sensor_height + tilt_x*x + tilt_y*y. Lateral bands map
// ground hits to road / sidewalk / terrain.
struct SceneSpec {
    ProjectionConfig beam;
    double ground_half_extent = 40.0;
    double tilt_x = 0.0, tilt_y = 0.0;
    double sensor_height = 1.8;
    double road_half_width = 6.0;
    double sidewalk_half_width = 10.0;
    std::vector<CarBox> cars;
    std::vector<WallSlab> walls;
    std::vector<VegBlob> blobs;
    double noise_sigma = 0.02;  // radial, meters
    double max_range = 80.0;
    // Source rendering: channel c' = shift_scale[c]*c + shift_offset[c]
    std::array<double, 3> shift_scale{1.0, 1.0, 1.0};
    std::array<double, 3> shift_offset{0.0, 0.0, 0.0};

    double ground_z(double x, double y) const {
        return -sensor_height + tilt_x * x + tilt_y * y;
    }
    void validate() const;
};

// Nominal reflectance per train class; the per-point value adds seeded noise.
double class_intensity(ClassId id);

struct SynthScan {
    PointCloud cloud;                       // labels filled with train ids
    std::vector<std::int32_t> object_id;    // scene object per point (0 = ground)
    ComponentMap true_components;           // ground-truth partition + categories
};

// Casts one ray per beam pixel (pixel-center angles); nearest surface wins.
// Noise is drawn from a per-ray stream, so results do not depend on
// evaluation order. Deterministic per (spec, seed).
SynthScan generate_scan(const SceneSpec& spec, std::uint64_t seed);

// Same scene geometry rendered densely as (range, range, intensity) planes
// with the spec's affine channel shift applied, plus per-pixel labels
// (ignore where no surface is hit).
SourceSample generate_source(const SceneSpec& spec, std::uint64_t seed,
                             const ClassTaxonomy& taxonomy);

// Randomized street layout drawn from the config's synth_* settings.
SceneSpec random_scene(const RunConfig& cfg, std::uint64_t seed);

}  // namespace udma
