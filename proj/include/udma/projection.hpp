#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "udma/config.hpp"
#include "udma/point_cloud.hpp"

namespace udma {

// Spherical beam geometry. Angles are radians here; RunConfig carries them
// in degrees.
struct ProjectionConfig {
    int width = 2048;    // U, azimuth bins
    int height = 64;     // V, elevation rings
    double fov_up = 0.0;   // radians above horizontal
    double fov_down = 0.0; // radians below horizontal

    double fov() const { return fov_up + fov_down; }
    static ProjectionConfig from(const RunConfig& cfg);
    void validate() const;

    // Angles at the center of a pixel; both decrease as the index grows.
    double azimuth_of(double u) const;
    double elevation_of(double v) const;
};

struct PixelCoord {
    int u = 0;
    int v = 0;
};

// Maps a point to its pixel, or nullopt when the elevation falls outside
// the vertical field of view. The azimuth column is always defined and is
// clamped to [0, U-1] at the wrap seam.
std::optional<PixelCoord> project_point(const Point& p, const ProjectionConfig& cfg);

// Dense projection of one sweep. Row 0 is the top ring (highest elevation).
struct RangeImage {
    int height = 0;  // V
    int width = 0;   // U
    std::vector<double> range;            // meters, 0 where empty
    std::vector<double> intensity;        // [0,1], 0 where empty
    std::vector<std::int64_t> point_index;  // winning point, -1 where empty
    std::vector<std::int32_t> component_id; // from the component map, -1 where empty
    std::vector<std::uint8_t> valid;

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    std::size_t at(int v, int u) const { return static_cast<std::size_t>(v) * width + u; }
};

// Projects every in-fov point; pixel collisions keep the nearest point
// (ties keep the earlier point index). `components` may be empty.
RangeImage build_range_image(const PointCloud& cloud,
                             const std::vector<std::int32_t>& components,
                             const ProjectionConfig& cfg);

// Network input planes (range, range, intensity), zeros where empty.
std::vector<double> network_input(const RangeImage& img);

// Per-point labels from a per-pixel map. Every point reads the pixel it
// projects to, collision winner or not. Out-of-fov points take the nearest
// valid pixel in their column, or ignore_id if the column is empty.
// Degenerate points (r = 0) receive ignore_id.
std::vector<ClassId> unproject_labels(const RangeImage& img,
                                      const std::vector<ClassId>& pixel_labels,
                                      const PointCloud& cloud, const ProjectionConfig& cfg,
                                      ClassId ignore_id);

// Raw file form: 16-byte header (magic, V, U, plane count) followed by
// five little-endian f64 planes: range, intensity, point index, component
// id, validity.
void write_range_image(const std::string& path, const RangeImage& img);
RangeImage read_range_image(const std::string& path);

}  // namespace udma
