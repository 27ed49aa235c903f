#pragma once

#include <cstddef>
#include <vector>

#include "udma/taxonomy.hpp"

namespace udma {

struct Point {
    double x = 0.0;  // meters
    double y = 0.0;
    double z = 0.0;
    double i = 0.0;  // reflectance in [0,1]
};

// A LiDAR sweep. Labels, when present, are train ids (one per point,
// ignore_id allowed).
struct PointCloud {
    std::vector<Point> points;
    std::vector<ClassId> labels;  // empty or size() == points.size()

    std::size_t size() const { return points.size(); }
    bool has_labels() const { return !labels.empty(); }
};

// A dense labeled sample from the 2D source domain. Channels are stored as
// planes: data[c * height * width + y * width + x].
struct SourceSample {
    int height = 0;
    int width = 0;
    std::vector<double> image;     // 3 * height * width
    std::vector<ClassId> labels;   // height * width

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
};

}  // namespace udma
