#include "udma/projection.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "udma/errors.hpp"
#include "udma/parallel.hpp"

namespace udma {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::uint32_t kRangeImageMagic = 0x4d495255;  // "URIM"
constexpr std::uint32_t kPlaneCount = 5;

double range_of(const Point& p) { return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z); }

}  // namespace

ProjectionConfig ProjectionConfig::from(const RunConfig& cfg) {
    ProjectionConfig pc;
    pc.width = cfg.range_width;
    pc.height = cfg.range_height;
    pc.fov_up = cfg.fov_up_deg * kPi / 180.0;
    pc.fov_down = cfg.fov_down_deg * kPi / 180.0;
    pc.validate();
    return pc;
}

void ProjectionConfig::validate() const {
    if (width < 1 || height < 1)
        throw DomainError("projection grid must be at least 1x1");
    if (fov_down < 0.0 || fov() <= 0.0)
        throw DomainError("vertical field of view must have positive extent");
}

double ProjectionConfig::azimuth_of(double u) const {
    return (1.0 - 2.0 * (u + 0.5) / width) * kPi;
}

double ProjectionConfig::elevation_of(double v) const {
    return (1.0 - (v + 0.5) / height) * fov() - fov_down;
}

std::optional<PixelCoord> project_point(const Point& p, const ProjectionConfig& cfg) {
    double r = range_of(p);
    if (r == 0.0) throw DomainError("cannot project a point at the sensor origin");
    double elev = std::asin(p.z / r);
    double vv = (1.0 - (elev + cfg.fov_down) / cfg.fov()) * cfg.height;
    if (vv < 0.0 || vv >= static_cast<double>(cfg.height)) return std::nullopt;
    double uu = 0.5 * (1.0 - std::atan2(p.y, p.x) / kPi) * cfg.width;
    PixelCoord px;
    px.u = std::clamp(static_cast<int>(std::floor(uu)), 0, cfg.width - 1);
    px.v = static_cast<int>(std::floor(vv));
    return px;
}

RangeImage build_range_image(const PointCloud& cloud,
                             const std::vector<std::int32_t>& components,
                             const ProjectionConfig& cfg) {
    if (!components.empty() && components.size() != cloud.size())
        throw ShapeError("component map length " + std::to_string(components.size()) +
                         " does not match cloud size " + std::to_string(cloud.size()));
    RangeImage img;
    img.height = cfg.height;
    img.width = cfg.width;
    img.range.assign(img.pixels(), 0.0);
    img.intensity.assign(img.pixels(), 0.0);
    img.point_index.assign(img.pixels(), -1);
    img.component_id.assign(img.pixels(), -1);
    img.valid.assign(img.pixels(), 0);

    // Sequential scan so collisions resolve deterministically: strictly
    // nearer replaces, equal range keeps the earlier point.
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Point& p = cloud.points[i];
        double r = range_of(p);
        if (r == 0.0) continue;  // degenerate, can never be in fov
        auto px = project_point(p, cfg);
        if (!px) continue;
        std::size_t at = img.at(px->v, px->u);
        if (img.valid[at] && img.range[at] <= r) continue;
        img.range[at] = r;
        img.intensity[at] = p.i;
        img.point_index[at] = static_cast<std::int64_t>(i);
        img.component_id[at] = components.empty() ? -1 : components[i];
        img.valid[at] = 1;
    }
    return img;
}

std::vector<double> network_input(const RangeImage& img) {
    std::size_t n = img.pixels();
    std::vector<double> planes(3 * n);
    std::copy(img.range.begin(), img.range.end(), planes.begin());
    std::copy(img.range.begin(), img.range.end(), planes.begin() + n);
    std::copy(img.intensity.begin(), img.intensity.end(), planes.begin() + 2 * n);
    return planes;
}

std::vector<ClassId> unproject_labels(const RangeImage& img,
                                      const std::vector<ClassId>& pixel_labels,
                                      const PointCloud& cloud, const ProjectionConfig& cfg,
                                      ClassId ignore_id) {
    if (static_cast<int>(img.height) != cfg.height || static_cast<int>(img.width) != cfg.width)
        throw ShapeError("range image does not match the projection config");
    if (pixel_labels.size() != img.pixels())
        throw ShapeError("pixel label map size " + std::to_string(pixel_labels.size()) +
                         " does not match image with " + std::to_string(img.pixels()) +
                         " pixels");
    std::vector<ClassId> out(cloud.size(), ignore_id);
    parallel_for(static_cast<std::int64_t>(cloud.size()), [&](std::int64_t i) {
        const Point& p = cloud.points[i];
        double r = range_of(p);
        if (r == 0.0) return;  // no direction, keep ignore_id
        double uu = 0.5 * (1.0 - std::atan2(p.y, p.x) / kPi) * cfg.width;
        int u = std::clamp(static_cast<int>(std::floor(uu)), 0, cfg.width - 1);
        double elev = std::asin(p.z / r);
        double vv = (1.0 - (elev + cfg.fov_down) / cfg.fov()) * cfg.height;
        if (vv >= 0.0 && vv < static_cast<double>(cfg.height)) {
            out[i] = pixel_labels[img.at(static_cast<int>(std::floor(vv)), u)];
            return;
        }
        // Out of fov: walk the column from the near edge toward the far one.
        int row = vv < 0.0 ? 0 : cfg.height - 1;
        int step = vv < 0.0 ? 1 : -1;
        for (; row >= 0 && row < cfg.height; row += step) {
            if (img.valid[img.at(row, u)]) {
                out[i] = pixel_labels[img.at(row, u)];
                return;
            }
        }
    });
    return out;
}

void write_range_image(const std::string& path, const RangeImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    std::uint32_t header[4] = {kRangeImageMagic, static_cast<std::uint32_t>(img.height),
                               static_cast<std::uint32_t>(img.width), kPlaneCount};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    auto plane = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    plane(img.range);
    plane(img.intensity);
    std::vector<double> tmp(img.pixels());
    for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = static_cast<double>(img.point_index[i]);
    plane(tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i)
        tmp[i] = static_cast<double>(img.component_id[i]);
    plane(tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = img.valid[i] ? 1.0 : 0.0;
    plane(tmp);
    if (!out) throw IoError("failed writing " + path);
}

RangeImage read_range_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::uint32_t header[4];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (in.gcount() != sizeof(header)) throw FormatError("range image " + path + ": truncated header");
    if (header[0] != kRangeImageMagic) throw FormatError("range image " + path + ": bad magic");
    if (header[3] != kPlaneCount)
        throw FormatError("range image " + path + ": expected " + std::to_string(kPlaneCount) +
                          " planes, found " + std::to_string(header[3]));
    RangeImage img;
    img.height = static_cast<int>(header[1]);
    img.width = static_cast<int>(header[2]);
    std::size_t n = img.pixels();
    auto plane = [&](std::vector<double>& v) {
        v.resize(n);
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double))
            throw FormatError("range image " + path + ": truncated plane data");
    };
    plane(img.range);
    plane(img.intensity);
    std::vector<double> tmp;
    plane(tmp);
    img.point_index.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        img.point_index[i] = static_cast<std::int64_t>(std::llround(tmp[i]));
    plane(tmp);
    img.component_id.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        img.component_id[i] = static_cast<std::int32_t>(std::lround(tmp[i]));
    plane(tmp);
    img.valid.resize(n);
    for (std::size_t i = 0; i < n; ++i) img.valid[i] = tmp[i] != 0.0 ? 1 : 0;
    return img;
}

}  // namespace udma
