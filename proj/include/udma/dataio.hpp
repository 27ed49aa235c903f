#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "udma/point_cloud.hpp"
#include "udma/taxonomy.hpp"

namespace udma {

// Scan files: little-endian IEEE-754 32-bit floats, record = (x,y,z,i).
// Values are promoted to 64-bit on read and truncated to 32-bit on write.
PointCloud read_scan(const std::string& path);
void write_scan(const std::string& path, const PointCloud& cloud);

// Label files: little-endian 32-bit unsigned integers, one per point; the
// lower 16 bits carry the semantic id, remapped through the taxonomy's
// raw->train table. Unmapped raw ids become ignore_id.
std::vector<ClassId> read_labels(const std::string& path, std::size_t n_points,
                                 const ClassTaxonomy& taxonomy);
// Writes raw ids (upper 16 bits zero).
void write_raw_labels(const std::string& path, const std::vector<std::uint32_t>& raw_ids);

// Source samples: 16-byte header (magic "USRC", u32 height, u32 width,
// u32 channels = 3), then channel planes as little-endian f32, then the
// label map as little-endian u32 train ids (ignore_id for unlabeled).
SourceSample read_source_sample(const std::string& path);
void write_source_sample(const std::string& path, const SourceSample& sample);

// Dependency-free raster output for visualizations.
void write_pgm(const std::string& path, int height, int width,
               const std::vector<std::uint8_t>& gray);
void write_ppm(const std::string& path, int height, int width,
               const std::vector<std::uint8_t>& rgb);

}  // namespace udma
