#include "udma/dataio.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "udma/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; byte-swapped hosts are unsupported");

namespace udma {

namespace {

std::vector<char> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open for reading: " + path);
    std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<char> buf(static_cast<std::size_t>(size));
    if (size > 0 && !f.read(buf.data(), size)) throw IoError("read failed: " + path);
    return buf;
}

void write_all(const std::string& path, const void* data, std::size_t size) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    if (size > 0) f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!f) throw IoError("write failed: " + path);
}

constexpr std::uint32_t kSourceMagic = 0x43525355;  // "USRC"

}  // namespace

PointCloud read_scan(const std::string& path) {
    std::vector<char> buf = read_all(path);
    if (buf.size() % 16 != 0)
        throw FormatError("scan file " + path + " holds " + std::to_string(buf.size()) +
                          " bytes, not a multiple of the 16-byte point record");
    std::size_t n = buf.size() / 16;
    PointCloud cloud;
    cloud.points.resize(n);
    const float* f = reinterpret_cast<const float*>(buf.data());
    for (std::size_t k = 0; k < n; ++k) {
        cloud.points[k] = {static_cast<double>(f[4 * k + 0]), static_cast<double>(f[4 * k + 1]),
                           static_cast<double>(f[4 * k + 2]), static_cast<double>(f[4 * k + 3])};
    }
    return cloud;
}

void write_scan(const std::string& path, const PointCloud& cloud) {
    std::vector<float> buf(cloud.size() * 4);
    for (std::size_t k = 0; k < cloud.size(); ++k) {
        const Point& p = cloud.points[k];
        buf[4 * k + 0] = static_cast<float>(p.x);
        buf[4 * k + 1] = static_cast<float>(p.y);
        buf[4 * k + 2] = static_cast<float>(p.z);
        buf[4 * k + 3] = static_cast<float>(p.i);
    }
    write_all(path, buf.data(), buf.size() * sizeof(float));
}

std::vector<ClassId> read_labels(const std::string& path, std::size_t n_points,
                                 const ClassTaxonomy& taxonomy) {
    std::vector<char> buf = read_all(path);
    if (buf.size() != n_points * 4)
        throw FormatError("label file " + path + ": expected " + std::to_string(n_points) +
                          " records (" + std::to_string(n_points * 4) + " bytes), got " +
                          std::to_string(buf.size() / 4) + " (" + std::to_string(buf.size()) +
                          " bytes)");
    std::vector<ClassId> out(n_points);
    const std::uint32_t* raw = reinterpret_cast<const std::uint32_t*>(buf.data());
    for (std::size_t k = 0; k < n_points; ++k)
        out[k] = taxonomy.remap_raw(static_cast<std::uint16_t>(raw[k] & 0xffffu));
    return out;
}

void write_raw_labels(const std::string& path, const std::vector<std::uint32_t>& raw_ids) {
    write_all(path, raw_ids.data(), raw_ids.size() * sizeof(std::uint32_t));
}

SourceSample read_source_sample(const std::string& path) {
    std::vector<char> buf = read_all(path);
    if (buf.size() < 16) throw FormatError("source sample " + path + ": truncated header");
    std::uint32_t hdr[4];
    std::memcpy(hdr, buf.data(), 16);
    if (hdr[0] != kSourceMagic)
        throw FormatError("source sample " + path + ": bad magic");
    SourceSample s;
    s.height = static_cast<int>(hdr[1]);
    s.width = static_cast<int>(hdr[2]);
    std::uint32_t channels = hdr[3];
    if (channels != 3) throw FormatError("source sample " + path + ": expected 3 channels");
    std::size_t px = s.pixels();
    std::size_t expect = 16 + channels * px * 4 + px * 4;
    if (buf.size() != expect)
        throw FormatError("source sample " + path + ": expected " + std::to_string(expect) +
                          " bytes, got " + std::to_string(buf.size()));
    s.image.resize(channels * px);
    const float* f = reinterpret_cast<const float*>(buf.data() + 16);
    for (std::size_t k = 0; k < channels * px; ++k) s.image[k] = static_cast<double>(f[k]);
    s.labels.resize(px);
    const std::uint32_t* lab =
        reinterpret_cast<const std::uint32_t*>(buf.data() + 16 + channels * px * 4);
    for (std::size_t k = 0; k < px; ++k) s.labels[k] = static_cast<ClassId>(lab[k] & 0xffffu);
    return s;
}

void write_source_sample(const std::string& path, const SourceSample& sample) {
    std::size_t px = sample.pixels();
    if (sample.image.size() != 3 * px || sample.labels.size() != px)
        throw FormatError("source sample: image/label sizes disagree with header");
    std::vector<char> buf(16 + 3 * px * 4 + px * 4);
    std::uint32_t hdr[4] = {kSourceMagic, static_cast<std::uint32_t>(sample.height),
                            static_cast<std::uint32_t>(sample.width), 3};
    std::memcpy(buf.data(), hdr, 16);
    float* f = reinterpret_cast<float*>(buf.data() + 16);
    for (std::size_t k = 0; k < 3 * px; ++k) f[k] = static_cast<float>(sample.image[k]);
    std::uint32_t* lab = reinterpret_cast<std::uint32_t*>(buf.data() + 16 + 3 * px * 4);
    for (std::size_t k = 0; k < px; ++k) lab[k] = sample.labels[k];
    write_all(path, buf.data(), buf.size());
}

void write_pgm(const std::string& path, int height, int width,
               const std::vector<std::uint8_t>& gray) {
    if (gray.size() != static_cast<std::size_t>(height) * width)
        throw FormatError("pgm: pixel buffer size does not match dimensions");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (!f) throw IoError("write failed: " + path);
}

void write_ppm(const std::string& path, int height, int width,
               const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(height) * width * 3)
        throw FormatError("ppm: pixel buffer size does not match dimensions");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P6\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace udma
