#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "udma/errors.hpp"
#include "udma/parallel.hpp"
#include "udma/preseg.hpp"
#include "udma/projection.hpp"
#include "udma/synth.hpp"

using namespace udma;

namespace {

constexpr double kDeg = 0.017453292519943295;

ProjectionConfig desk_beam(int height = 16, int width = 64) {
    ProjectionConfig beam;
    beam.width = width;
    beam.height = height;
    beam.fov_up = 3.0 * kDeg;
    beam.fov_down = 25.0 * kDeg;
    return beam;
}

SceneSpec flat_scene() {
    SceneSpec spec;
    spec.beam = desk_beam();
    spec.noise_sigma = 0.0;
    return spec;
}

}  // namespace

TEST_CASE("ground-only scene yields one ground component with band labels") {
    SceneSpec spec = flat_scene();
    SynthScan scan = generate_scan(spec, 3);

    REQUIRE(scan.cloud.size() > 100);
    REQUIRE(scan.cloud.labels.size() == scan.cloud.size());
    REQUIRE(scan.object_id.size() == scan.cloud.size());
    CHECK(scan.true_components.num_components() == 1);
    CHECK(scan.true_components.ground_component == 0);
    CHECK(scan.true_components.categories[0] == PriorCategory::Ground);
    CHECK(scan.true_components.stats[0].count == static_cast<std::int64_t>(scan.cloud.size()));

    const ClassTaxonomy tax = ClassTaxonomy::evaluation_default();
    for (std::size_t k = 0; k < scan.cloud.size(); ++k) {
        const Point& p = scan.cloud.points[k];
        CHECK(scan.object_id[k] == 0);
        // Noise-free ground hits sit exactly on the plane.
        CHECK(p.z == doctest::Approx(-spec.sensor_height).epsilon(1e-9));
        double ay = std::abs(p.y);
        ClassId want = ay <= spec.road_half_width        ? tax.id_of("road")
                       : ay <= spec.sidewalk_half_width ? tax.id_of("sidewalk")
                                                        : tax.id_of("terrain");
        CHECK(scan.cloud.labels[k] == want);
        CHECK(p.i == doctest::Approx(class_intensity(want)));
    }
}

TEST_CASE("car box points stay inside the box and form one car component") {
    SceneSpec spec = flat_scene();
    spec.cars.push_back({10.0, 0.0, 4.0, 2.0, 1.6});
    SynthScan scan = generate_scan(spec, 5);

    const ClassTaxonomy tax = ClassTaxonomy::evaluation_default();
    ClassId car = tax.id_of("car");
    std::int64_t car_points = 0;
    for (std::size_t k = 0; k < scan.cloud.size(); ++k) {
        if (scan.cloud.labels[k] != car) {
            CHECK(scan.object_id[k] == 0);
            continue;
        }
        ++car_points;
        const Point& p = scan.cloud.points[k];
        CHECK(scan.object_id[k] == 1);
        CHECK(p.x >= 8.0 - 1e-9);
        CHECK(p.x <= 12.0 + 1e-9);
        CHECK(std::abs(p.y) <= 1.0 + 1e-9);
        CHECK(p.z >= -1.8 - 1e-9);
        CHECK(p.z <= -0.2 + 1e-9);
    }
    REQUIRE(car_points > 0);

    REQUIRE(scan.true_components.num_components() == 2);
    CHECK(scan.true_components.categories[1] == PriorCategory::Car);
    CHECK(scan.true_components.stats[1].count == car_points);
    // The lowest sampled car point sits within one ring spacing of the
    // ground line (rings are discrete, so it never reaches -1.8 exactly).
    CHECK(scan.true_components.stats[1].min_corner[2] >= -1.8 - 1e-9);
    CHECK(scan.true_components.stats[1].min_corner[2] <= -1.5);
}

TEST_CASE("nearer surfaces occlude: a blob behind a long wall disappears") {
    SceneSpec spec = flat_scene();
    spec.walls.push_back({0.0, 10.0, 40.0, 0.3, 6.0});
    spec.blobs.push_back({0.0, 16.0, 2.0, 2.5});
    SynthScan scan = generate_scan(spec, 11);

    const ClassTaxonomy tax = ClassTaxonomy::evaluation_default();
    bool any_wall = false;
    for (std::size_t k = 0; k < scan.cloud.size(); ++k) {
        CHECK(scan.cloud.labels[k] != tax.id_of("vegetation"));
        any_wall = any_wall || scan.cloud.labels[k] == tax.id_of("building");
    }
    CHECK(any_wall);
    // Only ground + wall captured points, so the blob has no component.
    CHECK(scan.true_components.num_components() == 2);

    // Moving the blob to the open side makes it visible.
    spec.blobs[0].cy = -16.0;
    SynthScan open = generate_scan(spec, 11);
    std::int64_t veg = 0;
    for (ClassId c : open.cloud.labels) veg += c == tax.id_of("vegetation");
    CHECK(veg > 0);
    CHECK(open.true_components.num_components() == 3);
}

TEST_CASE("same seed reproduces the scan bit for bit, different seed does not") {
    SceneSpec spec = flat_scene();
    spec.cars.push_back({12.0, 2.0, 4.2, 1.9, 1.5});
    spec.noise_sigma = 0.05;

    SynthScan a = generate_scan(spec, 17);
    SynthScan b = generate_scan(spec, 17);
    REQUIRE(a.cloud.size() == b.cloud.size());
    CHECK(std::memcmp(a.cloud.points.data(), b.cloud.points.data(),
                      a.cloud.size() * sizeof(Point)) == 0);
    CHECK(a.cloud.labels == b.cloud.labels);
    CHECK(a.object_id == b.object_id);

    SynthScan c = generate_scan(spec, 18);
    REQUIRE(c.cloud.size() > 0);
    bool identical = a.cloud.size() == c.cloud.size() &&
                     std::memcmp(a.cloud.points.data(), c.cloud.points.data(),
                                 a.cloud.size() * sizeof(Point)) == 0;
    CHECK_FALSE(identical);
}

TEST_CASE("serial and parallel rendering agree bit for bit") {
    SceneSpec spec = flat_scene();
    spec.cars.push_back({9.0, -1.0, 4.0, 1.8, 1.5});
    spec.blobs.push_back({6.0, -14.0, 2.0, 2.4});
    spec.noise_sigma = 0.04;

    ExecMode before = exec_mode();
    set_exec_mode(ExecMode::Serial);
    SynthScan serial = generate_scan(spec, 29);
    set_exec_mode(ExecMode::Parallel);
    SynthScan parallel = generate_scan(spec, 29);
    set_exec_mode(before);

    REQUIRE(serial.cloud.size() == parallel.cloud.size());
    CHECK(std::memcmp(serial.cloud.points.data(), parallel.cloud.points.data(),
                      serial.cloud.size() * sizeof(Point)) == 0);
    CHECK(serial.cloud.labels == parallel.cloud.labels);
}

TEST_CASE("scan and zero-shift source agree pixel for pixel") {
    SceneSpec spec = flat_scene();
    spec.cars.push_back({11.0, 1.5, 4.4, 1.9, 1.6});
    spec.walls.push_back({-5.0, 12.0, 18.0, 0.3, 4.0});
    spec.noise_sigma = 0.03;

    const ClassTaxonomy tax = ClassTaxonomy::evaluation_default();
    SynthScan scan = generate_scan(spec, 41);
    SourceSample src = generate_source(spec, 41, tax);
    RangeImage img = build_range_image(scan.cloud, scan.true_components.component_id, spec.beam);
    std::vector<double> input = network_input(img);

    REQUIRE(src.height == img.height);
    REQUIRE(src.width == img.width);
    REQUIRE(src.image.size() == input.size());

    // Rays leave at pixel-center angles, so every point projects back into
    // its own pixel and no two points collide.
    std::size_t valid = 0;
    for (std::uint8_t f : img.valid) valid += f;
    CHECK(valid == scan.cloud.size());

    double max_diff = 0.0;
    for (std::size_t k = 0; k < input.size(); ++k)
        max_diff = std::max(max_diff, std::abs(input[k] - src.image[k]));
    CHECK(max_diff < 1e-9);

    for (std::size_t k = 0; k < src.labels.size(); ++k) {
        ClassId want = img.valid[k] ? scan.cloud.labels[img.point_index[k]] : tax.ignore_id();
        CHECK(src.labels[k] == want);
    }
}

TEST_CASE("affine channel shift moves per-pixel values, means and variances") {
    SceneSpec spec = flat_scene();
    spec.cars.push_back({10.0, -2.0, 4.0, 1.9, 1.5});
    spec.noise_sigma = 0.02;

    const ClassTaxonomy tax = ClassTaxonomy::evaluation_default();
    SourceSample plain = generate_source(spec, 7, tax);
    spec.shift_scale = {2.0, 2.0, 2.0};
    spec.shift_offset = {0.5, 0.5, 0.5};
    SourceSample shifted = generate_source(spec, 7, tax);

    CHECK(plain.labels == shifted.labels);
    const std::size_t n = plain.pixels();
    for (int c = 0; c < 3; ++c) {
        double mean0 = 0, mean1 = 0, var0 = 0, var1 = 0;
        std::size_t hits = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if (plain.labels[k] == tax.ignore_id()) continue;
            double a = plain.image[c * n + k];
            double b = shifted.image[c * n + k];
            CHECK(b == doctest::Approx(2.0 * a + 0.5).epsilon(1e-12));
            mean0 += a;
            mean1 += b;
            ++hits;
        }
        REQUIRE(hits > 0);
        mean0 /= static_cast<double>(hits);
        mean1 /= static_cast<double>(hits);
        for (std::size_t k = 0; k < n; ++k) {
            if (plain.labels[k] == tax.ignore_id()) continue;
            var0 += (plain.image[c * n + k] - mean0) * (plain.image[c * n + k] - mean0);
            var1 += (shifted.image[c * n + k] - mean1) * (shifted.image[c * n + k] - mean1);
        }
        CHECK(mean1 == doctest::Approx(2.0 * mean0 + 0.5).epsilon(1e-9));
        CHECK(var1 == doctest::Approx(4.0 * var0).epsilon(1e-9));
    }
}

TEST_CASE("degenerate scene specs are rejected") {
    SceneSpec spec = flat_scene();
    spec.ground_half_extent = 0.0;
    CHECK_THROWS_AS(generate_scan(spec, 1), DomainError);

    spec = flat_scene();
    spec.noise_sigma = -0.1;
    CHECK_THROWS_AS(generate_scan(spec, 1), DomainError);

    spec = flat_scene();
    spec.sidewalk_half_width = spec.road_half_width - 1.0;
    CHECK_THROWS_AS(generate_scan(spec, 1), DomainError);

    CHECK_THROWS_AS(class_intensity(ClassId{6}), DomainError);
}

TEST_CASE("class intensities are pairwise distinct") {
    for (ClassId a = 0; a < 6; ++a)
        for (ClassId b = static_cast<ClassId>(a + 1); b < 6; ++b)
            CHECK(std::abs(class_intensity(a) - class_intensity(b)) > 0.05);
}

TEST_CASE("random scenes are reproducible and populated") {
    RunConfig cfg;
    cfg.range_width = 256;
    cfg.range_height = 32;

    SceneSpec a = random_scene(cfg, 23);
    SceneSpec b = random_scene(cfg, 23);
    REQUIRE(a.cars.size() == b.cars.size());
    for (std::size_t k = 0; k < a.cars.size(); ++k) {
        CHECK(a.cars[k].cx == b.cars[k].cx);
        CHECK(a.cars[k].cy == b.cars[k].cy);
    }
    CHECK(a.tilt_x == b.tilt_x);

    CHECK(a.cars.size() >= 1);
    CHECK(a.cars.size() <= static_cast<std::size_t>(cfg.synth_cars));
    CHECK(a.walls.size() >= 1);
    CHECK(a.blobs.size() >= 1);
    // Config defaults feed the affine shift: inverted intensity channel.
    CHECK(a.shift_scale[2] == doctest::Approx(-1.0));
    CHECK(a.shift_offset[2] == doctest::Approx(1.0));

    SynthScan scan = generate_scan(a, 23);
    CHECK(scan.cloud.size() > 500);
}

TEST_CASE("pre-segmentation recovers the constructed scene structure") {
    RunConfig cfg;
    cfg.range_width = 512;
    cfg.range_height = 64;
    SceneSpec spec = random_scene(cfg, 101);
    SynthScan scan = generate_scan(spec, 101);

    GroundModel ground = fit_ground(scan.cloud, RansacConfig::from(cfg), 101);
    double tilt = std::acos(std::clamp(ground.normal[2], -1.0, 1.0));
    CHECK(tilt < 3.0 * kDeg);

    // Recall: nearly every true ground point is a plane inlier.
    std::int64_t ground_total = 0, ground_inlier = 0;
    for (std::size_t k = 0; k < scan.cloud.size(); ++k) {
        if (scan.object_id[k] != 0) continue;
        ++ground_total;
        ground_inlier += ground.is_inlier(scan.cloud.points[k]);
    }
    REQUIRE(ground_total > 0);
    CHECK(static_cast<double>(ground_inlier) >= 0.95 * static_cast<double>(ground_total));

    ComponentMap map = cluster_components(scan.cloud, ground, ClusterConfig::from(cfg),
                                          CategoryConfig::from(cfg));
    assign_prior_categories(map, CategoryConfig::from(cfg));

    // Purity: points of one predicted component come from one scene object
    // (ignoring stray ground points that missed the inlier band).
    for (std::size_t c = 0; c < map.num_components(); ++c) {
        if (static_cast<int>(c) == map.ground_component) continue;
        std::map<std::int32_t, std::int64_t> votes;
        std::int64_t total = 0;
        for (std::size_t k = 0; k < scan.cloud.size(); ++k) {
            if (map.component_id[k] != static_cast<std::int32_t>(c)) continue;
            if (scan.object_id[k] == 0) continue;
            ++votes[scan.object_id[k]];
            ++total;
        }
        if (total < 5) continue;
        std::int64_t top = 0;
        for (const auto& [obj, n] : votes) top = std::max(top, n);
        CHECK(top == total);
    }

    bool any_car = false, any_wall = false;
    for (PriorCategory cat : map.categories) {
        any_car = any_car || cat == PriorCategory::Car;
        any_wall = any_wall || cat == PriorCategory::Wall;
    }
    CHECK(any_car);
    CHECK(any_wall);
}
