#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "udma/config.hpp"
#include "udma/errors.hpp"

using namespace udma;

TEST_CASE("defaults survive an empty config") {
    RunConfig cfg = parse_config("");
    CHECK(cfg.range_width == 2048);
    CHECK(cfg.range_height == 64);
    CHECK(cfg.fov_up_deg == 3.0);
    CHECK(cfg.fov_down_deg == 25.0);
    CHECK(cfg.knn == 4);
    CHECK(cfg.lr_generator == 2.5e-4);
    CHECK(cfg.adam_beta2 == 0.999);
    CHECK(cfg.seed == 1);
    CHECK(cfg.parallel);
    CHECK_FALSE(cfg.ce_sum_mode);
}

TEST_CASE("values, comments and blank lines parse") {
    RunConfig cfg = parse_config(
        "# resolution\n"
        "range_width = 512\n"
        "\n"
        "fov_up_deg = 2.5   # degrees\n"
        "parallel = false\n"
        "seed = 42\n"
        "dataset_root = /tmp/scans\n");
    CHECK(cfg.range_width == 512);
    CHECK(cfg.fov_up_deg == 2.5);
    CHECK_FALSE(cfg.parallel);
    CHECK(cfg.seed == 42);
    CHECK(cfg.dataset_root == "/tmp/scans");
}

TEST_CASE("unknown keys are named in the error") {
    CHECK_THROWS_WITH_AS(parse_config("range_widht = 3\n"),
                         doctest::Contains("range_widht"), ConfigError);
}

TEST_CASE("duplicate keys are rejected") {
    CHECK_THROWS_WITH_AS(parse_config("knn = 3\nknn = 4\n"), doctest::Contains("knn"),
                         ConfigError);
}

TEST_CASE("out-of-range values report the legal range") {
    CHECK_THROWS_WITH_AS(parse_config("range_width = 0\n"), doctest::Contains(">= 1"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("adam_beta1 = 1.0\n"), doctest::Contains("[0, 1)"),
                         ConfigError);
    CHECK_THROWS_AS(parse_config("ransac_threshold = -0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("knn = -2\n"), ConfigError);
}

TEST_CASE("malformed lines and values are rejected") {
    CHECK_THROWS_AS(parse_config("knn\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("knn = four\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("knn = 4.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("parallel = maybe\n"), ConfigError);
}

TEST_CASE("field-of-view must have positive extent") {
    CHECK_THROWS_WITH_AS(parse_config("fov_up_deg = 0\nfov_down_deg = 0\n"),
                         doctest::Contains("fov"), ConfigError);
}

TEST_CASE("dump_config round-trips every key") {
    RunConfig cfg;
    cfg.range_width = 128;
    cfg.fov_down_deg = 20.0;
    cfg.lambda_scene = 0.01;
    cfg.ce_sum_mode = true;
    cfg.seed = 777;
    cfg.dataset_root = "elsewhere";
    RunConfig back = parse_config(dump_config(cfg));
    CHECK(back.range_width == 128);
    CHECK(back.fov_down_deg == 20.0);
    CHECK(back.lambda_scene == 0.01);
    CHECK(back.ce_sum_mode);
    CHECK(back.seed == 777);
    CHECK(back.dataset_root == "elsewhere");
    CHECK(dump_config(back) == dump_config(cfg));
}

TEST_CASE("load_config reads files and reports missing ones") {
    const char* path = "test_config_tmp.cfg";
    {
        std::ofstream out(path);
        out << "range_height = 32\n";
    }
    RunConfig cfg = load_config(path);
    CHECK(cfg.range_height == 32);
    std::remove(path);
    CHECK_THROWS_AS(load_config("does_not_exist.cfg"), IoError);
}

TEST_CASE("key table lists every key with its range") {
    std::string table = config_key_table();
    CHECK(table.find("range_width") != std::string::npos);
    CHECK(table.find("adam_beta1") != std::string::npos);
    CHECK(table.find("dataset_root") != std::string::npos);
}
