#pragma once

#include <cstdint>
#include <string>

namespace udma {

// Every tunable in one place. Defaults hold when a key is absent from the
// config file; load_config validates ranges and rejects unknown keys.
// The full key table is printed by `udma config --keys`.
struct RunConfig {
    // projection (angles in degrees in the file, converted where used)
    int range_width = 2048;     // >= 1
    int range_height = 64;      // >= 1
    double fov_up_deg = 3.0;    // >= 0
    double fov_down_deg = 25.0; // >= 0, fov_up + fov_down > 0

    // ground RANSAC
    int ransac_iterations = 200;      // >= 1
    double ransac_threshold = 0.15;   // meters, > 0
    double ransac_max_tilt_deg = 8.0; // [0, 90]

    // clustering: connect p,q iff |p-q| <= base + coeff * min(r_p, r_q)
    double cluster_base_threshold = 0.5; // meters, > 0
    double cluster_range_coeff = 0.01;   // >= 0

    // prior category rules
    double wall_min_height = 2.5;         // meters, > 0
    double wall_min_spread = 25.0;        // m^2, > 0
    double car_box_length = 6.0;          // > 0
    double car_box_width = 3.0;           // > 0
    double car_box_height = 2.5;          // > 0
    int car_min_points = 30;              // >= 1
    double car_point_min_height = 0.3;    // meters above ground, >= 0

    // model
    int feature_dim = 16;   // d, >= 1
    int knn = 4;            // >= 1
    int enc_channels1 = 8;  // >= 1
    int enc_channels2 = 16; // >= 1
    int disc_hidden = 256;  // >= 1

    // losses / training
    double lambda_scene = 0.001;    // >= 0
    double lambda_instance = 0.001; // >= 0
    double lr_generator = 2.5e-4;   // > 0
    double lr_discriminator = 1e-4; // > 0
    double adam_beta1 = 0.9;        // [0, 1)
    double adam_beta2 = 0.999;      // [0, 1)
    double adam_eps = 1e-8;         // > 0
    int train_steps = 500;          // >= 0
    int fine_tune_steps = 200;      // >= 0
    bool ce_sum_mode = false;       // true = literal pixel sum, no mean

    // synthetic scenes
    int synth_cars = 3;             // >= 0
    int synth_walls = 2;            // >= 0
    int synth_blobs = 3;            // >= 0
    double synth_noise_sigma = 0.02;   // >= 0
    double synth_max_range = 80.0;     // > 0
    double source_scale_range = 0.6;   // channel shift: r' = a*r + b
    double source_offset_range = 0.25;
    double source_scale_intensity = -1.0;
    double source_offset_intensity = 1.0;

    std::uint64_t seed = 1;
    bool parallel = true;
    std::string dataset_root = "data";
};

RunConfig load_config(const std::string& path);
// Parses the same `key = value` syntax from a string (used by tests).
RunConfig parse_config(const std::string& text);
// One `key = value` line per key, current values.
std::string dump_config(const RunConfig& cfg);
// Human-readable key table: name, default, legal range.
std::string config_key_table();

}  // namespace udma
