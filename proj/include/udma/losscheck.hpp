#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "udma/model.hpp"

namespace udma {

// Finite-difference audit of every training loss composed through the full
// network. Each audited loss is rebuilt from a flat coordinate vector that
// concatenates the input planes with the parameters the loss can reach, so
// the check covers the whole differentiable path, not just the loss kernel.
struct LossCheckConfig {
    ModelConfig model;
    int height = 8;
    int width = 8;
    int seeds = 20;
    double step = 1e-5;          // central-difference step
    double tolerance = 1e-4;     // max relative error allowed
    std::int64_t max_coords = 24;  // sampled coordinates per loss per seed
    std::uint64_t master_seed = 20260815;
};

struct LossCheckCase {
    std::string loss;
    double max_rel_error = 0.0;     // worst over all seeds
    std::int64_t coords_checked = 0;  // summed over seeds
    bool pass = false;
};

// Runs the audit for cross_entropy, scene_adversarial, instance_adversarial
// and weak_label. Deterministic for a fixed config.
std::vector<LossCheckCase> check_loss_gradients(const LossCheckConfig& cfg);

}  // namespace udma
