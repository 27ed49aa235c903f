#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "udma/graph.hpp"
#include "udma/model.hpp"
#include "udma/taxonomy.hpp"

namespace udma {

// Counts of numerical clamps that fired while building a loss. A nonzero
// count means some probability hit the 1e-12 floor before its log.
struct LossDiagnostics {
    std::int64_t prob_clamps = 0;
};

// Per prior category: the pixels carrying that tag, and whether the
// category is present at all (y^e). Sets for different categories are
// disjoint because they come from disjoint node masks.
struct PriorPixelSets {
    std::array<std::vector<std::uint8_t>, kNumPriorCategories> pixels;
    std::array<bool, kNumPriorCategories> present{};

    static PriorPixelSets from_nodes(const NodeSet& nodes, std::size_t pixel_count);
    void validate() const;
};

// Allowed class ids per prior category. Ground and wall get weak labels;
// car pixels are supervised with CE directly, so its set is the car class.
struct WeakLabelSpec {
    std::array<std::set<ClassId>, kNumPriorCategories> allowed;

    static WeakLabelSpec from(const ClassTaxonomy& taxonomy);
};

// Mean (or summed, with sum_mode) cross-entropy over pixels whose label is
// not ignore_id. Probabilities are floored at 1e-12 before the log.
Tensor ce_loss(Graph& g, Tensor probs, const std::vector<ClassId>& labels, ClassId ignore_id,
               bool sum_mode = false, LossDiagnostics* diag = nullptr);

// Scene-level adversarial pair: generator term -log D(target), and
// discriminator term -log D(source) - log(1 - D(target)). Their sum is the
// full printed objective.
std::pair<Tensor, Tensor> scene_adv_losses(Graph& g, Tensor d_target, Tensor d_source);

// Discriminator outputs for one prior category; absent sides carry no
// tensor and contribute nothing to either loss.
struct CategoryDiscOutputs {
    std::optional<Tensor> source;
    std::optional<Tensor> target;
};

std::pair<Tensor, Tensor> instance_adv_losses(
    Graph& g, const std::array<CategoryDiscOutputs, kNumPriorCategories>& outputs);

// -(1/n_e) sum over masked pixels of log(1 - forbidden probability mass),
// with the surviving mass floored at 1e-12 before the log.
Tensor weak_label_loss(Graph& g, Tensor probs, const std::vector<std::uint8_t>& pixel_mask,
                       const std::set<ClassId>& allowed, LossDiagnostics* diag = nullptr);

}  // namespace udma
