#include "udma/losses.hpp"

#include <cmath>
#include <string>

#include "udma/errors.hpp"

namespace udma {

namespace {

constexpr double kProbFloor = 1e-12;

// [C,H,W] probabilities viewed as one row per pixel.
Tensor prob_rows(Tensor probs) {
    const Shape& s = probs.shape();
    if (s.size() != 3) throw ShapeError("probabilities must be [C,H,W], got " + shape_str(s));
    return transpose2d(reshape(probs, {s[0], s[1] * s[2]}));
}

void check_unit_interval(Tensor d, const char* which) {
    if (numel(d.shape()) != 1)
        throw ShapeError(std::string(which) + " output must be a single value, got " +
                         shape_str(d.shape()));
    double v = d.values()[0];
    if (!(v > 0.0 && v < 1.0))
        throw NumericError(std::string(which) + " output " + std::to_string(v) +
                           " is outside (0,1)");
}

Tensor neg_log(Graph&, Tensor d) { return scale(log(d), -1.0); }

Tensor neg_log_complement(Graph& g, Tensor d) {
    return scale(log(sub(g.constant(d.shape(), std::vector<double>(numel(d.shape()), 1.0)), d)),
                 -1.0);
}

Tensor add_term(Graph&, std::optional<Tensor> acc, Tensor term) {
    return acc ? add(*acc, term) : term;
}

}  // namespace

PriorPixelSets PriorPixelSets::from_nodes(const NodeSet& nodes, std::size_t pixel_count) {
    nodes.validate(pixel_count);
    PriorPixelSets sets;
    for (auto& mask : sets.pixels) mask.assign(pixel_count, 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes.categories[i] == PriorCategory::Unknown) continue;
        auto e = static_cast<std::size_t>(nodes.categories[i]);
        for (std::size_t k = 0; k < pixel_count; ++k)
            if (nodes.masks[i][k]) sets.pixels[e][k] = 1;
        sets.present[e] = true;
    }
    sets.validate();
    return sets;
}

void PriorPixelSets::validate() const {
    const std::size_t n = pixels[0].size();
    for (const auto& mask : pixels)
        if (mask.size() != n) throw ShapeError("prior pixel sets disagree on the image size");
    for (std::size_t k = 0; k < n; ++k) {
        int owners = 0;
        for (const auto& mask : pixels) owners += mask[k] != 0;
        if (owners > 1)
            throw DomainError("prior pixel sets overlap at pixel " + std::to_string(k));
    }
    for (std::size_t e = 0; e < pixels.size(); ++e) {
        bool any = false;
        for (std::uint8_t m : pixels[e]) any = any || m != 0;
        if (any != present[e])
            throw DomainError("present flag disagrees with pixel set for category " +
                              std::string(to_string(static_cast<PriorCategory>(e))));
    }
}

WeakLabelSpec WeakLabelSpec::from(const ClassTaxonomy& taxonomy) {
    WeakLabelSpec spec;
    for (int e = 0; e < kNumPriorCategories; ++e)
        spec.allowed[e] = taxonomy.prior_classes(static_cast<PriorCategory>(e));
    return spec;
}

Tensor ce_loss(Graph& g, Tensor probs, const std::vector<ClassId>& labels, ClassId ignore_id,
               bool sum_mode, LossDiagnostics* diag) {
    const Shape& s = probs.shape();
    Tensor rows = prob_rows(probs);
    const int classes = s[0];
    const std::size_t pixel_count = static_cast<std::size_t>(s[1]) * s[2];
    if (labels.size() != pixel_count)
        throw ShapeError("label map has " + std::to_string(labels.size()) + " entries for " +
                         std::to_string(pixel_count) + " pixels");

    std::vector<double> one_hot(pixel_count * classes, 0.0);
    std::int64_t valid = 0;
    for (std::size_t k = 0; k < pixel_count; ++k) {
        if (labels[k] == ignore_id) continue;
        if (labels[k] >= classes)
            throw DomainError("label " + std::to_string(labels[k]) + " out of range for " +
                              std::to_string(classes) + " classes");
        one_hot[k * classes + labels[k]] = 1.0;
        ++valid;
    }
    if (valid == 0) throw DomainError("cross entropy over zero valid pixels");

    if (diag) {
        for (std::size_t k = 0; k < pixel_count; ++k)
            if (labels[k] != ignore_id &&
                rows.values()[k * classes + labels[k]] < kProbFloor)
                ++diag->prob_clamps;
    }

    Tensor picked = mul(log(clamp_min(rows, kProbFloor)),
                        g.constant({static_cast<int>(pixel_count), classes}, std::move(one_hot)));
    Tensor total = sum_reduce(picked, {0, 1});
    return scale(total, sum_mode ? -1.0 : -1.0 / static_cast<double>(valid));
}

std::pair<Tensor, Tensor> scene_adv_losses(Graph& g, Tensor d_target, Tensor d_source) {
    check_unit_interval(d_target, "target discriminator");
    check_unit_interval(d_source, "source discriminator");
    Tensor gen = neg_log(g, d_target);
    Tensor disc = add(neg_log(g, d_source), neg_log_complement(g, d_target));
    return {gen, disc};
}

std::pair<Tensor, Tensor> instance_adv_losses(
    Graph& g, const std::array<CategoryDiscOutputs, kNumPriorCategories>& outputs) {
    std::optional<Tensor> gen, disc;
    for (int e = 0; e < kNumPriorCategories; ++e) {
        const char* name = to_string(static_cast<PriorCategory>(e));
        if (outputs[e].target) {
            check_unit_interval(*outputs[e].target, name);
            gen = add_term(g, gen, neg_log(g, *outputs[e].target));
            disc = add_term(g, disc, neg_log_complement(g, *outputs[e].target));
        }
        if (outputs[e].source) {
            check_unit_interval(*outputs[e].source, name);
            disc = add_term(g, disc, neg_log(g, *outputs[e].source));
        }
    }
    if (!gen) gen = g.scalar(0.0);
    if (!disc) disc = g.scalar(0.0);
    return {*gen, *disc};
}

Tensor weak_label_loss(Graph& g, Tensor probs, const std::vector<std::uint8_t>& pixel_mask,
                       const std::set<ClassId>& allowed, LossDiagnostics* diag) {
    const Shape& s = probs.shape();
    Tensor rows = prob_rows(probs);
    const int classes = s[0];
    const std::size_t pixel_count = static_cast<std::size_t>(s[1]) * s[2];
    if (pixel_mask.size() != pixel_count)
        throw ShapeError("pixel mask has " + std::to_string(pixel_mask.size()) +
                         " entries for " + std::to_string(pixel_count) + " pixels");
    std::int64_t n_e = 0;
    for (std::uint8_t m : pixel_mask) n_e += m != 0;
    if (n_e == 0) throw DomainError("weak label loss over an empty pixel set");

    std::vector<double> forbidden(classes, 1.0);
    for (ClassId c : allowed) {
        if (c >= classes)
            throw DomainError("allowed class " + std::to_string(c) + " out of range");
        forbidden[c] = 0.0;
    }

    Tensor selected = gather_mask(rows, pixel_mask);
    Tensor forbidden_mass =
        matmul(selected, g.constant({classes, 1}, std::move(forbidden)));
    Tensor surviving = sub(g.constant({static_cast<int>(n_e), 1},
                                      std::vector<double>(static_cast<std::size_t>(n_e), 1.0)),
                           forbidden_mass);
    if (diag) {
        for (double v : surviving.values())
            if (v < kProbFloor) ++diag->prob_clamps;
    }
    Tensor total = sum_reduce(log(clamp_min(surviving, kProbFloor)), {0, 1});
    return scale(total, -1.0 / static_cast<double>(n_e));
}

}  // namespace udma
