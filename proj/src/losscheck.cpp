#include "udma/losscheck.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "udma/errors.hpp"
#include "udma/graph.hpp"
#include "udma/losses.hpp"
#include "udma/rng.hpp"
#include "udma/taxonomy.hpp"

namespace udma {
namespace {

// One seed's worth of synthetic inputs. Three disjoint node masks split the
// first three quarters of the image; the last quarter stays uncovered so the
// zero rows of the scatter path are exercised too.
struct Fixture {
    std::vector<double> source;  // 3*h*w planes
    std::vector<double> target;
    std::vector<ClassId> labels;  // per pixel, may contain ignore
    std::vector<std::uint8_t> all_pixels;
    NodeSet nodes;
    ParamSet params;
};

Fixture make_fixture(const LossCheckConfig& cfg, int seed_index,
                     const ClassTaxonomy& taxonomy) {
    const auto hw = static_cast<std::size_t>(cfg.height) * cfg.width;
    const auto base = static_cast<std::uint64_t>(seed_index) * 8;

    Fixture fx;
    fx.source.resize(3 * hw);
    fx.target.resize(3 * hw);
    auto rng_src = make_rng(cfg.master_seed, base + 1);
    auto rng_tgt = make_rng(cfg.master_seed, base + 2);
    std::uniform_real_distribution<double> range_dist(0.5, 6.0);
    std::uniform_real_distribution<double> intensity_dist(0.0, 1.0);
    for (std::size_t i = 0; i < hw; ++i) {
        const double rs = range_dist(rng_src);
        const double rt = range_dist(rng_tgt);
        fx.source[i] = rs;
        fx.source[hw + i] = rs;
        fx.source[2 * hw + i] = intensity_dist(rng_src);
        fx.target[i] = rt;
        fx.target[hw + i] = rt;
        fx.target[2 * hw + i] = intensity_dist(rng_tgt);
    }

    auto rng_label = make_rng(cfg.master_seed, base + 3);
    std::uniform_int_distribution<int> label_dist(
        0, static_cast<int>(taxonomy.num_classes()));  // == num_classes -> ignore
    fx.labels.resize(hw);
    for (auto& l : fx.labels) l = static_cast<ClassId>(label_dist(rng_label));
    fx.labels[0] = 0;  // at least one valid pixel

    const std::size_t quarter = hw / 4;
    fx.nodes.masks.assign(3, std::vector<std::uint8_t>(hw, 0));
    for (std::size_t i = 0; i < quarter; ++i) {
        fx.nodes.masks[0][i] = 1;
        fx.nodes.masks[1][quarter + i] = 1;
        fx.nodes.masks[2][2 * quarter + i] = 1;
    }
    fx.nodes.categories = {PriorCategory::Ground, PriorCategory::Car,
                           PriorCategory::Wall};
    fx.nodes.sizes = {static_cast<std::int64_t>(quarter),
                      static_cast<std::int64_t>(quarter),
                      static_cast<std::int64_t>(quarter)};
    fx.nodes.validate(hw);

    fx.all_pixels.assign(hw, 1);

    fx.params = init_params(cfg.model, derive_seed(cfg.master_seed, base + 4));
    // Keep every probability away from its numerical extremes. Fresh He
    // weights on features of this magnitude saturate both the sigmoid and
    // the softmax; a central difference of log(p) near p ~ 1e-6 measures
    // roundoff amplified by 1/p, not the derivative. Damping the heads moves
    // the audit to a well-conditioned point without touching the paths.
    for (auto& p : fx.params.all()) {
        const bool head = p.name.rfind("disc_", 0) == 0 || p.name.rfind("seg.", 0) == 0;
        if (head)
            for (auto& v : p.value) v *= 0.1;
    }
    return fx;
}

struct Forward {
    Tensor fused;
    Tensor probs;
};

Forward run_forward(Graph& g, const StagedParams& sp, const ModelConfig& mcfg,
                    Tensor input, const NodeSet& nodes) {
    Tensor f_pixel = extract_pixel_features(g, sp, mcfg, input);
    Tensor descriptors = construct_nodes(g, sp, f_pixel, nodes);
    Tensor enhanced = edge_conv(g, sp, mcfg, descriptors);
    Tensor fused = expand_and_concat(g, f_pixel, enhanced, nodes);
    return {fused, segment(g, sp, mcfg, fused)};
}

// Builds the audited scalar. `src`/`tgt` are the input tensors a loss needs;
// unused sides are passed as std::nullopt and never staged.
Tensor build_loss(const std::string& which, Graph& g, const StagedParams& sp,
                  const LossCheckConfig& cfg, const Fixture& fx,
                  const ClassTaxonomy& taxonomy, const WeakLabelSpec& weak,
                  std::optional<Tensor> src, std::optional<Tensor> tgt) {
    const ModelConfig& mcfg = cfg.model;
    if (which == "cross_entropy") {
        Forward f = run_forward(g, sp, mcfg, *src, fx.nodes);
        return ce_loss(g, f.probs, fx.labels, taxonomy.ignore_id());
    }
    if (which == "scene_adversarial") {
        Forward fs = run_forward(g, sp, mcfg, *src, fx.nodes);
        Forward ft = run_forward(g, sp, mcfg, *tgt, fx.nodes);
        Tensor d_s = discriminate(g, sp, "main", pooled_feature(g, fs.fused, fx.all_pixels));
        Tensor d_t = discriminate(g, sp, "main", pooled_feature(g, ft.fused, fx.all_pixels));
        auto [gen, disc] = scene_adv_losses(g, d_t, d_s);
        return add(gen, disc);
    }
    if (which == "instance_adversarial") {
        Forward fs = run_forward(g, sp, mcfg, *src, fx.nodes);
        Forward ft = run_forward(g, sp, mcfg, *tgt, fx.nodes);
        std::array<CategoryDiscOutputs, kNumPriorCategories> outputs;
        for (std::size_t i = 0; i < fx.nodes.masks.size(); ++i) {
            const auto cat = static_cast<std::size_t>(fx.nodes.categories[i]);
            const std::string head = to_string(fx.nodes.categories[i]);
            outputs[cat].source =
                discriminate(g, sp, head, pooled_feature(g, fs.fused, fx.nodes.masks[i]));
            outputs[cat].target =
                discriminate(g, sp, head, pooled_feature(g, ft.fused, fx.nodes.masks[i]));
        }
        auto [gen, disc] = instance_adv_losses(g, outputs);
        return add(gen, disc);
    }
    if (which == "weak_label") {
        Forward ft = run_forward(g, sp, mcfg, *tgt, fx.nodes);
        const auto ground = static_cast<std::size_t>(PriorCategory::Ground);
        const auto wall = static_cast<std::size_t>(PriorCategory::Wall);
        Tensor lg = weak_label_loss(g, ft.probs, fx.nodes.masks[0], weak.allowed[ground]);
        Tensor lw = weak_label_loss(g, ft.probs, fx.nodes.masks[2], weak.allowed[wall]);
        return add(lg, lw);
    }
    throw DomainError("unknown loss in gradient audit: " + which);
}

struct LossLayout {
    std::string name;
    bool uses_source = false;
    bool uses_target = false;
    bool generator_only = false;  // restrict the parameter block
};

}  // namespace

std::vector<LossCheckCase> check_loss_gradients(const LossCheckConfig& cfg) {
    cfg.model.validate();
    if (cfg.height < 2 || cfg.width < 2)
        throw ConfigError("gradient audit needs at least a 2x2 image");
    if (cfg.height % 4 != 0 || cfg.width % 4 != 0)
        throw ConfigError("gradient audit image sides must be divisible by 4");
    if (cfg.seeds < 1) throw ConfigError("gradient audit needs at least one seed");

    const ClassTaxonomy taxonomy = ClassTaxonomy::evaluation_default();
    if (cfg.model.num_classes != static_cast<int>(taxonomy.num_classes()))
        throw ConfigError("gradient audit model must use the evaluation class count");
    const WeakLabelSpec weak = WeakLabelSpec::from(taxonomy);
    const auto hw = static_cast<std::size_t>(cfg.height) * cfg.width;
    const Shape input_shape{3, cfg.height, cfg.width};

    const std::array<LossLayout, 4> layouts{{
        {"cross_entropy", true, false, true},
        {"scene_adversarial", true, true, false},
        {"instance_adversarial", true, true, false},
        {"weak_label", false, true, true},
    }};

    std::vector<LossCheckCase> cases;
    for (const auto& layout : layouts)
        cases.push_back({layout.name, 0.0, 0, true});

    for (int s = 0; s < cfg.seeds; ++s) {
        const Fixture fx = make_fixture(cfg, s, taxonomy);

        std::vector<std::string> param_order;
        for (const auto& p : fx.params.all()) param_order.push_back(p.name);

        for (std::size_t li = 0; li < layouts.size(); ++li) {
            const LossLayout& layout = layouts[li];
            auto in_block = [&](const std::string& name) {
                return !layout.generator_only || is_generator_param(name);
            };

            // Flat coordinate vector: [source planes][target planes][params...]
            std::vector<double> x0;
            if (layout.uses_source) x0.insert(x0.end(), fx.source.begin(), fx.source.end());
            if (layout.uses_target) x0.insert(x0.end(), fx.target.begin(), fx.target.end());
            for (const auto& p : fx.params.all())
                if (in_block(p.name)) x0.insert(x0.end(), p.value.begin(), p.value.end());

            // Analytic pass: inputs and in-block parameters as leaves.
            Graph g;
            std::optional<Tensor> src, tgt;
            if (layout.uses_source) src = g.leaf(input_shape, fx.source, true);
            if (layout.uses_target) tgt = g.leaf(input_shape, fx.target, true);
            StagedParams sp = stage(g, fx.params,
                                    [&](const std::string& name) { return in_block(name); });
            Tensor loss = build_loss(layout.name, g, sp, cfg, fx, taxonomy, weak, src, tgt);
            g.backward(loss);

            std::vector<double> analytic;
            if (layout.uses_source) {
                auto gr = src->grad();
                analytic.insert(analytic.end(), gr.begin(), gr.end());
            }
            if (layout.uses_target) {
                auto gr = tgt->grad();
                analytic.insert(analytic.end(), gr.begin(), gr.end());
            }
            for (const auto& name : param_order) {
                if (!in_block(name)) continue;
                auto gr = sp.at(name).grad();
                analytic.insert(analytic.end(), gr.begin(), gr.end());
            }

            auto eval = [&](std::span<const double> x) {
                std::size_t off = 0;
                Graph g2;
                std::optional<Tensor> s2, t2;
                if (layout.uses_source) {
                    s2 = g2.constant(input_shape, {x.begin() + off, x.begin() + off + 3 * hw});
                    off += 3 * hw;
                }
                if (layout.uses_target) {
                    t2 = g2.constant(input_shape, {x.begin() + off, x.begin() + off + 3 * hw});
                    off += 3 * hw;
                }
                ParamSet shifted = fx.params;
                for (auto& p : shifted.all()) {
                    if (!in_block(p.name)) continue;
                    std::copy(x.begin() + off, x.begin() + off + p.value.size(),
                              p.value.begin());
                    off += p.value.size();
                }
                StagedParams sp2 = stage(g2, shifted, [](const std::string&) { return false; });
                return build_loss(layout.name, g2, sp2, cfg, fx, taxonomy, weak, s2, t2)
                    .value();
            };

            const auto sample_seed = derive_seed(cfg.master_seed, 1000 + s * 16 + li);
            GradCheckReport report = grad_check(eval, x0, analytic, cfg.step, cfg.tolerance,
                                                1e-4, cfg.max_coords, sample_seed);
            cases[li].max_rel_error = std::max(cases[li].max_rel_error, report.max_rel_error);
            cases[li].coords_checked += report.coords_checked;
            cases[li].pass = cases[li].pass && report.pass;
        }
    }
    return cases;
}

}  // namespace udma
