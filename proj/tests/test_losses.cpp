#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "udma/errors.hpp"
#include "udma/losses.hpp"
#include "udma/model.hpp"
#include "udma/rng.hpp"

using namespace udma;

namespace {

const double kLn2 = std::log(2.0);

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                  double hi = 1.0) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
}

// Probabilities [C,h,w] from unconstrained logits laid out pixel-major.
Tensor probs_from_logits(Graph&, Tensor logits_rows, int classes, int h, int w) {
    return reshape(transpose2d(softmax(logits_rows)), {classes, h, w});
}

Tensor unit_scalar(Graph& g, double v) { return g.leaf({1, 1}, {v}, true); }

}  // namespace

TEST_CASE("cross entropy hand values") {
    Graph g;
    // One pixel, 2 classes, p(true) = 0.5.
    Tensor p_half = g.leaf({2, 1, 1}, {0.5, 0.5}, true);
    CHECK(ce_loss(g, p_half, {0}, 6).value() == doctest::Approx(kLn2).epsilon(1e-12));

    // Perfect one-hot prediction -> exactly zero.
    Tensor perfect = g.leaf({2, 1, 2}, {1.0, 0.0, 0.0, 1.0}, true);
    CHECK(ce_loss(g, perfect, {0, 1}, 6).value() == 0.0);

    // Uniform over 6 classes: ln 6 per pixel regardless of the labels.
    std::vector<double> uniform(6 * 4, 1.0 / 6.0);
    Tensor u = g.leaf({6, 2, 2}, uniform, true);
    CHECK(ce_loss(g, u, {0, 3, 5, 2}, 6).value() ==
          doctest::Approx(std::log(6.0)).epsilon(1e-12));
    // Literal-sum mode scales by the pixel count instead of averaging.
    CHECK(ce_loss(g, u, {0, 3, 5, 2}, 6, true).value() ==
          doctest::Approx(4.0 * std::log(6.0)).epsilon(1e-12));

    // Ignored pixels drop out of both the sum and the normalizer.
    CHECK(ce_loss(g, u, {0, 6, 6, 6}, 6).value() ==
          doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy clamps zero probabilities and reports them") {
    Graph g;
    Tensor p = g.leaf({2, 1, 2}, {0.0, 0.5, 1.0, 0.5}, true);
    LossDiagnostics diag;
    double loss = ce_loss(g, p, {0, 1}, 6, false, &diag).value();
    CHECK(diag.prob_clamps == 1);
    CHECK(loss == doctest::Approx(0.5 * (-std::log(1e-12) + kLn2)).epsilon(1e-9));
    CHECK(std::isfinite(loss));
}

TEST_CASE("cross entropy input validation") {
    Graph g;
    Tensor p = g.leaf({2, 1, 2}, {0.5, 0.5, 0.5, 0.5}, true);
    CHECK_THROWS_AS(ce_loss(g, p, {6, 6}, 6), DomainError);       // nothing valid
    CHECK_THROWS_AS(ce_loss(g, p, {0}, 6), ShapeError);           // wrong length
    CHECK_THROWS_AS(ce_loss(g, p, {0, 3}, 6), DomainError);       // class out of range
    Tensor flat = g.leaf({2, 2}, {0.5, 0.5, 0.5, 0.5}, true);
    CHECK_THROWS_AS(ce_loss(g, flat, {0, 1}, 6), ShapeError);     // not [C,H,W]
}

TEST_CASE("cross entropy gradient matches finite differences through softmax") {
    const int classes = 6, h = 2, w = 2;
    std::vector<ClassId> labels = {0, 6, 5, 2};
    std::vector<double> x0 = random_values(static_cast<std::size_t>(h) * w * classes, 3);

    Graph g;
    Tensor logits = g.leaf({h * w, classes}, x0, true);
    Tensor loss = ce_loss(g, probs_from_logits(g, logits, classes, h, w), labels, 6);
    g.backward(loss);

    auto eval = [&](std::span<const double> x) {
        Graph g2;
        Tensor l2 = g2.leaf({h * w, classes}, std::vector<double>(x.begin(), x.end()), true);
        return ce_loss(g2, probs_from_logits(g2, l2, classes, h, w), labels, 6).value();
    };
    GradCheckReport rep = grad_check(eval, x0, logits.grad(), 1e-5, 1e-6);
    CHECK(rep.pass);
}

TEST_CASE("scene adversarial pair: hand values, limits, re-sum identity") {
    Graph g;
    auto [gen, disc] = scene_adv_losses(g, unit_scalar(g, 0.5), unit_scalar(g, 0.5));
    CHECK(gen.value() == doctest::Approx(kLn2).epsilon(1e-12));
    CHECK(disc.value() == doctest::Approx(2.0 * kLn2).epsilon(1e-12));
    CHECK(gen.value() + disc.value() == doctest::Approx(3.0 * kLn2).epsilon(1e-12));

    // Generator objective vanishes when the discriminator is fooled.
    auto [gen1, disc1] = scene_adv_losses(g, unit_scalar(g, 1.0 - 1e-9), unit_scalar(g, 0.5));
    CHECK(gen1.value() == doctest::Approx(0.0).epsilon(1e-8));
    (void)disc1;
    // Perfect discriminator drives its own term toward zero.
    auto [gen2, disc2] = scene_adv_losses(g, unit_scalar(g, 1e-9), unit_scalar(g, 1.0 - 1e-9));
    CHECK(disc2.value() == doctest::Approx(0.0).epsilon(1e-8));
    (void)gen2;

    auto rng = make_rng(11);
    std::uniform_real_distribution<double> dist(0.05, 0.95);
    for (int trial = 0; trial < 50; ++trial) {
        double dt = dist(rng), ds = dist(rng);
        Graph g2;
        auto [lg, ld] = scene_adv_losses(g2, unit_scalar(g2, dt), unit_scalar(g2, ds));
        double printed = -std::log(ds) - std::log(1.0 - dt) - std::log(dt);
        CHECK(lg.value() + ld.value() == doctest::Approx(printed).epsilon(1e-12));
        CHECK(lg.value() >= 0.0);
        CHECK(ld.value() >= 0.0);
    }
}

TEST_CASE("scene adversarial pair rejects saturated or non-scalar outputs") {
    Graph g;
    CHECK_THROWS_AS(scene_adv_losses(g, unit_scalar(g, 1.0), unit_scalar(g, 0.5)), NumericError);
    CHECK_THROWS_AS(scene_adv_losses(g, unit_scalar(g, 0.5), unit_scalar(g, 0.0)), NumericError);
    Tensor wide = g.leaf({2, 1}, {0.5, 0.5}, true);
    CHECK_THROWS_AS(scene_adv_losses(g, wide, unit_scalar(g, 0.5)), ShapeError);
}

TEST_CASE("instance adversarial losses follow the y-gating exactly") {
    Graph g;
    std::array<CategoryDiscOutputs, kNumPriorCategories> none{};
    auto [gen0, disc0] = instance_adv_losses(g, none);
    CHECK(gen0.value() == 0.0);
    CHECK(disc0.value() == 0.0);

    // One category present on both sides at 0.5: the printed sum is 3 ln 2.
    std::array<CategoryDiscOutputs, kNumPriorCategories> one{};
    one[0].source = unit_scalar(g, 0.5);
    one[0].target = unit_scalar(g, 0.5);
    auto [gen1, disc1] = instance_adv_losses(g, one);
    CHECK(gen1.value() + disc1.value() == doctest::Approx(3.0 * kLn2).epsilon(1e-12));

    // Source-only category: only -log D(F_S) survives.
    std::array<CategoryDiscOutputs, kNumPriorCategories> src_only{};
    src_only[2].source = unit_scalar(g, 0.25);
    auto [gen2, disc2] = instance_adv_losses(g, src_only);
    CHECK(gen2.value() == 0.0);
    CHECK(disc2.value() == doctest::Approx(-std::log(0.25)).epsilon(1e-12));

    // Mixed categories re-sum to the printed double sum.
    std::array<CategoryDiscOutputs, kNumPriorCategories> mixed{};
    mixed[0].source = unit_scalar(g, 0.3);
    mixed[0].target = unit_scalar(g, 0.6);
    mixed[1].target = unit_scalar(g, 0.2);
    auto [gen3, disc3] = instance_adv_losses(g, mixed);
    double printed = (-std::log(0.3) - std::log(1.0 - 0.6) - std::log(0.6)) +
                     (-std::log(1.0 - 0.2) - std::log(0.2));
    CHECK(gen3.value() + disc3.value() == doctest::Approx(printed).epsilon(1e-12));

    std::array<CategoryDiscOutputs, kNumPriorCategories> bad{};
    bad[1].target = unit_scalar(g, 1.0);
    CHECK_THROWS_AS(instance_adv_losses(g, bad), NumericError);
}

TEST_CASE("absent category leaves its discriminator gradients exactly zero") {
    ModelConfig cfg;
    cfg.feature_dim = 4;
    cfg.enc1 = 3;
    cfg.enc2 = 4;
    cfg.disc_hidden = 8;
    ParamSet params = init_params(cfg, 5);

    Graph g;
    StagedParams sp = stage_all(g, params);
    Tensor pooled_s = g.leaf({1, cfg.fused_dim()}, random_values(8, 7), true);
    Tensor pooled_t = g.leaf({1, cfg.fused_dim()}, random_values(8, 8), true);

    std::array<CategoryDiscOutputs, kNumPriorCategories> outs{};
    auto ground = static_cast<std::size_t>(PriorCategory::Ground);
    outs[ground].source = discriminate(g, sp, "ground", pooled_s);
    outs[ground].target = discriminate(g, sp, "ground", pooled_t);
    auto [gen, disc] = instance_adv_losses(g, outs);
    g.backward(disc);
    (void)gen;

    for (double v : sp.at("disc_car.1.w").grad()) CHECK(v == 0.0);
    for (double v : sp.at("disc_wall.1.w").grad()) CHECK(v == 0.0);
    double ground_grad = 0.0;
    for (double v : sp.at("disc_ground.1.w").grad()) ground_grad += std::abs(v);
    CHECK(ground_grad > 0.0);
}

TEST_CASE("weak label hand values") {
    Graph g;
    const ClassTaxonomy tax = ClassTaxonomy::evaluation_default();
    WeakLabelSpec spec = WeakLabelSpec::from(tax);
    auto ground = static_cast<std::size_t>(PriorCategory::Ground);

    // 6 classes, one pixel: all mass on allowed ground classes -> 0.
    Tensor all_allowed = g.leaf({6, 1, 1}, {0.5, 0.3, 0.0, 0.0, 0.2, 0.0}, true);
    CHECK(weak_label_loss(g, all_allowed, {1}, spec.allowed[ground]).value() == 0.0);

    // Forbidden mass 0.5 -> ln 2.
    Tensor half = g.leaf({6, 1, 1}, {0.25, 0.25, 0.3, 0.1, 0.0, 0.1}, true);
    CHECK(weak_label_loss(g, half, {1}, spec.allowed[ground]).value() ==
          doctest::Approx(kLn2).epsilon(1e-12));

    // Two pixels with forbidden masses 0.5 and 0 -> ln 2 / 2.
    Tensor pair = g.leaf({6, 1, 2},
                         {0.25, 1.0, 0.25, 0.0, 0.25, 0.0, 0.1, 0.0, 0.0, 0.0, 0.15, 0.0}, true);
    CHECK(weak_label_loss(g, pair, {1, 1}, spec.allowed[ground]).value() ==
          doctest::Approx(0.5 * kLn2).epsilon(1e-12));

    // Unmasked pixels contribute nothing.
    CHECK(weak_label_loss(g, pair, {1, 0}, spec.allowed[ground]).value() ==
          doctest::Approx(kLn2).epsilon(1e-12));
}

TEST_CASE("weak label loss depends only on the forbidden mass") {
    Graph g;
    std::set<ClassId> allowed = {0, 1, 4};
    Tensor a = g.leaf({6, 1, 1}, {0.6, 0.1, 0.2, 0.05, 0.0, 0.05}, true);
    Tensor b = g.leaf({6, 1, 1}, {0.0, 0.1, 0.2, 0.05, 0.6, 0.05}, true);
    double la = weak_label_loss(g, a, {1}, allowed).value();
    double lb = weak_label_loss(g, b, {1}, allowed).value();
    CHECK(la == lb);
}

TEST_CASE("weak label clamps a fully forbidden pixel and reports it") {
    Graph g;
    std::set<ClassId> allowed = {0};
    Tensor p = g.leaf({2, 1, 1}, {0.0, 1.0}, true);
    LossDiagnostics diag;
    double loss = weak_label_loss(g, p, {1}, allowed, &diag).value();
    CHECK(diag.prob_clamps == 1);
    CHECK(loss == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));

    CHECK_THROWS_AS(weak_label_loss(g, p, {0}, allowed), DomainError);
    CHECK_THROWS_AS(weak_label_loss(g, p, {1, 1}, allowed), ShapeError);
    CHECK_THROWS_AS(weak_label_loss(g, p, {1}, std::set<ClassId>{9}), DomainError);
}

TEST_CASE("weak label gradient matches finite differences through softmax") {
    const int classes = 6, h = 2, w = 2;
    std::vector<std::uint8_t> mask = {1, 0, 1, 1};
    std::set<ClassId> allowed = {2, 3};
    std::vector<double> x0 = random_values(static_cast<std::size_t>(h) * w * classes, 13);

    Graph g;
    Tensor logits = g.leaf({h * w, classes}, x0, true);
    Tensor loss =
        weak_label_loss(g, probs_from_logits(g, logits, classes, h, w), mask, allowed);
    g.backward(loss);

    auto eval = [&](std::span<const double> x) {
        Graph g2;
        Tensor l2 = g2.leaf({h * w, classes}, std::vector<double>(x.begin(), x.end()), true);
        return weak_label_loss(g2, probs_from_logits(g2, l2, classes, h, w), mask, allowed)
            .value();
    };
    GradCheckReport rep = grad_check(eval, x0, logits.grad(), 1e-5, 1e-6);
    CHECK(rep.pass);
}

TEST_CASE("prior pixel sets union node masks by category") {
    NodeSet nodes;
    auto mask_of = [](std::initializer_list<int> on) {
        std::vector<std::uint8_t> m(8, 0);
        for (int k : on) m[static_cast<std::size_t>(k)] = 1;
        return m;
    };
    nodes.masks = {mask_of({0, 1}), mask_of({2}), mask_of({4, 5}), mask_of({7})};
    nodes.categories = {PriorCategory::Ground, PriorCategory::Car, PriorCategory::Ground,
                        PriorCategory::Unknown};
    nodes.sizes = {2, 1, 2, 1};

    PriorPixelSets sets = PriorPixelSets::from_nodes(nodes, 8);
    auto ground = static_cast<std::size_t>(PriorCategory::Ground);
    auto car = static_cast<std::size_t>(PriorCategory::Car);
    auto wall = static_cast<std::size_t>(PriorCategory::Wall);
    CHECK(sets.present[ground]);
    CHECK(sets.present[car]);
    CHECK_FALSE(sets.present[wall]);
    CHECK(sets.pixels[ground] == mask_of({0, 1, 4, 5}));
    CHECK(sets.pixels[car] == mask_of({2}));
    // Unknown nodes feed no category, including pixel 7.
    CHECK(sets.pixels[wall] == mask_of({}));

    PriorPixelSets broken = sets;
    broken.pixels[wall][3] = 1;  // present flag says otherwise
    CHECK_THROWS_AS(broken.validate(), DomainError);
    broken = sets;
    broken.pixels[car][0] = 1;  // overlaps ground
    CHECK_THROWS_AS(broken.validate(), DomainError);
}

TEST_CASE("weak label spec mirrors the prior class sets") {
    const ClassTaxonomy tax = ClassTaxonomy::evaluation_default();
    WeakLabelSpec spec = WeakLabelSpec::from(tax);
    auto expect = [&](PriorCategory cat, std::initializer_list<const char*> names) {
        std::set<ClassId> want;
        for (const char* n : names) want.insert(tax.id_of(n));
        CHECK(spec.allowed[static_cast<std::size_t>(cat)] == want);
    };
    expect(PriorCategory::Ground, {"road", "sidewalk", "terrain"});
    expect(PriorCategory::Wall, {"building", "vegetation"});
    expect(PriorCategory::Car, {"car"});
}
