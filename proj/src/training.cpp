#include "udma/training.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "udma/errors.hpp"

namespace udma {

namespace {

void check_grad_shape(const Param& param, std::span<const double> grad) {
    if (grad.size() != param.value.size())
        throw ShapeError("gradient size " + std::to_string(grad.size()) +
                         " does not match parameter '" + param.name + "' of size " +
                         std::to_string(param.value.size()));
}

std::ostream& metric(std::ostream& os, const char* key, double v) {
    return os << ' ' << key << '=' << std::setprecision(17) << v;
}

}  // namespace

void SgdOptimizer::update(Param& param, std::span<const double> grad) {
    check_grad_shape(param, grad);
    for (std::size_t k = 0; k < grad.size(); ++k) param.value[k] -= cfg_.lr * grad[k];
}

void AdamOptimizer::update(Param& param, std::span<const double> grad) {
    check_grad_shape(param, grad);
    Moments& s = state_[param.name];
    if (s.m.empty()) {
        s.m.assign(grad.size(), 0.0);
        s.v.assign(grad.size(), 0.0);
    } else if (s.m.size() != grad.size()) {
        throw ShapeError("moment buffers for '" + param.name + "' have stale shape");
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (std::size_t k = 0; k < grad.size(); ++k) {
        s.m[k] = cfg_.beta1 * s.m[k] + (1.0 - cfg_.beta1) * grad[k];
        s.v[k] = cfg_.beta2 * s.v[k] + (1.0 - cfg_.beta2) * grad[k] * grad[k];
        param.value[k] -= cfg_.lr * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + cfg_.eps);
    }
}

TrainerConfig TrainerConfig::from(const RunConfig& cfg) {
    TrainerConfig t;
    t.lambda_scene = cfg.lambda_scene;
    t.lambda_instance = cfg.lambda_instance;
    t.ce_sum_mode = cfg.ce_sum_mode;
    t.sgd.lr = cfg.lr_generator;
    t.adam.lr = cfg.lr_discriminator;
    t.adam.beta1 = cfg.adam_beta1;
    t.adam.beta2 = cfg.adam_beta2;
    t.adam.eps = cfg.adam_eps;
    return t;
}

std::string format_metrics(const StepMetrics& m) {
    std::ostringstream os;
    os << "step=" << m.step;
    metric(os, "ce_source", m.ce_source);
    metric(os, "gen_scene", m.gen_scene);
    metric(os, "gen_instance", m.gen_instance);
    metric(os, "disc_scene_at_gen", m.disc_scene_at_gen);
    metric(os, "disc_instance_at_gen", m.disc_instance_at_gen);
    metric(os, "generator_objective", m.generator_objective);
    metric(os, "disc_scene", m.disc_scene);
    metric(os, "disc_instance", m.disc_instance);
    metric(os, "discriminator_objective", m.discriminator_objective);
    os << " prob_clamps=" << m.prob_clamps;
    return os.str();
}

std::string format_metrics(const FineTuneMetrics& m) {
    std::ostringstream os;
    os << "fine_step=" << m.step;
    metric(os, "weak_ground", m.weak_ground);
    metric(os, "weak_wall", m.weak_wall);
    metric(os, "ce_car", m.ce_car);
    metric(os, "total", m.total);
    os << " prob_clamps=" << m.prob_clamps;
    return os.str();
}

Trainer::Trainer(const ModelConfig& mcfg, const TrainerConfig& tcfg,
                 const ClassTaxonomy& taxonomy, std::uint64_t seed)
    : mcfg_(mcfg),
      tcfg_(tcfg),
      taxonomy_(taxonomy),
      weak_spec_(WeakLabelSpec::from(taxonomy)),
      params_(init_params(mcfg, seed)),
      sgd_(tcfg.sgd),
      adam_(tcfg.adam) {
    if (mcfg_.num_classes != static_cast<int>(taxonomy.num_classes()))
        throw ConfigError("model emits " + std::to_string(mcfg_.num_classes) +
                          " classes but the taxonomy defines " +
                          std::to_string(taxonomy.num_classes()));
}

Trainer::DomainForward Trainer::forward_domain(Graph& g, const StagedParams& sp,
                                               const std::vector<double>& planes, int height,
                                               int width, const NodeSet& nodes) {
    const std::size_t pixels = static_cast<std::size_t>(height) * width;
    if (planes.size() != 3 * pixels)
        throw ShapeError("input planes hold " + std::to_string(planes.size()) +
                         " values, expected " + std::to_string(3 * pixels));
    Tensor input = g.constant({3, height, width}, planes);
    Tensor fp = extract_pixel_features(g, sp, mcfg_, input);
    Tensor fused;
    if (nodes.size() > 0) {
        Tensor enhanced = edge_conv(g, sp, mcfg_, construct_nodes(g, sp, fp, nodes));
        fused = expand_and_concat(g, fp, enhanced, nodes);
    } else {
        fused = expand_and_concat(g, fp, std::nullopt, nodes);
    }
    Tensor probs = segment(g, sp, mcfg_, fused);
    return {fused, probs, PriorPixelSets::from_nodes(nodes, pixels)};
}

StepMetrics Trainer::train_step(const SourceSample& source, const RangeImage& target,
                                const NodeSet& target_node_set) {
    StepMetrics m;
    m.step = ++steps_;
    if (source.labels.size() != source.pixels())
        throw ShapeError("source sample is missing per-pixel labels");
    const ClassId ignore = taxonomy_.ignore_id();

    const NodeSet src_nodes =
        source_nodes(source.labels, source.height, source.width, taxonomy_);
    std::vector<std::uint8_t> src_valid(source.pixels());
    for (std::size_t k = 0; k < src_valid.size(); ++k)
        src_valid[k] = source.labels[k] != ignore;
    const std::vector<double> target_planes = network_input(target);

    LossDiagnostics diag;
    auto run_adversarial = [&](Graph& g, const StagedParams& sp, auto&& on_losses) {
        DomainForward s = forward_domain(g, sp, source.image, source.height, source.width,
                                         src_nodes);
        DomainForward t = forward_domain(g, sp, target_planes, target.height, target.width,
                                         target_node_set);
        Tensor d_target = discriminate(g, sp, "main", pooled_feature(g, t.fused, target.valid));
        Tensor d_source = discriminate(g, sp, "main", pooled_feature(g, s.fused, src_valid));
        auto [gen_sa, disc_sa] = scene_adv_losses(g, d_target, d_source);

        std::array<CategoryDiscOutputs, kNumPriorCategories> outs;
        for (int e = 0; e < kNumPriorCategories; ++e) {
            const char* head = to_string(static_cast<PriorCategory>(e));
            if (s.priors.present[e])
                outs[e].source =
                    discriminate(g, sp, head, pooled_feature(g, s.fused, s.priors.pixels[e]));
            if (t.priors.present[e])
                outs[e].target =
                    discriminate(g, sp, head, pooled_feature(g, t.fused, t.priors.pixels[e]));
        }
        auto [gen_ia, disc_ia] = instance_adv_losses(g, outs);
        on_losses(s, gen_sa, disc_sa, gen_ia, disc_ia);
    };

    try {
        // (a) Generator phase: discriminators are constants.
        Graph g;
        StagedParams sp = stage(g, params_, is_generator_param);
        run_adversarial(g, sp, [&](DomainForward& s, Tensor gen_sa, Tensor disc_sa,
                                   Tensor gen_ia, Tensor disc_ia) {
            Tensor ce = ce_loss(g, s.probs, source.labels, ignore, tcfg_.ce_sum_mode, &diag);
            Tensor objective = ce;
            if (tcfg_.lambda_scene != 0.0)
                objective = add(objective, scale(gen_sa, tcfg_.lambda_scene));
            if (tcfg_.lambda_instance != 0.0)
                objective = add(objective, scale(gen_ia, tcfg_.lambda_instance));
            g.backward(objective);
            m.ce_source = ce.value();
            m.gen_scene = gen_sa.value();
            m.gen_instance = gen_ia.value();
            m.disc_scene_at_gen = disc_sa.value();
            m.disc_instance_at_gen = disc_ia.value();
            m.generator_objective = objective.value();
        });
        for (Param& p : params_.all())
            if (is_generator_param(p.name)) sgd_.update(p, sp.at(p.name).grad());

        // (b) Discriminator phase: the just-updated generator is constant.
        Graph g2;
        StagedParams sp2 =
            stage(g2, params_, [](const std::string& n) { return !is_generator_param(n); });
        run_adversarial(g2, sp2, [&](DomainForward&, Tensor, Tensor disc_sa, Tensor,
                                     Tensor disc_ia) {
            Tensor objective = add(disc_sa, disc_ia);
            g2.backward(objective);
            m.disc_scene = disc_sa.value();
            m.disc_instance = disc_ia.value();
            m.discriminator_objective = objective.value();
        });
        for (Param& p : params_.all())
            if (!is_generator_param(p.name)) adam_.update(p, sp2.at(p.name).grad());
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at train step " + std::to_string(m.step) +
                           " (prob clamps this step: " + std::to_string(diag.prob_clamps) + ")");
    }
    m.prob_clamps = diag.prob_clamps;
    return m;
}

FineTuneMetrics Trainer::fine_tune_step(const RangeImage& target,
                                        const NodeSet& target_node_set) {
    FineTuneMetrics m;
    m.step = ++fine_steps_;
    const std::vector<double> planes = network_input(target);
    LossDiagnostics diag;

    try {
        Graph g;
        StagedParams sp = stage(g, params_, is_generator_param);
        DomainForward t =
            forward_domain(g, sp, planes, target.height, target.width, target_node_set);

        std::optional<Tensor> total;
        auto add_term = [&](Tensor term) { total = total ? add(*total, term) : term; };

        auto ground = static_cast<std::size_t>(PriorCategory::Ground);
        if (t.priors.present[ground]) {
            Tensor w = weak_label_loss(g, t.probs, t.priors.pixels[ground],
                                       weak_spec_.allowed[ground], &diag);
            m.weak_ground = w.value();
            add_term(w);
        }
        auto wall = static_cast<std::size_t>(PriorCategory::Wall);
        if (t.priors.present[wall]) {
            Tensor w = weak_label_loss(g, t.probs, t.priors.pixels[wall],
                                       weak_spec_.allowed[wall], &diag);
            m.weak_wall = w.value();
            add_term(w);
        }
        auto car = static_cast<std::size_t>(PriorCategory::Car);
        if (t.priors.present[car]) {
            const ClassId car_id = taxonomy_.id_of("car");
            std::vector<ClassId> car_labels(t.priors.pixels[car].size(), taxonomy_.ignore_id());
            for (std::size_t k = 0; k < car_labels.size(); ++k)
                if (t.priors.pixels[car][k]) car_labels[k] = car_id;
            Tensor ce = ce_loss(g, t.probs, car_labels, taxonomy_.ignore_id(),
                                tcfg_.ce_sum_mode, &diag);
            m.ce_car = ce.value();
            add_term(ce);
        }
        if (!total)
            throw DomainError("fine-tuning needs at least one prior category in the scan");

        g.backward(*total);
        m.total = total->value();
        for (Param& p : params_.all())
            if (is_generator_param(p.name)) sgd_.update(p, sp.at(p.name).grad());
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at fine-tune step " +
                           std::to_string(m.step) +
                           " (prob clamps this step: " + std::to_string(diag.prob_clamps) + ")");
    }
    m.prob_clamps = diag.prob_clamps;
    return m;
}

std::vector<double> Trainer::predict(const std::vector<double>& planes, int height, int width,
                                     const NodeSet& nodes) {
    Graph g;
    StagedParams sp = stage_all(g, params_, false);
    DomainForward t = forward_domain(g, sp, planes, height, width, nodes);
    return {t.probs.values().begin(), t.probs.values().end()};
}

double Trainer::discriminator_score(const std::vector<double>& planes, int height, int width,
                                    const NodeSet& nodes,
                                    const std::vector<std::uint8_t>& valid) {
    Graph g;
    StagedParams sp = stage_all(g, params_, false);
    DomainForward t = forward_domain(g, sp, planes, height, width, nodes);
    return discriminate(g, sp, "main", pooled_feature(g, t.fused, valid)).value();
}

}  // namespace udma
