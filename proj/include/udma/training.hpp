#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "udma/config.hpp"
#include "udma/losses.hpp"
#include "udma/model.hpp"
#include "udma/point_cloud.hpp"
#include "udma/projection.hpp"

namespace udma {

struct SgdConfig {
    double lr = 2.5e-4;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Plain gradient descent: p <- p - lr * g.
class SgdOptimizer {
public:
    explicit SgdOptimizer(SgdConfig cfg) : cfg_(cfg) {}
    void update(Param& param, std::span<const double> grad);

private:
    SgdConfig cfg_;
};

// Adam with bias correction; moment buffers are keyed by parameter name and
// created on first use.
class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}
    void update(Param& param, std::span<const double> grad);

private:
    struct Moments {
        std::vector<double> m, v;
        std::int64_t t = 0;
    };
    AdamConfig cfg_;
    std::map<std::string, Moments> state_;
};

struct TrainerConfig {
    double lambda_scene = 0.001;
    double lambda_instance = 0.001;
    bool ce_sum_mode = false;
    SgdConfig sgd;
    AdamConfig adam;

    static TrainerConfig from(const RunConfig& cfg);
};

// Everything logged for one adversarial step. The *_at_gen values are the
// discriminator parts evaluated in the generator-phase graph: together with
// the gen parts they re-sum to the full printed adversarial objectives.
struct StepMetrics {
    std::int64_t step = 0;
    double ce_source = 0.0;
    double gen_scene = 0.0;
    double gen_instance = 0.0;
    double disc_scene_at_gen = 0.0;
    double disc_instance_at_gen = 0.0;
    double generator_objective = 0.0;
    double disc_scene = 0.0;
    double disc_instance = 0.0;
    double discriminator_objective = 0.0;
    std::int64_t prob_clamps = 0;
};

struct FineTuneMetrics {
    std::int64_t step = 0;
    double weak_ground = 0.0;
    double weak_wall = 0.0;
    double ce_car = 0.0;
    double total = 0.0;
    std::int64_t prob_clamps = 0;
};

std::string format_metrics(const StepMetrics& m);
std::string format_metrics(const FineTuneMetrics& m);

// Alternating adversarial training plus weak-label fine-tuning. A step is
// a pure function of (weights, batch): no hidden randomness.
class Trainer {
public:
    Trainer(const ModelConfig& mcfg, const TrainerConfig& tcfg, const ClassTaxonomy& taxonomy,
            std::uint64_t seed);

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    const ModelConfig& model_config() const { return mcfg_; }

    // (a) generator update on CE(source) + lambda-weighted adversarial
    // generator terms with discriminators frozen; (b) discriminator update
    // on the discriminator terms with the generator frozen.
    StepMetrics train_step(const SourceSample& source, const RangeImage& target,
                           const NodeSet& target_node_set);

    // Generator-only update: weak labels for ground and wall priors, CE
    // with a car one-hot over car-prior pixels.
    FineTuneMetrics fine_tune_step(const RangeImage& target, const NodeSet& target_node_set);

    // Forward pass for callers (evaluation, discriminator probes). Returns
    // the class probability plane stack [C,H,W] as values.
    std::vector<double> predict(const std::vector<double>& planes, int height, int width,
                                const NodeSet& nodes);
    // Main discriminator output for one sample, for held-out probes.
    double discriminator_score(const std::vector<double>& planes, int height, int width,
                               const NodeSet& nodes, const std::vector<std::uint8_t>& valid);

private:
    struct DomainForward {
        Tensor fused;
        Tensor probs;
        PriorPixelSets priors;
    };
    DomainForward forward_domain(Graph& g, const StagedParams& sp,
                                 const std::vector<double>& planes, int height, int width,
                                 const NodeSet& nodes);

    ModelConfig mcfg_;
    TrainerConfig tcfg_;
    ClassTaxonomy taxonomy_;
    WeakLabelSpec weak_spec_;
    ParamSet params_;
    SgdOptimizer sgd_;
    AdamOptimizer adam_;
    std::int64_t steps_ = 0;
    std::int64_t fine_steps_ = 0;
};

}  // namespace udma
