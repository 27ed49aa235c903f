#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "udma/config.hpp"
#include "udma/graph.hpp"
#include "udma/point_cloud.hpp"
#include "udma/preseg.hpp"
#include "udma/projection.hpp"
#include "udma/taxonomy.hpp"

namespace udma {

struct ModelConfig {
    int in_channels = 3;
    int feature_dim = 16;  // d, pixel feature channels
    int enc1 = 8;
    int enc2 = 16;
    int num_classes = 6;
    int knn = 4;
    int disc_hidden = 256;

    int fused_dim() const { return 2 * feature_dim; }
    static ModelConfig from(const RunConfig& cfg, int num_classes);
    void validate() const;
};

// A named, persistent weight. Tensors are materialized from these per graph.
struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
};

class ParamSet {
public:
    Param& add(const std::string& name, Shape shape);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }
    std::size_t total_size() const;

    // Versioned binary checkpoint: shape table then raw f64 payloads.
    // Loading requires the same parameter names and shapes, in order.
    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    std::vector<Param> params_;
    std::map<std::string, std::size_t> index_;
};

// Per-graph materialization of a ParamSet. Parameters rejected by the
// trainable filter become constants: their gradients are never created,
// so a frozen side is exact by construction, not approximately zero.
struct StagedParams {
    std::map<std::string, Tensor> tensors;

    Tensor at(const std::string& name) const;
};

StagedParams stage(Graph& g, const ParamSet& params,
                   const std::function<bool(const std::string&)>& trainable);
StagedParams stage_all(Graph& g, const ParamSet& params, bool trainable = true);

// True for weights belonging to the segmentation path (everything except
// the discriminators).
bool is_generator_param(const std::string& name);

// Fresh weights for the full model: encoder-decoder, node/edge layers,
// segmentation head, one scene discriminator and one per prior category.
ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

// Instance masks feeding node construction. Masks are pairwise disjoint
// boolean pixel planes (row-major height*width).
struct NodeSet {
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<PriorCategory> categories;
    std::vector<std::int64_t> sizes;

    std::size_t size() const { return masks.size(); }
    void validate(std::size_t pixels) const;
};

// Source nodes: 8-connected regions of equal class on the label map.
NodeSet source_nodes(const std::vector<ClassId>& labels, int height, int width,
                     const ClassTaxonomy& taxonomy);
// Target nodes: pixels grouped by projected component id; categories come
// from the component map.
NodeSet target_nodes(const RangeImage& img, const ComponentMap& map);

// Encoder-decoder: two conv+relu+pool stages, a bottleneck conv+relu, two
// upsample+conv+relu stages. Spatial shape is preserved end to end.
Tensor extract_pixel_features(Graph& g, const StagedParams& p, const ModelConfig& cfg,
                              Tensor input);

// Node descriptors: linear(mean of masked pixel features) per node -> [n,d].
Tensor construct_nodes(Graph& g, const StagedParams& p, Tensor f_pixel, const NodeSet& nodes);

// Exact k-nearest-neighbour lists by Euclidean distance over row vectors
// (self excluded, ties broken by lower index). Single row -> {{0}}.
std::vector<std::vector<int>> knn_indices(std::span<const double> rows, int n, int dim, int k);

// Edge convolution: P'_i = max_j relu(W.concat(P_i, P_j - P_i) + b) over
// the min(k, n-1) nearest neighbours.
Tensor edge_conv(Graph& g, const StagedParams& p, const ModelConfig& cfg, Tensor descriptors);

// F = channel-concat of F^pixel and the node features replicated over
// their masks (zero where unmasked). Without nodes the second half is zero.
Tensor expand_and_concat(Graph& g, Tensor f_pixel, std::optional<Tensor> enhanced,
                         const NodeSet& nodes);

// Per-pixel class probabilities: 1x1 linear projection then channel softmax.
Tensor segment(Graph& g, const StagedParams& p, const ModelConfig& cfg, Tensor fused);

// Mean of the fused feature over the masked pixels -> [1, channels].
Tensor pooled_feature(Graph& g, Tensor fused, const std::vector<std::uint8_t>& pixel_mask);

// Two-layer sigmoid MLP head. `head` is "main", "car", "ground" or "wall".
Tensor discriminate(Graph& g, const StagedParams& p, const std::string& head, Tensor pooled);

}  // namespace udma
