#include "udma/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "udma/errors.hpp"
#include "udma/rng.hpp"

namespace udma {

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x504b4355;  // "UCKP"
constexpr std::uint32_t kCheckpointVersion = 1;

// [d,H,W] plane stack viewed as one feature row per pixel.
Tensor pixel_rows(Graph&, Tensor planes) {
    const Shape& s = planes.shape();
    return transpose2d(reshape(planes, {s[0], s[1] * s[2]}));
}

}  // namespace

ModelConfig ModelConfig::from(const RunConfig& cfg, int num_classes) {
    ModelConfig m;
    m.feature_dim = cfg.feature_dim;
    m.enc1 = cfg.enc_channels1;
    m.enc2 = cfg.enc_channels2;
    m.num_classes = num_classes;
    m.knn = cfg.knn;
    m.disc_hidden = cfg.disc_hidden;
    m.validate();
    return m;
}

void ModelConfig::validate() const {
    if (in_channels < 1 || feature_dim < 1 || enc1 < 1 || enc2 < 1 || disc_hidden < 1)
        throw ConfigError("model channel counts must be positive");
    if (num_classes < 2) throw ConfigError("segmentation needs at least 2 classes");
    if (knn < 1) throw ConfigError("knn must be >= 1");
}

Param& ParamSet::add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw DomainError("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.push_back({name, shape, std::vector<double>(numel(shape), 0.0)});
    return params_.back();
}

Param& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("unknown parameter: " + name);
    return params_[it->second];
}

const Param& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("unknown parameter: " + name);
    return params_[it->second];
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) != 0; }

std::size_t ParamSet::total_size() const {
    std::size_t n = 0;
    for (const Param& p : params_) n += p.value.size();
    return n;
}

void ParamSet::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    auto put = [&out](const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    std::uint32_t magic = kCheckpointMagic, version = kCheckpointVersion;
    std::uint64_t count = params_.size();
    put(&magic, 4);
    put(&version, 4);
    put(&count, 8);
    for (const Param& p : params_) {
        std::uint32_t name_len = static_cast<std::uint32_t>(p.name.size());
        put(&name_len, 4);
        put(p.name.data(), p.name.size());
        std::uint32_t ndim = static_cast<std::uint32_t>(p.shape.size());
        put(&ndim, 4);
        for (int d : p.shape) {
            std::int64_t v = d;
            put(&v, 8);
        }
        put(p.value.data(), p.value.size() * sizeof(double));
    }
    if (!out) throw IoError("failed writing checkpoint " + path);
}

void ParamSet::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    auto get = [&in, &path](void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in) throw FormatError("checkpoint " + path + " is truncated");
    };
    std::uint32_t magic = 0, version = 0;
    std::uint64_t count = 0;
    get(&magic, 4);
    if (magic != kCheckpointMagic) throw FormatError(path + " is not a checkpoint file");
    get(&version, 4);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    get(&count, 8);
    if (count != params_.size())
        throw FormatError("checkpoint has " + std::to_string(count) + " parameters, expected " +
                          std::to_string(params_.size()));
    for (Param& p : params_) {
        std::uint32_t name_len = 0;
        get(&name_len, 4);
        std::string name(name_len, '\0');
        get(name.data(), name_len);
        if (name != p.name)
            throw FormatError("checkpoint parameter '" + name + "' does not match '" + p.name +
                              "'");
        std::uint32_t ndim = 0;
        get(&ndim, 4);
        Shape shape(ndim);
        for (std::uint32_t k = 0; k < ndim; ++k) {
            std::int64_t v = 0;
            get(&v, 8);
            shape[k] = static_cast<int>(v);
        }
        if (shape != p.shape)
            throw FormatError("checkpoint shape " + shape_str(shape) + " for '" + p.name +
                              "' does not match " + shape_str(p.shape));
        get(p.value.data(), p.value.size() * sizeof(double));
    }
}

Tensor StagedParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DomainError("parameter not staged: " + name);
    return it->second;
}

StagedParams stage(Graph& g, const ParamSet& params,
                   const std::function<bool(const std::string&)>& trainable) {
    StagedParams staged;
    for (const Param& p : params.all()) {
        Tensor t = trainable(p.name) ? g.leaf(p.shape, p.value, true)
                                     : g.constant(p.shape, p.value);
        staged.tensors.emplace(p.name, t);
    }
    return staged;
}

StagedParams stage_all(Graph& g, const ParamSet& params, bool trainable) {
    return stage(g, params, [trainable](const std::string&) { return trainable; });
}

bool is_generator_param(const std::string& name) { return name.rfind("disc_", 0) != 0; }

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamSet set;
    const int d = cfg.feature_dim;
    const int fused = cfg.fused_dim();

    std::uint64_t stream = 0;
    auto he_normal = [&](Param& p, int fan_in) {
        auto rng = make_rng(seed, stream++);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (double& v : p.value) v = dist(rng);
    };
    auto conv = [&](const std::string& name, int out, int in) {
        he_normal(set.add(name + ".w", {out, in, 3, 3}), in * 9);
        set.add(name + ".b", {out});
    };
    auto linear = [&](const std::string& name, int in, int out) {
        he_normal(set.add(name + ".w", {in, out}), in);
        set.add(name + ".b", {out});
    };

    conv("enc1", cfg.enc1, cfg.in_channels);
    conv("enc2", cfg.enc2, cfg.enc1);
    conv("mid", cfg.enc2, cfg.enc2);
    conv("dec1", cfg.enc2, cfg.enc2);
    conv("dec2", d, cfg.enc2);
    linear("node", d, d);
    linear("edge", 2 * d, d);
    linear("seg", fused, cfg.num_classes);
    for (const char* head : {"main", "car", "ground", "wall"}) {
        linear(std::string("disc_") + head + ".1", fused, cfg.disc_hidden);
        linear(std::string("disc_") + head + ".2", cfg.disc_hidden, 1);
    }
    return set;
}

void NodeSet::validate(std::size_t pixels) const {
    if (masks.size() != categories.size() || masks.size() != sizes.size())
        throw ShapeError("node set fields disagree on the node count");
    std::vector<std::uint8_t> covered(pixels, 0);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i].size() != pixels)
            throw ShapeError("node mask " + std::to_string(i) + " has " +
                             std::to_string(masks[i].size()) + " pixels, image has " +
                             std::to_string(pixels));
        std::int64_t count = 0;
        for (std::size_t k = 0; k < pixels; ++k) {
            if (!masks[i][k]) continue;
            ++count;
            if (covered[k]++)
                throw DomainError("node masks overlap at pixel " + std::to_string(k));
        }
        if (count == 0) throw DomainError("node mask " + std::to_string(i) + " is empty");
        if (count != sizes[i])
            throw ShapeError("node size " + std::to_string(sizes[i]) +
                             " does not match mask population " + std::to_string(count));
    }
}

NodeSet source_nodes(const std::vector<ClassId>& labels, int height, int width,
                     const ClassTaxonomy& taxonomy) {
    const std::size_t pixels = static_cast<std::size_t>(height) * width;
    if (labels.size() != pixels)
        throw ShapeError("label map has " + std::to_string(labels.size()) + " entries for " +
                         std::to_string(pixels) + " pixels");
    NodeSet nodes;
    std::vector<std::uint8_t> visited(pixels, 0);
    std::vector<std::size_t> queue;
    for (std::size_t start = 0; start < pixels; ++start) {
        if (visited[start] || labels[start] == taxonomy.ignore_id()) continue;
        const ClassId cls = labels[start];
        std::vector<std::uint8_t> mask(pixels, 0);
        std::int64_t count = 0;
        queue.assign(1, start);
        visited[start] = 1;
        while (!queue.empty()) {
            std::size_t k = queue.back();
            queue.pop_back();
            mask[k] = 1;
            ++count;
            int v = static_cast<int>(k) / width, u = static_cast<int>(k) % width;
            for (int dv = -1; dv <= 1; ++dv) {
                for (int du = -1; du <= 1; ++du) {
                    int nv = v + dv, nu = u + du;
                    if (nv < 0 || nv >= height || nu < 0 || nu >= width) continue;
                    std::size_t nk = static_cast<std::size_t>(nv) * width + nu;
                    if (visited[nk] || labels[nk] != cls) continue;
                    visited[nk] = 1;
                    queue.push_back(nk);
                }
            }
        }
        nodes.masks.push_back(std::move(mask));
        nodes.categories.push_back(taxonomy.category_of(cls));
        nodes.sizes.push_back(count);
    }
    return nodes;
}

NodeSet target_nodes(const RangeImage& img, const ComponentMap& map) {
    const std::size_t pixels = img.pixels();
    if (img.component_id.size() != pixels)
        throw ShapeError("range image is missing its component plane");
    NodeSet nodes;
    for (std::size_t c = 0; c < map.num_components(); ++c) {
        std::vector<std::uint8_t> mask(pixels, 0);
        std::int64_t count = 0;
        for (std::size_t k = 0; k < pixels; ++k) {
            if (img.valid[k] && img.component_id[k] == static_cast<std::int32_t>(c)) {
                mask[k] = 1;
                ++count;
            }
        }
        if (count == 0) continue;  // fully occluded or out-of-fov component
        nodes.masks.push_back(std::move(mask));
        nodes.categories.push_back(map.categories[c]);
        nodes.sizes.push_back(count);
    }
    return nodes;
}

Tensor extract_pixel_features(Graph& g, const StagedParams& p, const ModelConfig& cfg,
                              Tensor input) {
    const Shape& s = input.shape();
    if (s.size() != 3 || s[0] != cfg.in_channels)
        throw ShapeError("feature extraction expects [" + std::to_string(cfg.in_channels) +
                         ",H,W], got " + shape_str(s));
    if (s[1] < 4 || s[2] < 4 || s[1] % 4 != 0 || s[2] % 4 != 0)
        throw ShapeError("spatial dims must be divisible by 4 for two pooling stages, got " +
                         shape_str(s));
    Tensor x = relu(conv2d(input, p.at("enc1.w"), p.at("enc1.b")));
    x = max_pool2d(x);
    x = relu(conv2d(x, p.at("enc2.w"), p.at("enc2.b")));
    x = max_pool2d(x);
    x = relu(conv2d(x, p.at("mid.w"), p.at("mid.b")));
    x = nearest_upsample2x(x);
    x = relu(conv2d(x, p.at("dec1.w"), p.at("dec1.b")));
    x = nearest_upsample2x(x);
    x = relu(conv2d(x, p.at("dec2.w"), p.at("dec2.b")));
    (void)g;
    return x;
}

Tensor construct_nodes(Graph& g, const StagedParams& p, Tensor f_pixel, const NodeSet& nodes) {
    const Shape& s = f_pixel.shape();
    if (s.size() != 3) throw ShapeError("pixel features must be [d,H,W], got " + shape_str(s));
    const std::size_t pixels = static_cast<std::size_t>(s[1]) * s[2];
    nodes.validate(pixels);
    if (nodes.size() == 0) throw DomainError("node construction needs at least one mask");

    Tensor rows = pixel_rows(g, f_pixel);
    std::vector<Tensor> means;
    means.reserve(nodes.size());
    for (const auto& mask : nodes.masks)
        means.push_back(reshape(mean_pool(gather_mask(rows, mask), {0}), {1, s[0]}));
    Tensor pooled = means.size() == 1 ? means[0] : concat(means, 0);
    return add(matmul(pooled, p.at("node.w")), p.at("node.b"));
}

std::vector<std::vector<int>> knn_indices(std::span<const double> rows, int n, int dim, int k) {
    if (n < 1) throw DomainError("knn needs at least one row");
    if (k < 1) throw DomainError("knn needs k >= 1");
    if (rows.size() != static_cast<std::size_t>(n) * dim)
        throw ShapeError("knn row buffer does not match n*dim");
    if (n == 1) return {{0}};

    std::vector<std::vector<int>> out(n);
    std::vector<std::pair<double, int>> dists;
    for (int i = 0; i < n; ++i) {
        dists.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double sq = 0.0;
            for (int c = 0; c < dim; ++c) {
                double diff = rows[i * dim + c] - rows[j * dim + c];
                sq += diff * diff;
            }
            dists.emplace_back(sq, j);
        }
        int take = std::min(k, n - 1);
        std::partial_sort(dists.begin(), dists.begin() + take, dists.end());
        out[i].reserve(take);
        for (int e = 0; e < take; ++e) out[i].push_back(dists[e].second);
    }
    return out;
}

Tensor edge_conv(Graph& g, const StagedParams& p, const ModelConfig& cfg, Tensor descriptors) {
    const Shape& s = descriptors.shape();
    if (s.size() != 2) throw ShapeError("descriptors must be [n,d], got " + shape_str(s));
    const int n = s[0], d = s[1];
    auto nbrs = knn_indices(descriptors.values(), n, d, cfg.knn);
    const int degree = static_cast<int>(nbrs[0].size());
    const int edges = n * degree;

    // Endpoint selection as constant 0/1 matrices keeps the whole edge
    // stage inside differentiable matmuls.
    std::vector<double> from(static_cast<std::size_t>(edges) * n, 0.0);
    std::vector<double> to(static_cast<std::size_t>(edges) * n, 0.0);
    int e = 0;
    for (int i = 0; i < n; ++i) {
        for (int j : nbrs[i]) {
            from[static_cast<std::size_t>(e) * n + i] = 1.0;
            to[static_cast<std::size_t>(e) * n + j] = 1.0;
            ++e;
        }
    }
    Tensor p_i = matmul(g.constant({edges, n}, std::move(from)), descriptors);
    Tensor p_j = matmul(g.constant({edges, n}, std::move(to)), descriptors);
    Tensor feat = concat({p_i, sub(p_j, p_i)}, 1);
    Tensor h = relu(add(matmul(feat, p.at("edge.w")), p.at("edge.b")));
    return max_reduce(reshape(h, {n, degree, d}), {1});
}

Tensor expand_and_concat(Graph& g, Tensor f_pixel, std::optional<Tensor> enhanced,
                         const NodeSet& nodes) {
    const Shape& s = f_pixel.shape();
    if (s.size() != 3) throw ShapeError("pixel features must be [d,H,W], got " + shape_str(s));
    const int hw = s[1] * s[2];
    nodes.validate(static_cast<std::size_t>(hw));

    if (nodes.size() == 0) {
        if (enhanced) throw ShapeError("node features provided without masks");
        Tensor zeros = g.constant(s, std::vector<double>(numel(s), 0.0));
        return concat({f_pixel, zeros}, 0);
    }
    if (!enhanced) throw ShapeError("masks provided without node features");
    const Shape& es = enhanced->shape();
    if (es.size() != 2 || es[0] != static_cast<int>(nodes.size()))
        throw ShapeError("node features " + shape_str(es) + " do not match " +
                         std::to_string(nodes.size()) + " masks");

    std::vector<double> scatter(static_cast<std::size_t>(hw) * nodes.size(), 0.0);
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (int k = 0; k < hw; ++k)
            if (nodes.masks[i][k]) scatter[static_cast<std::size_t>(k) * nodes.size() + i] = 1.0;
    Tensor rows = matmul(g.constant({hw, static_cast<int>(nodes.size())}, std::move(scatter)),
                         *enhanced);
    Tensor f_node = reshape(transpose2d(rows), {es[1], s[1], s[2]});
    return concat({f_pixel, f_node}, 0);
}

Tensor segment(Graph& g, const StagedParams& p, const ModelConfig& cfg, Tensor fused) {
    const Shape& s = fused.shape();
    if (s.size() != 3 || s[0] != cfg.fused_dim())
        throw ShapeError("segmentation expects [" + std::to_string(cfg.fused_dim()) +
                         ",H,W], got " + shape_str(s));
    Tensor logits = add(matmul(pixel_rows(g, fused), p.at("seg.w")), p.at("seg.b"));
    return reshape(transpose2d(softmax(logits)), {cfg.num_classes, s[1], s[2]});
}

Tensor pooled_feature(Graph& g, Tensor fused, const std::vector<std::uint8_t>& pixel_mask) {
    const Shape& s = fused.shape();
    if (s.size() != 3) throw ShapeError("pooling expects [c,H,W], got " + shape_str(s));
    if (pixel_mask.size() != static_cast<std::size_t>(s[1]) * s[2])
        throw ShapeError("pixel mask does not match the image size");
    bool any = false;
    for (std::uint8_t m : pixel_mask) any = any || m != 0;
    if (!any) throw DomainError("cannot pool over an empty pixel mask");
    return reshape(mean_pool(gather_mask(pixel_rows(g, fused), pixel_mask), {0}), {1, s[0]});
}

Tensor discriminate(Graph& g, const StagedParams& p, const std::string& head, Tensor pooled) {
    if (head != "main" && head != "car" && head != "ground" && head != "wall")
        throw DomainError("unknown discriminator head: " + head);
    const std::string prefix = "disc_" + head;
    Tensor h = relu(add(matmul(pooled, p.at(prefix + ".1.w")), p.at(prefix + ".1.b")));
    (void)g;
    return sigmoid(add(matmul(h, p.at(prefix + ".2.w")), p.at(prefix + ".2.b")));
}

}  // namespace udma
