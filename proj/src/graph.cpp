#include "udma/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "udma/errors.hpp"
#include "udma/kernels.hpp"
#include "udma/parallel.hpp"
#include "udma/rng.hpp"

namespace udma {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

namespace {

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::Matmul: return "matmul";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Relu: return "relu";
        case OpKind::MaxPool2d: return "max_pool2d";
        case OpKind::Upsample2x: return "nearest_upsample2x";
        case OpKind::SumReduce: return "sum_reduce";
        case OpKind::MeanPool: return "mean_pool";
        case OpKind::MaxReduce: return "max_reduce";
        case OpKind::Concat: return "concat";
        case OpKind::Softmax: return "softmax";
        case OpKind::Log: return "log";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::GatherMask: return "gather_mask";
        case OpKind::Reshape: return "reshape";
        case OpKind::Transpose2d: return "transpose2d";
    }
    return "?";
}

std::vector<std::int64_t> strides_of(const Shape& s) {
    std::vector<std::int64_t> st(s.size());
    std::int64_t acc = 1;
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        st[d] = acc;
        acc *= s[d];
    }
    return st;
}

void check_finite(const std::vector<double>& data, OpKind op) {
    for (double v : data)
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value produced by ") + op_name(op));
}

Graph* common_graph(const Tensor& a, const Tensor& b) {
    if (a.graph == nullptr || a.graph != b.graph)
        throw ShapeError("tensors belong to different graphs");
    return a.graph;
}

// Broadcasting layout for add/mul: right-aligned shapes, dims equal or 1.
struct BroadcastPlan {
    Shape out;
    std::vector<std::int64_t> out_strides;
    std::vector<std::int64_t> a_strides;  // 0 on broadcast dims
    std::vector<std::int64_t> b_strides;
    bool a_identity = false;  // flat out index == flat a index
    bool b_identity = false;
};

BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1), out(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
    for (std::size_t d = 0; d < rank; ++d) {
        if (pa[d] == pb[d]) out[d] = pa[d];
        else if (pa[d] == 1) out[d] = pb[d];
        else if (pb[d] == 1) out[d] = pa[d];
        else
            throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                             " and " + shape_str(b));
    }
    BroadcastPlan plan;
    plan.out = out;
    plan.out_strides = strides_of(out);
    auto sa = strides_of(pa);
    auto sb = strides_of(pb);
    plan.a_strides.resize(rank);
    plan.b_strides.resize(rank);
    bool a_bcast = false, b_bcast = false;
    for (std::size_t d = 0; d < rank; ++d) {
        bool ab = pa[d] == 1 && out[d] > 1;
        bool bb = pb[d] == 1 && out[d] > 1;
        plan.a_strides[d] = ab ? 0 : sa[d];
        plan.b_strides[d] = bb ? 0 : sb[d];
        a_bcast |= ab;
        b_bcast |= bb;
    }
    plan.a_identity = !a_bcast;
    plan.b_identity = !b_bcast;
    return plan;
}

inline void decompose(std::int64_t flat, const std::vector<std::int64_t>& out_strides,
                      const std::vector<std::int64_t>& a_strides,
                      const std::vector<std::int64_t>& b_strides, std::int64_t& ia,
                      std::int64_t& ib) {
    std::int64_t rem = flat;
    ia = ib = 0;
    for (std::size_t d = 0; d < out_strides.size(); ++d) {
        std::int64_t c = rem / out_strides[d];
        rem -= c * out_strides[d];
        ia += c * a_strides[d];
        ib += c * b_strides[d];
    }
}

// Layout for axis-set reductions.
struct ReducePlan {
    Shape out;                       // reduced dims dropped; {1} if all reduced
    std::int64_t count = 1;          // reduced subspace size
    std::vector<std::int64_t> keep_in_strides;
    std::vector<std::int64_t> keep_out_strides;
    std::vector<std::int64_t> red_in_strides;
    std::vector<std::int64_t> red_sizes;
    std::vector<std::int64_t> in_to_out;  // per input dim: out stride or 0
};

ReducePlan reduce_plan(const Shape& in, std::vector<int> axes, const char* op) {
    std::set<int> ax;
    for (int a : axes) {
        if (a < 0 || a >= static_cast<int>(in.size()))
            throw ShapeError(std::string(op) + ": axis " + std::to_string(a) +
                             " out of range for shape " + shape_str(in));
        ax.insert(a);
    }
    if (ax.empty()) throw ShapeError(std::string(op) + ": empty axis set");
    ReducePlan plan;
    auto in_strides = strides_of(in);
    for (std::size_t d = 0; d < in.size(); ++d) {
        if (ax.count(static_cast<int>(d))) {
            plan.red_in_strides.push_back(in_strides[d]);
            plan.red_sizes.push_back(in[d]);
            plan.count *= in[d];
        } else {
            plan.out.push_back(in[d]);
            plan.keep_in_strides.push_back(in_strides[d]);
        }
    }
    if (plan.out.empty()) plan.out = {1};
    plan.keep_out_strides = strides_of(plan.out);
    if (plan.keep_in_strides.empty()) plan.keep_out_strides.clear();
    plan.in_to_out.assign(in.size(), 0);
    std::size_t kept = 0;
    for (std::size_t d = 0; d < in.size(); ++d)
        if (!ax.count(static_cast<int>(d)))
            plan.in_to_out[d] = plan.keep_out_strides.empty() ? 0 : plan.keep_out_strides[kept++];
    return plan;
}

// Base input offset for a given output element.
inline std::int64_t reduce_base(const ReducePlan& p, std::int64_t out_flat) {
    std::int64_t rem = out_flat, base = 0;
    for (std::size_t d = 0; d < p.keep_out_strides.size(); ++d) {
        std::int64_t c = rem / p.keep_out_strides[d];
        rem -= c * p.keep_out_strides[d];
        base += c * p.keep_in_strides[d];
    }
    return base;
}

// Walks the reduced subspace of one output element in row-major order.
template <typename Fn>
inline void reduce_walk(const ReducePlan& p, std::int64_t base, Fn&& fn) {
    std::size_t nred = p.red_sizes.size();
    std::vector<std::int64_t> counter(nred, 0);
    std::int64_t idx = base;
    for (std::int64_t k = 0;; ++k) {
        fn(idx);
        std::int64_t d = static_cast<std::int64_t>(nred) - 1;
        for (; d >= 0; --d) {
            idx += p.red_in_strides[d];
            if (++counter[d] < p.red_sizes[d]) break;
            idx -= p.red_in_strides[d] * p.red_sizes[d];
            counter[d] = 0;
        }
        if (d < 0) break;
    }
}

// Maps input flat index -> output flat index under a reduce plan.
inline std::int64_t reduce_out_index(const ReducePlan& p, const Shape& in,
                                     const std::vector<std::int64_t>& in_strides,
                                     std::int64_t in_flat) {
    std::int64_t rem = in_flat, out = 0;
    for (std::size_t d = 0; d < in.size(); ++d) {
        std::int64_t c = rem / in_strides[d];
        rem -= c * in_strides[d];
        out += c * p.in_to_out[d];
    }
    return out;
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

const Shape& Tensor::shape() const { return graph->node(id).shape; }
std::int64_t Tensor::size() const { return numel(shape()); }
bool Tensor::requires_grad() const { return graph->node(id).requires_grad; }
std::span<const double> Tensor::values() const { return graph->node(id).data; }

std::span<const double> Tensor::grad() const {
    const Node& n = graph->node(id);
    if (!n.requires_grad) throw ShapeError("grad() on a tensor without requires_grad");
    return n.grad;
}

double Tensor::value() const {
    const Node& n = graph->node(id);
    if (numel(n.shape) != 1)
        throw ShapeError("value() on non-scalar tensor of shape " + shape_str(n.shape));
    return n.data[0];
}

// ---- Graph ------------------------------------------------------------------

Tensor Graph::emplace(Node&& n) {
    if (static_cast<std::int64_t>(n.data.size()) != numel(n.shape))
        throw ShapeError(std::string(op_name(n.op)) + ": data size " +
                         std::to_string(n.data.size()) + " does not match shape " +
                         shape_str(n.shape));
    check_finite(n.data, n.op);
    if (n.requires_grad) n.grad.assign(n.data.size(), 0.0);
    nodes_.push_back(std::make_unique<Node>(std::move(n)));
    return Tensor{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Graph::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    Node n;
    n.op = OpKind::Leaf;
    n.shape = std::move(shape);
    n.data = std::move(data);
    n.requires_grad = requires_grad;
    return emplace(std::move(n));
}

Tensor Graph::constant(Shape shape, std::vector<double> data) {
    return leaf(std::move(shape), std::move(data), false);
}

Tensor Graph::scalar(double v) { return constant({1}, {v}); }

Tensor Graph::full(Shape shape, double v, bool requires_grad) {
    std::vector<double> data(numel(shape), v);
    return leaf(std::move(shape), std::move(data), requires_grad);
}

void Graph::zero_grad() {
    for (auto& n : nodes_)
        if (n->requires_grad) std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

// ---- forward ops -------------------------------------------------------------

namespace {

Tensor binary_op(Tensor a, Tensor b, OpKind op) {
    Graph* g = common_graph(a, b);
    const Node& na = g->node(a.id);
    const Node& nb = g->node(b.id);
    BroadcastPlan plan = broadcast_plan(na.shape, nb.shape, op_name(op));
    std::vector<double> out(numel(plan.out));
    const double* pa = na.data.data();
    const double* pb = nb.data.data();
    double* po = out.data();
    const bool is_add = op == OpKind::Add;
    parallel_for(static_cast<std::int64_t>(out.size()), [&](std::int64_t e) {
        std::int64_t ia, ib;
        decompose(e, plan.out_strides, plan.a_strides, plan.b_strides, ia, ib);
        po[e] = is_add ? pa[ia] + pb[ib] : pa[ia] * pb[ib];
    });
    Node n;
    n.op = op;
    n.shape = plan.out;
    n.data = std::move(out);
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.inputs = {a.id, b.id};
    return g->emplace(std::move(n));
}

}  // namespace

Tensor add(Tensor a, Tensor b) { return binary_op(a, b, OpKind::Add); }
Tensor mul(Tensor a, Tensor b) { return binary_op(a, b, OpKind::Mul); }

Tensor matmul(Tensor a, Tensor b) {
    Graph* g = common_graph(a, b);
    const Node& na = g->node(a.id);
    const Node& nb = g->node(b.id);
    if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(na.shape) + " and " +
                         shape_str(nb.shape));
    int m = na.shape[0], k = na.shape[1], nn = nb.shape[1];
    std::vector<double> out(static_cast<std::int64_t>(m) * nn);
    kernels::matmul(na.data.data(), nb.data.data(), out.data(), m, k, nn);
    Node n;
    n.op = OpKind::Matmul;
    n.shape = {m, nn};
    n.data = std::move(out);
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.inputs = {a.id, b.id};
    return g->emplace(std::move(n));
}

Tensor conv2d(Tensor x, Tensor w, Tensor bias) {
    Graph* g = common_graph(x, w);
    common_graph(x, bias);
    const Node& nx = g->node(x.id);
    const Node& nw = g->node(w.id);
    const Node& nb = g->node(bias.id);
    if (nx.shape.size() != 3)
        throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(nx.shape));
    if (nw.shape.size() != 4 || nw.shape[2] != 3 || nw.shape[3] != 3 ||
        nw.shape[1] != nx.shape[0])
        throw ShapeError("conv2d: weight must be [Cout," + std::to_string(nx.shape[0]) +
                         ",3,3], got " + shape_str(nw.shape));
    if (nb.shape.size() != 1 || nb.shape[0] != nw.shape[0])
        throw ShapeError("conv2d: bias must be [" + std::to_string(nw.shape[0]) + "], got " +
                         shape_str(nb.shape));
    int cin = nx.shape[0], h = nx.shape[1], wd = nx.shape[2], cout = nw.shape[0];
    std::vector<double> out(static_cast<std::int64_t>(cout) * h * wd);
    kernels::conv2d(nx.data.data(), nw.data.data(), nb.data.data(), out.data(), cin, h, wd, cout);
    Node n;
    n.op = OpKind::Conv2d;
    n.shape = {cout, h, wd};  // spatial shape preserved: 3x3 with pad 1
    n.data = std::move(out);
    n.requires_grad = nx.requires_grad || nw.requires_grad || nb.requires_grad;
    n.inputs = {x.id, w.id, bias.id};
    return g->emplace(std::move(n));
}

Tensor relu(Tensor x) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    std::vector<double> out(nx.data.size());
    const double* px = nx.data.data();
    double* po = out.data();
    parallel_for(static_cast<std::int64_t>(out.size()),
                 [&](std::int64_t i) { po[i] = px[i] > 0.0 ? px[i] : 0.0; });
    Node n;
    n.op = OpKind::Relu;
    n.shape = nx.shape;
    n.data = std::move(out);
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    return g->emplace(std::move(n));
}

Tensor max_pool2d(Tensor x) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    if (nx.shape.size() != 3)
        throw ShapeError("max_pool2d: input must be [C,H,W], got " + shape_str(nx.shape));
    int c = nx.shape[0], h = nx.shape[1], w = nx.shape[2];
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("max_pool2d: spatial dims must be even, got " + shape_str(nx.shape));
    int oh = h / 2, ow = w / 2;
    std::vector<double> out(static_cast<std::int64_t>(c) * oh * ow);
    std::vector<std::int64_t> argmax(out.size());
    const double* px = nx.data.data();
    parallel_for(static_cast<std::int64_t>(out.size()), [&](std::int64_t o) {
        std::int64_t ch = o / (static_cast<std::int64_t>(oh) * ow);
        std::int64_t rem = o % (static_cast<std::int64_t>(oh) * ow);
        std::int64_t p = rem / ow, q = rem % ow;
        std::int64_t base = (ch * h + 2 * p) * w + 2 * q;
        // ties keep the first element in scan order
        std::int64_t best = base;
        double bv = px[base];
        for (std::int64_t dy = 0; dy < 2; ++dy)
            for (std::int64_t dx = 0; dx < 2; ++dx) {
                std::int64_t idx = base + dy * w + dx;
                if (px[idx] > bv) {
                    bv = px[idx];
                    best = idx;
                }
            }
        out[o] = bv;
        argmax[o] = best;
    });
    Node n;
    n.op = OpKind::MaxPool2d;
    n.shape = {c, oh, ow};
    n.data = std::move(out);
    n.aux_i = std::move(argmax);
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    return g->emplace(std::move(n));
}

Tensor nearest_upsample2x(Tensor x) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    if (nx.shape.size() != 3)
        throw ShapeError("nearest_upsample2x: input must be [C,H,W], got " + shape_str(nx.shape));
    int c = nx.shape[0], h = nx.shape[1], w = nx.shape[2];
    int oh = 2 * h, ow = 2 * w;
    std::vector<double> out(static_cast<std::int64_t>(c) * oh * ow);
    const double* px = nx.data.data();
    parallel_for(static_cast<std::int64_t>(out.size()), [&](std::int64_t o) {
        std::int64_t ch = o / (static_cast<std::int64_t>(oh) * ow);
        std::int64_t rem = o % (static_cast<std::int64_t>(oh) * ow);
        std::int64_t p = rem / ow, q = rem % ow;
        out[o] = px[(ch * h + p / 2) * w + q / 2];
    });
    Node n;
    n.op = OpKind::Upsample2x;
    n.shape = {c, oh, ow};
    n.data = std::move(out);
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    return g->emplace(std::move(n));
}

namespace {

Tensor reduce_op(Tensor x, std::vector<int> axes, OpKind op) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    ReducePlan plan = reduce_plan(nx.shape, axes, op_name(op));
    std::vector<double> out(numel(plan.out));
    std::vector<std::int64_t> argmax;
    const double* px = nx.data.data();
    const double inv = 1.0 / static_cast<double>(plan.count);
    if (op == OpKind::MaxReduce) {
        argmax.resize(out.size());
        parallel_for(static_cast<std::int64_t>(out.size()), [&](std::int64_t o) {
            std::int64_t base = reduce_base(plan, o);
            double best = -std::numeric_limits<double>::infinity();
            std::int64_t best_idx = base;
            reduce_walk(plan, base, [&](std::int64_t idx) {
                if (px[idx] > best) {
                    best = px[idx];
                    best_idx = idx;
                }
            });
            out[o] = best;
            argmax[o] = best_idx;
        });
    } else {
        parallel_for(static_cast<std::int64_t>(out.size()), [&](std::int64_t o) {
            std::int64_t base = reduce_base(plan, o);
            double acc = 0.0;
            reduce_walk(plan, base, [&](std::int64_t idx) { acc += px[idx]; });
            out[o] = op == OpKind::MeanPool ? acc * inv : acc;
        });
    }
    Node n;
    n.op = op;
    n.shape = plan.out;
    n.data = std::move(out);
    n.aux_i = std::move(argmax);
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    // axes saved for backward
    for (int a : axes) n.aux_i.push_back(-1 - a);
    if (op != OpKind::MaxReduce) {
        n.aux_i.clear();
        for (int a : axes) n.aux_i.push_back(a);
    }
    return g->emplace(std::move(n));
}

std::vector<int> reduce_axes_of(const Node& n) {
    std::vector<int> axes;
    if (n.op == OpKind::MaxReduce) {
        for (std::int64_t v : n.aux_i)
            if (v < 0) axes.push_back(static_cast<int>(-1 - v));
    } else {
        for (std::int64_t v : n.aux_i) axes.push_back(static_cast<int>(v));
    }
    return axes;
}

}  // namespace

Tensor sum_reduce(Tensor x, std::vector<int> axes) {
    return reduce_op(x, std::move(axes), OpKind::SumReduce);
}
Tensor mean_pool(Tensor x, std::vector<int> axes) {
    return reduce_op(x, std::move(axes), OpKind::MeanPool);
}
Tensor max_reduce(Tensor x, std::vector<int> axes) {
    return reduce_op(x, std::move(axes), OpKind::MaxReduce);
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    Graph* g = xs[0].graph;
    const Shape& first = g->node(xs[0].id).shape;
    if (axis < 0 || axis >= static_cast<int>(first.size()))
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    bool req = false;
    for (const Tensor& t : xs) {
        common_graph(xs[0], t);
        const Shape& s = g->node(t.id).shape;
        if (s.size() != first.size())
            throw ShapeError("concat: rank mismatch between " + shape_str(first) + " and " +
                             shape_str(s));
        for (std::size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != axis && s[d] != first[d])
                throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " +
                                 shape_str(s));
        out_shape[axis] += s[axis];
        req |= t.requires_grad();
    }
    std::int64_t inner = 1;
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
    std::int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    std::vector<double> out(numel(out_shape));
    std::int64_t axis_off = 0;
    for (const Tensor& t : xs) {
        const Node& nt = g->node(t.id);
        std::int64_t ax = nt.shape[axis];
        const double* pt = nt.data.data();
        double* po = out.data();
        std::int64_t out_axis = out_shape[axis];
        parallel_for(outer * ax * inner, [&](std::int64_t e) {
            std::int64_t o = e / (ax * inner);
            std::int64_t rem = e % (ax * inner);
            po[(o * out_axis + axis_off) * inner + rem] = pt[e];
        });
        axis_off += ax;
    }
    Node n;
    n.op = OpKind::Concat;
    n.shape = out_shape;
    n.data = std::move(out);
    n.requires_grad = req;
    for (const Tensor& t : xs) n.inputs.push_back(t.id);
    n.aux_i = {axis};
    return g->emplace(std::move(n));
}

Tensor softmax(Tensor x) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    if (nx.shape.empty()) throw ShapeError("softmax: scalar input");
    std::int64_t cols = nx.shape.back();
    std::int64_t rows = numel(nx.shape) / cols;
    std::vector<double> out(nx.data.size());
    const double* px = nx.data.data();
    parallel_for(rows, [&](std::int64_t r) {
        const double* row = px + r * cols;
        double* orow = out.data() + r * cols;
        double mx = row[0];
        for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            orow[c] = std::exp(row[c] - mx);
            sum += orow[c];
        }
        double inv = 1.0 / sum;
        for (std::int64_t c = 0; c < cols; ++c) orow[c] *= inv;
    });
    Node n;
    n.op = OpKind::Softmax;
    n.shape = nx.shape;
    n.data = std::move(out);
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    return g->emplace(std::move(n));
}

Tensor log(Tensor x) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    std::vector<double> out(nx.data.size());
    const double* px = nx.data.data();
    parallel_for(static_cast<std::int64_t>(out.size()),
                 [&](std::int64_t i) { out[i] = std::log(px[i]); });
    Node n;
    n.op = OpKind::Log;
    n.shape = nx.shape;
    n.data = std::move(out);
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    return g->emplace(std::move(n));
}

Tensor sigmoid(Tensor x) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    std::vector<double> out(nx.data.size());
    const double* px = nx.data.data();
    parallel_for(static_cast<std::int64_t>(out.size()),
                 [&](std::int64_t i) { out[i] = 1.0 / (1.0 + std::exp(-px[i])); });
    Node n;
    n.op = OpKind::Sigmoid;
    n.shape = nx.shape;
    n.data = std::move(out);
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    return g->emplace(std::move(n));
}

Tensor gather_mask(Tensor x, const std::vector<std::uint8_t>& row_mask) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    if (nx.shape.size() != 2)
        throw ShapeError("gather_mask: input must be 2D, got " + shape_str(nx.shape));
    if (static_cast<std::int64_t>(row_mask.size()) != nx.shape[0])
        throw ShapeError("gather_mask: mask length " + std::to_string(row_mask.size()) +
                         " does not match rows of " + shape_str(nx.shape));
    std::vector<std::int64_t> rows;
    for (std::size_t r = 0; r < row_mask.size(); ++r)
        if (row_mask[r]) rows.push_back(static_cast<std::int64_t>(r));
    std::int64_t m = static_cast<std::int64_t>(rows.size());
    std::int64_t c = nx.shape[1];
    std::vector<double> out(m * c);
    const double* px = nx.data.data();
    parallel_for(m, [&](std::int64_t r) {
        const double* src = px + rows[r] * c;
        double* dst = out.data() + r * c;
        for (std::int64_t j = 0; j < c; ++j) dst[j] = src[j];
    });
    Node n;
    n.op = OpKind::GatherMask;
    n.shape = {static_cast<int>(m), static_cast<int>(c)};
    n.data = std::move(out);
    n.aux_i = std::move(rows);
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    return g->emplace(std::move(n));
}

Tensor reshape(Tensor x, Shape shape) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    if (numel(shape) != numel(nx.shape))
        throw ShapeError("reshape: cannot view " + shape_str(nx.shape) + " as " +
                         shape_str(shape));
    Node n;
    n.op = OpKind::Reshape;
    n.shape = std::move(shape);
    n.data = nx.data;
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    return g->emplace(std::move(n));
}

Tensor transpose2d(Tensor x) {
    Graph* g = x.graph;
    const Node& nx = g->node(x.id);
    if (nx.shape.size() != 2)
        throw ShapeError("transpose2d: input must be 2D, got " + shape_str(nx.shape));
    std::int64_t a = nx.shape[0], b = nx.shape[1];
    std::vector<double> out(a * b);
    const double* px = nx.data.data();
    parallel_for(b, [&](std::int64_t j) {
        for (std::int64_t i = 0; i < a; ++i) out[j * a + i] = px[i * b + j];
    });
    Node n;
    n.op = OpKind::Transpose2d;
    n.shape = {static_cast<int>(b), static_cast<int>(a)};
    n.data = std::move(out);
    n.requires_grad = nx.requires_grad;
    n.inputs = {x.id};
    return g->emplace(std::move(n));
}

Tensor scale(Tensor x, double c) { return mul(x, x.graph->scalar(c)); }
Tensor sub(Tensor a, Tensor b) { return add(a, scale(b, -1.0)); }

Tensor clamp_min(Tensor x, double lo) {
    Graph* g = x.graph;
    return add(relu(add(x, g->scalar(-lo))), g->scalar(lo));
}

// ---- backward ---------------------------------------------------------------

void Graph::backward(Tensor loss) {
    if (loss.graph != this) throw ShapeError("backward: loss from another graph");
    const Node& ln = node(loss.id);
    if (numel(ln.shape) != 1)
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(ln.shape));
    if (!ln.requires_grad) return;

    // Per-call scratch; final sums are added into node grads so repeated
    // calls accumulate.
    std::vector<std::vector<double>> scr(loss.id + 1);
    std::vector<char> touched(loss.id + 1, 0);
    auto ensure = [&](int id) -> std::vector<double>& {
        if (!touched[id]) {
            scr[id].assign(node(id).data.size(), 0.0);
            touched[id] = 1;
        }
        return scr[id];
    };
    ensure(loss.id)[0] = 1.0;

    for (int id = loss.id; id >= 0; --id) {
        if (!touched[id]) continue;
        Node& n = node(id);
        if (!n.requires_grad) continue;
        const std::vector<double>& up = scr[id];
        switch (n.op) {
            case OpKind::Leaf:
                break;
            case OpKind::Add:
            case OpKind::Mul: {
                const Node& na = node(n.inputs[0]);
                const Node& nb = node(n.inputs[1]);
                BroadcastPlan plan = broadcast_plan(na.shape, nb.shape, op_name(n.op));
                bool is_add = n.op == OpKind::Add;
                for (int side = 0; side < 2; ++side) {
                    const Node& tgt = side == 0 ? na : nb;
                    if (!tgt.requires_grad) continue;
                    std::vector<double>& dst = ensure(n.inputs[side]);
                    const double* other = (side == 0 ? nb : na).data.data();
                    bool identity = side == 0 ? plan.a_identity : plan.b_identity;
                    if (identity && is_add) {
                        double* pd = dst.data();
                        parallel_for(static_cast<std::int64_t>(up.size()),
                                     [&](std::int64_t e) { pd[e] += up[e]; });
                    } else if (identity) {
                        double* pd = dst.data();
                        const auto& os = plan.out_strides;
                        const auto& ss = side == 0 ? plan.a_strides : plan.b_strides;
                        const auto& ts = side == 0 ? plan.b_strides : plan.a_strides;
                        parallel_for(static_cast<std::int64_t>(up.size()), [&](std::int64_t e) {
                            std::int64_t is, it;
                            decompose(e, os, ss, ts, is, it);
                            pd[is] += up[e] * other[it];
                        });
                    } else {
                        // broadcast side accumulates; serial keeps it exact
                        // and deterministic
                        for (std::int64_t e = 0; e < static_cast<std::int64_t>(up.size()); ++e) {
                            std::int64_t ia, ib;
                            decompose(e, plan.out_strides, plan.a_strides, plan.b_strides, ia,
                                      ib);
                            std::int64_t is = side == 0 ? ia : ib;
                            std::int64_t it = side == 0 ? ib : ia;
                            dst[is] += is_add ? up[e] : up[e] * other[it];
                        }
                    }
                }
                break;
            }
            case OpKind::Matmul: {
                const Node& na = node(n.inputs[0]);
                const Node& nb = node(n.inputs[1]);
                int m = na.shape[0], k = na.shape[1], nn = nb.shape[1];
                if (na.requires_grad)
                    kernels::matmul_bwd_a(up.data(), nb.data.data(), ensure(n.inputs[0]).data(),
                                          m, k, nn);
                if (nb.requires_grad)
                    kernels::matmul_bwd_b(na.data.data(), up.data(), ensure(n.inputs[1]).data(),
                                          m, k, nn);
                break;
            }
            case OpKind::Conv2d: {
                const Node& nx = node(n.inputs[0]);
                const Node& nw = node(n.inputs[1]);
                const Node& nb = node(n.inputs[2]);
                int cin = nx.shape[0], h = nx.shape[1], wd = nx.shape[2], cout = nw.shape[0];
                if (nx.requires_grad)
                    kernels::conv2d_bwd_input(up.data(), nw.data.data(),
                                              ensure(n.inputs[0]).data(), cin, h, wd, cout);
                if (nw.requires_grad || nb.requires_grad) {
                    std::vector<double>& dw = ensure(n.inputs[1]);
                    std::vector<double>& db = ensure(n.inputs[2]);
                    kernels::conv2d_bwd_weight(nx.data.data(), up.data(), dw.data(), db.data(),
                                               cin, h, wd, cout);
                }
                break;
            }
            case OpKind::Relu: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                std::vector<double>& dst = ensure(n.inputs[0]);
                const double* px = nx.data.data();
                double* pd = dst.data();
                parallel_for(static_cast<std::int64_t>(up.size()), [&](std::int64_t i) {
                    if (px[i] > 0.0) pd[i] += up[i];
                });
                break;
            }
            case OpKind::MaxPool2d:
            case OpKind::MaxReduce: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                std::vector<double>& dst = ensure(n.inputs[0]);
                double* pd = dst.data();
                // argmax slots are distinct across outputs
                parallel_for(static_cast<std::int64_t>(up.size()),
                             [&](std::int64_t o) { pd[n.aux_i[o]] += up[o]; });
                break;
            }
            case OpKind::Upsample2x: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                std::vector<double>& dst = ensure(n.inputs[0]);
                int h = nx.shape[1], w = nx.shape[2];
                int ow = 2 * w;
                double* pd = dst.data();
                parallel_for(static_cast<std::int64_t>(dst.size()), [&](std::int64_t i) {
                    std::int64_t ch = i / (static_cast<std::int64_t>(h) * w);
                    std::int64_t rem = i % (static_cast<std::int64_t>(h) * w);
                    std::int64_t p = rem / w, q = rem % w;
                    std::int64_t base = (ch * 2 * h + 2 * p) * ow + 2 * q;
                    pd[i] += up[base] + up[base + 1] + up[base + ow] + up[base + ow + 1];
                });
                break;
            }
            case OpKind::SumReduce:
            case OpKind::MeanPool: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                ReducePlan plan = reduce_plan(nx.shape, reduce_axes_of(n), op_name(n.op));
                double f = n.op == OpKind::MeanPool ? 1.0 / static_cast<double>(plan.count) : 1.0;
                std::vector<double>& dst = ensure(n.inputs[0]);
                double* pd = dst.data();
                auto in_strides = strides_of(nx.shape);
                parallel_for(static_cast<std::int64_t>(dst.size()), [&](std::int64_t i) {
                    pd[i] += f * up[reduce_out_index(plan, nx.shape, in_strides, i)];
                });
                break;
            }
            case OpKind::Concat: {
                int axis = static_cast<int>(n.aux_i[0]);
                std::int64_t inner = 1;
                for (std::size_t d = axis + 1; d < n.shape.size(); ++d) inner *= n.shape[d];
                std::int64_t out_axis = n.shape[axis];
                std::int64_t axis_off = 0;
                for (int in_id : n.inputs) {
                    const Node& nt = node(in_id);
                    std::int64_t ax = nt.shape[axis];
                    if (nt.requires_grad) {
                        std::vector<double>& dst = ensure(in_id);
                        double* pd = dst.data();
                        std::int64_t off = axis_off;
                        parallel_for(static_cast<std::int64_t>(dst.size()), [&](std::int64_t e) {
                            std::int64_t o = e / (ax * inner);
                            std::int64_t rem = e % (ax * inner);
                            pd[e] += up[(o * out_axis + off) * inner + rem];
                        });
                    }
                    axis_off += ax;
                }
                break;
            }
            case OpKind::Softmax: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                std::vector<double>& dst = ensure(n.inputs[0]);
                std::int64_t cols = n.shape.back();
                std::int64_t rows = static_cast<std::int64_t>(up.size()) / cols;
                const double* y = n.data.data();
                double* pd = dst.data();
                parallel_for(rows, [&](std::int64_t r) {
                    const double* yr = y + r * cols;
                    const double* ur = up.data() + r * cols;
                    double dot = 0.0;
                    for (std::int64_t c = 0; c < cols; ++c) dot += ur[c] * yr[c];
                    double* dr = pd + r * cols;
                    for (std::int64_t c = 0; c < cols; ++c) dr[c] += yr[c] * (ur[c] - dot);
                });
                break;
            }
            case OpKind::Log: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                std::vector<double>& dst = ensure(n.inputs[0]);
                const double* px = nx.data.data();
                double* pd = dst.data();
                parallel_for(static_cast<std::int64_t>(up.size()),
                             [&](std::int64_t i) { pd[i] += up[i] / px[i]; });
                break;
            }
            case OpKind::Sigmoid: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                std::vector<double>& dst = ensure(n.inputs[0]);
                const double* y = n.data.data();
                double* pd = dst.data();
                parallel_for(static_cast<std::int64_t>(up.size()),
                             [&](std::int64_t i) { pd[i] += up[i] * y[i] * (1.0 - y[i]); });
                break;
            }
            case OpKind::GatherMask: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                std::vector<double>& dst = ensure(n.inputs[0]);
                std::int64_t c = nx.shape[1];
                std::int64_t m = n.shape[0];
                double* pd = dst.data();
                parallel_for(m, [&](std::int64_t r) {
                    double* drow = pd + n.aux_i[r] * c;
                    const double* urow = up.data() + r * c;
                    for (std::int64_t j = 0; j < c; ++j) drow[j] += urow[j];
                });
                break;
            }
            case OpKind::Reshape: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                std::vector<double>& dst = ensure(n.inputs[0]);
                double* pd = dst.data();
                parallel_for(static_cast<std::int64_t>(up.size()),
                             [&](std::int64_t i) { pd[i] += up[i]; });
                break;
            }
            case OpKind::Transpose2d: {
                const Node& nx = node(n.inputs[0]);
                if (!nx.requires_grad) break;
                std::vector<double>& dst = ensure(n.inputs[0]);
                std::int64_t a = nx.shape[0], b = nx.shape[1];
                double* pd = dst.data();
                parallel_for(a, [&](std::int64_t i) {
                    for (std::int64_t j = 0; j < b; ++j) pd[i * b + j] += up[j * a + i];
                });
                break;
            }
        }
    }

    for (int id = 0; id <= loss.id; ++id) {
        if (!touched[id]) continue;
        Node& n = node(id);
        if (!n.requires_grad) continue;
        const std::vector<double>& s = scr[id];
        for (std::size_t i = 0; i < s.size(); ++i) {
            n.grad[i] += s[i];
            if (!std::isfinite(n.grad[i]))
                throw NumericError(std::string("non-finite gradient at ") + op_name(n.op) +
                                   " node " + std::to_string(id));
        }
    }
}

// ---- grad_check ---------------------------------------------------------------

GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> x0, std::span<const double> analytic_grad,
                           double h, double tol, double floor, std::int64_t max_coords,
                           std::uint64_t sample_seed) {
    if (x0.size() != analytic_grad.size())
        throw ShapeError("grad_check: gradient size does not match input size");
    std::int64_t n = static_cast<std::int64_t>(x0.size());
    std::vector<std::int64_t> coords;
    if (max_coords < 0 || max_coords >= n) {
        coords.resize(n);
        for (std::int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
        std::set<std::int64_t> picked;
        auto rng = make_rng(sample_seed, 0x67c0de);
        std::uniform_int_distribution<std::int64_t> dist(0, n - 1);
        while (static_cast<std::int64_t>(picked.size()) < max_coords) picked.insert(dist(rng));
        coords.assign(picked.begin(), picked.end());
    }
    std::vector<double> x(x0.begin(), x0.end());
    GradCheckReport rep;
    for (std::int64_t c : coords) {
        double keep = x[c];
        x[c] = keep + h;
        double fp = f(x);
        x[c] = keep - h;
        double fm = f(x);
        x[c] = keep;
        double fd = (fp - fm) / (2.0 * h);
        double abs_err = std::abs(analytic_grad[c] - fd);
        double rel = abs_err / std::max({std::abs(analytic_grad[c]), std::abs(fd), floor});
        rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
    }
    rep.coords_checked = static_cast<std::int64_t>(coords.size());
    rep.pass = rep.max_rel_error <= tol;
    return rep;
}

}  // namespace udma
