#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace udma {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class OpKind : std::uint8_t {
    Leaf,
    Add,
    Mul,
    Matmul,
    Conv2d,
    Relu,
    MaxPool2d,
    Upsample2x,
    SumReduce,
    MeanPool,
    MaxReduce,
    Concat,
    Softmax,
    Log,
    Sigmoid,
    GatherMask,
    Reshape,
    Transpose2d,
};

class Graph;

// Lightweight handle into a Graph. Copyable; identity is (graph, id).
struct Tensor {
    Graph* graph = nullptr;
    int id = -1;

    const Shape& shape() const;
    std::int64_t size() const;
    bool requires_grad() const;
    std::span<const double> values() const;
    // Accumulated gradient; valid after backward() on a requires_grad node.
    std::span<const double> grad() const;
    double value() const;  // scalar tensors only
};

// One recorded operation. Nodes are stored in creation order, which is a
// topological order of the DAG by construction.
struct Node {
    OpKind op = OpKind::Leaf;
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<int> inputs;
    std::vector<std::int64_t> aux_i;  // op-specific saved state (argmax, axes, rows)
    std::vector<double> aux_d;
};

// Define-by-run tape. A Graph and its Tensors belong to one thread;
// independent Graphs may be used concurrently. Build a fresh Graph per
// training step.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad);
    Tensor constant(Shape shape, std::vector<double> data);
    Tensor scalar(double v);
    // Leaf filled with a constant value.
    Tensor full(Shape shape, double v, bool requires_grad = false);

    // Reverse accumulation from a scalar loss. Every requires_grad node
    // receives d(loss)/d(node), added onto any gradient already stored, so
    // calling backward twice doubles the gradients.
    void backward(Tensor loss);

    void zero_grad();

    Node& node(int id) { return *nodes_[id]; }
    const Node& node(int id) const { return *nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

    Tensor emplace(Node&& n);

private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

// ---- primitive kernels -------------------------------------------------
// add/mul broadcast right-aligned: trailing dims must match or be 1.
Tensor add(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor matmul(Tensor a, Tensor b);          // [m,k] x [k,n] -> [m,n]
Tensor conv2d(Tensor x, Tensor w, Tensor bias);  // 3x3, stride 1, zero pad 1
Tensor relu(Tensor x);
Tensor max_pool2d(Tensor x);                // [C,H,W] -> [C,H/2,W/2]
Tensor nearest_upsample2x(Tensor x);        // [C,H,W] -> [C,2H,2W]
Tensor sum_reduce(Tensor x, std::vector<int> axes);
Tensor mean_pool(Tensor x, std::vector<int> axes);
Tensor max_reduce(Tensor x, std::vector<int> axes);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor softmax(Tensor x);                   // normalizes the last axis
Tensor log(Tensor x);
Tensor sigmoid(Tensor x);
// Selects rows of a 2D tensor where mask is nonzero: [R,C] -> [m,C].
Tensor gather_mask(Tensor x, const std::vector<std::uint8_t>& row_mask);
Tensor reshape(Tensor x, Shape shape);
Tensor transpose2d(Tensor x);               // [a,b] -> [b,a]

// ---- compositions ------------------------------------------------------
Tensor scale(Tensor x, double c);
Tensor sub(Tensor a, Tensor b);
// max(x, lo) via relu; gradient passes iff x > lo.
Tensor clamp_min(Tensor x, double lo);

// ---- gradient verification ---------------------------------------------
struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::int64_t coords_checked = 0;
    bool pass = false;
};

// Central-difference check of an analytic gradient. `f` evaluates the
// scalar function at a full coordinate vector (rebuilding its graph).
// Checks all coordinates, or a seeded sample of `max_coords` when that is
// smaller. Relative error uses max(|analytic|, |numeric|, floor) as the
// denominator so near-zero gradients do not inflate the report.
GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> x0,
                           std::span<const double> analytic_grad, double h, double tol,
                           double floor = 1e-4, std::int64_t max_coords = -1,
                           std::uint64_t sample_seed = 0);

}  // namespace udma
