#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "udma/errors.hpp"
#include "udma/graph.hpp"
#include "udma/parallel.hpp"
#include "udma/rng.hpp"

using namespace udma;

namespace {

std::vector<double> random_values(std::int64_t n, std::uint64_t seed, double keepout = 0.0) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) {
        do {
            x = dist(rng);
        } while (std::abs(x) <= keepout);  // stay away from relu/max kinks
    }
    return v;
}

// Finite-difference oracle for a scalar-valued graph builder.
GradCheckReport fd_check(const Shape& shape, std::uint64_t seed,
                         const std::function<Tensor(Graph&, Tensor)>& build,
                         double keepout = 0.0, double tol = 1e-6) {
    std::vector<double> x0 = random_values(numel(shape), seed, keepout);
    auto eval = [&](std::span<const double> x) {
        Graph g;
        Tensor t = g.leaf(shape, {x.begin(), x.end()}, true);
        return build(g, t).value();
    };
    Graph g;
    Tensor t = g.leaf(shape, x0, true);
    g.backward(build(g, t));
    return grad_check(eval, x0, t.grad(), 1e-5, tol);
}

}  // namespace

TEST_CASE("add and mul broadcast right-aligned") {
    Graph g;
    Tensor a = g.leaf({2, 3}, {1, 2, 3, 4, 5, 6}, false);
    Tensor b = g.leaf({3}, {10, 20, 30}, false);
    Tensor s = add(a, b);
    Tensor p = mul(a, b);
    CHECK(s.shape() == Shape{2, 3});
    CHECK(s.values()[0] == 11.0);
    CHECK(s.values()[5] == 36.0);
    CHECK(p.values()[2] == 90.0);
    CHECK(p.values()[3] == 40.0);

    Tensor col = g.leaf({2, 1}, {100, 200}, false);
    Tensor s2 = add(a, col);
    CHECK(s2.values()[0] == 101.0);
    CHECK(s2.values()[4] == 205.0);

    Tensor bad = g.leaf({2}, {1, 2}, false);
    CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("mul broadcast backward matches column/row sums") {
    Graph g;
    Tensor a = g.leaf({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor b = g.leaf({3}, {10, 20, 30}, true);
    g.backward(sum_reduce(mul(a, b), {0, 1}));
    // d/da[i][j] = b[j], d/db[j] = sum_i a[i][j]
    std::vector<double> da(a.grad().begin(), a.grad().end());
    std::vector<double> db(b.grad().begin(), b.grad().end());
    CHECK(da == std::vector<double>{10, 20, 30, 10, 20, 30});
    CHECK(db == std::vector<double>{5, 7, 9});
}

TEST_CASE("matmul forward and backward against hand values") {
    Graph g;
    Tensor a = g.leaf({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor b = g.leaf({3, 2}, {7, 8, 9, 10, 11, 12}, true);
    Tensor c = matmul(a, b);
    std::vector<double> cv(c.values().begin(), c.values().end());
    CHECK(cv == std::vector<double>{58, 64, 139, 154});

    g.backward(sum_reduce(c, {0, 1}));  // dC = ones
    std::vector<double> da(a.grad().begin(), a.grad().end());
    std::vector<double> db(b.grad().begin(), b.grad().end());
    CHECK(da == std::vector<double>{15, 19, 23, 15, 19, 23});  // row sums of B
    CHECK(db == std::vector<double>{5, 5, 7, 7, 9, 9});        // column sums of A

    Tensor bad = g.leaf({2, 2}, {1, 2, 3, 4}, false);
    CHECK_THROWS_WITH_AS(matmul(a, bad), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("conv2d orientation and zero padding") {
    Graph g;
    Tensor x = g.leaf({1, 2, 2}, {1, 2, 3, 4}, false);
    Tensor wsum = g.full({1, 1, 3, 3}, 1.0);
    Tensor b0 = g.leaf({1}, {0.5}, false);
    Tensor y = conv2d(x, wsum, b0);
    CHECK(y.shape() == Shape{1, 2, 2});
    for (double v : y.values()) CHECK(v == 10.5);  // every window sees all four cells

    // weight hot at (ky=0,kx=0) shifts the image down-right by one
    std::vector<double> wv(9, 0.0);
    wv[0] = 1.0;
    Tensor wshift = g.leaf({1, 1, 3, 3}, wv, false);
    Tensor zb = g.leaf({1}, {0.0}, false);
    Tensor ys = conv2d(x, wshift, zb);
    std::vector<double> got(ys.values().begin(), ys.values().end());
    CHECK(got == std::vector<double>{0, 0, 0, 1});
}

TEST_CASE("relu and max_pool2d route gradients to the argmax") {
    Graph g;
    Tensor x = g.leaf({1, 2, 4}, {1, 5, 2, 2, 5, 0, 2, 2}, true);
    Tensor p = max_pool2d(x);
    CHECK(p.shape() == Shape{1, 1, 2});
    CHECK(p.values()[0] == 5.0);
    CHECK(p.values()[1] == 2.0);
    g.backward(sum_reduce(p, {0, 1, 2}));
    // left window: 5 appears twice; first in scan order is index 1.
    // right window: all-2 tie resolves to index 2 (first scanned).
    std::vector<double> dx(x.grad().begin(), x.grad().end());
    CHECK(dx == std::vector<double>{0, 1, 1, 0, 0, 0, 0, 0});

    Tensor odd = g.full({1, 3, 2}, 1.0);
    CHECK_THROWS_AS(max_pool2d(odd), ShapeError);
}

TEST_CASE("reductions over axis sets") {
    Graph g;
    Tensor a = g.leaf({2, 3}, {1, 2, 3, 4, 5, 6}, false);
    Tensor s0 = sum_reduce(a, {0});
    CHECK(s0.shape() == Shape{3});
    CHECK(s0.values()[0] == 5.0);
    CHECK(s0.values()[2] == 9.0);
    Tensor m1 = mean_pool(a, {1});
    CHECK(m1.shape() == Shape{2});
    CHECK(m1.values()[0] == 2.0);
    CHECK(m1.values()[1] == 5.0);
    Tensor all = sum_reduce(a, {0, 1});
    CHECK(all.shape() == Shape{1});
    CHECK(all.value() == 21.0);

    Tensor b = g.leaf({2, 2}, {3, 3, 1, 7}, true);
    Tensor mx = max_reduce(b, {1});
    CHECK(mx.values()[0] == 3.0);
    CHECK(mx.values()[1] == 7.0);
    g.backward(sum_reduce(mx, {0}));
    std::vector<double> dbv(b.grad().begin(), b.grad().end());
    CHECK(dbv == std::vector<double>{1, 0, 0, 1});  // tie goes to the first element

    CHECK_THROWS_AS(sum_reduce(a, {2}), ShapeError);
}

TEST_CASE("softmax rows are distributions and shift-invariant") {
    Graph g;
    Tensor x = g.leaf({2}, {0.0, std::log(2.0)}, false);
    Tensor y = softmax(x);
    CHECK(y.values()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(y.values()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    auto vals = random_values(4 * 5, 77);
    Tensor a = g.leaf({4, 5}, vals, false);
    Tensor sa = softmax(a);
    for (auto& v : vals) v += 123.25;  // constant shift per every row
    Tensor b = g.leaf({4, 5}, vals, false);
    Tensor sb = softmax(b);
    for (int r = 0; r < 4; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 5; ++c) {
            sum += sa.values()[r * 5 + c];
            CHECK(sa.values()[r * 5 + c] ==
                  doctest::Approx(sb.values()[r * 5 + c]).epsilon(1e-12));
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gather_mask selects rows and scatters gradients back") {
    Graph g;
    Tensor x = g.leaf({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    Tensor sel = gather_mask(x, {0, 1, 0, 1});
    CHECK(sel.shape() == Shape{2, 2});
    std::vector<double> sv(sel.values().begin(), sel.values().end());
    CHECK(sv == std::vector<double>{3, 4, 7, 8});
    g.backward(sum_reduce(mul(sel, sel), {0, 1}));
    std::vector<double> dx(x.grad().begin(), x.grad().end());
    CHECK(dx == std::vector<double>{0, 0, 6, 8, 0, 0, 14, 16});

    Tensor none = gather_mask(x, {0, 0, 0, 0});
    CHECK(none.shape() == Shape{0, 2});
    CHECK_THROWS_AS(gather_mask(x, {1, 1}), ShapeError);
}

TEST_CASE("concat joins along an axis and splits gradients") {
    Graph g;
    Tensor a = g.leaf({2, 2}, {1, 2, 3, 4}, true);
    Tensor b = g.leaf({2, 1}, {9, 10}, true);
    Tensor c = concat({a, b}, 1);
    CHECK(c.shape() == Shape{2, 3});
    std::vector<double> cv(c.values().begin(), c.values().end());
    CHECK(cv == std::vector<double>{1, 2, 9, 3, 4, 10});
    Tensor w = g.leaf({2, 3}, {1, 2, 3, 4, 5, 6}, false);
    g.backward(sum_reduce(mul(c, w), {0, 1}));
    std::vector<double> da(a.grad().begin(), a.grad().end());
    std::vector<double> db(b.grad().begin(), b.grad().end());
    CHECK(da == std::vector<double>{1, 2, 4, 5});
    CHECK(db == std::vector<double>{3, 6});

    Tensor bad = g.leaf({3, 1}, {1, 2, 3}, false);
    CHECK_THROWS_AS(concat({a, bad}, 1), ShapeError);
}

TEST_CASE("backward accumulates additively across calls") {
    Graph g;
    Tensor x = g.leaf({3}, {1.5, -2.0, 0.5}, true);
    Tensor loss = sum_reduce(mul(x, x), {0});
    g.backward(loss);
    std::vector<double> once(x.grad().begin(), x.grad().end());
    g.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0 * once[i]);
    g.zero_grad();
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 0.0);
    g.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == once[i]);
}

TEST_CASE("backward rejects non-scalar losses and skips frozen leaves") {
    Graph g;
    Tensor x = g.leaf({2}, {1, 2}, true);
    CHECK_THROWS_AS(g.backward(mul(x, x)), ShapeError);

    Tensor frozen = g.leaf({2}, {3, 4}, false);
    Tensor loss = sum_reduce(mul(x, frozen), {0});
    g.backward(loss);
    CHECK(x.grad()[0] == 3.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK_THROWS_AS((void)frozen.grad(), ShapeError);
}

TEST_CASE("non-finite results are rejected at the producing op") {
    Graph g;
    Tensor z = g.leaf({1}, {0.0}, false);
    CHECK_THROWS_WITH_AS(log(z), doctest::Contains("log"), NumericError);
    CHECK_THROWS_AS(g.leaf({1}, {std::nan("")}, false), NumericError);
}

TEST_CASE("finite differences confirm gradients of op composites") {
    // matmul -> add bias -> relu -> sum
    CHECK(fd_check({3, 4}, 11, [](Graph& g, Tensor t) {
              Tensor w = g.leaf({4, 2}, random_values(8, 12), false);
              Tensor b = g.leaf({2}, random_values(2, 13), false);
              return sum_reduce(relu(add(matmul(t, w), b)), {0, 1});
          }, 0.05).pass);

    // conv -> relu -> pool -> mean
    CHECK(fd_check({2, 4, 6}, 21, [](Graph& g, Tensor t) {
              Tensor w = g.leaf({3, 2, 3, 3}, random_values(54, 22), false);
              Tensor b = g.leaf({3}, random_values(3, 23), false);
              return mean_pool(max_pool2d(relu(conv2d(t, w, b))), {0, 1, 2});
          }, 0.05).pass);

    // conv weights and bias as the differentiated inputs
    CHECK(fd_check({2, 2, 3, 3}, 31, [](Graph& g, Tensor t) {
              Tensor x = g.leaf({2, 4, 4}, random_values(32, 32), false);
              Tensor b = g.leaf({2}, random_values(2, 33), false);
              return sum_reduce(conv2d(x, t, b), {0, 1, 2});
          }).pass);

    // softmax -> log -> weighted sum (cross-entropy shape)
    CHECK(fd_check({3, 5}, 41, [](Graph& g, Tensor t) {
              Tensor w = g.leaf({3, 5}, random_values(15, 42), false);
              return scale(sum_reduce(mul(log(softmax(t)), w), {0, 1}), -1.0);
          }).pass);

    // sigmoid -> log, the discriminator loss shape
    CHECK(fd_check({6}, 51, [](Graph& g, Tensor t) {
              Tensor s = sigmoid(t);
              Tensor one = g.full({6}, 1.0);
              return scale(sum_reduce(add(log(s), log(sub(one, s))), {0}), -0.5);
          }).pass);

    // upsample -> mul -> sum over one axis -> max over the rest
    CHECK(fd_check({1, 2, 3}, 61, [](Graph& g, Tensor t) {
              Tensor u = nearest_upsample2x(t);
              Tensor w = g.leaf({1, 4, 6}, random_values(24, 62), false);
              return max_reduce(sum_reduce(mul(u, w), {2}), {0, 1});
          }, 0.05).pass);

    // gather -> transpose -> matmul -> mean, the node-feature shape
    CHECK(fd_check({5, 3}, 71, [](Graph& g, Tensor t) {
              Tensor sel = gather_mask(t, {1, 0, 1, 1, 0});
              Tensor w = g.leaf({3, 3}, random_values(9, 72), false);
              return mean_pool(matmul(transpose2d(matmul(sel, w)), sel), {0, 1});
          }).pass);

    // concat + reshape + clamp_min away from the kink
    CHECK(fd_check({2, 2}, 81, [](Graph&, Tensor t) {
              Tensor c = concat({t, scale(t, 2.0)}, 0);
              Tensor r = reshape(c, {2, 4});
              return sum_reduce(clamp_min(r, 0.01), {0, 1});
          }, 0.1).pass);
}

TEST_CASE("grad_check flags a corrupted gradient") {
    Shape shape{4};
    std::vector<double> x0 = random_values(4, 91);
    auto eval = [&](std::span<const double> x) {
        Graph g;
        Tensor t = g.leaf(shape, {x.begin(), x.end()}, true);
        return sum_reduce(mul(t, t), {0}).value();
    };
    Graph g;
    Tensor t = g.leaf(shape, x0, true);
    g.backward(sum_reduce(mul(t, t), {0}));
    std::vector<double> grad(t.grad().begin(), t.grad().end());
    CHECK(grad_check(eval, x0, grad, 1e-5, 1e-6).pass);
    grad[2] += 0.5;
    CHECK_FALSE(grad_check(eval, x0, grad, 1e-5, 1e-6).pass);
}

TEST_CASE("grad_check coordinate sampling is deterministic") {
    Shape shape{50};
    std::vector<double> x0 = random_values(50, 95);
    auto eval = [&](std::span<const double> x) {
        Graph g;
        Tensor t = g.leaf(shape, {x.begin(), x.end()}, true);
        return sum_reduce(mul(t, t), {0}).value();
    };
    Graph g;
    Tensor t = g.leaf(shape, x0, true);
    g.backward(sum_reduce(mul(t, t), {0}));
    auto r1 = grad_check(eval, x0, t.grad(), 1e-5, 1e-6, 1e-4, 10, 7);
    auto r2 = grad_check(eval, x0, t.grad(), 1e-5, 1e-6, 1e-4, 10, 7);
    CHECK(r1.coords_checked == 10);
    CHECK(r1.max_rel_error == r2.max_rel_error);
    CHECK(r1.pass);
}

TEST_CASE("graph results are identical in serial and parallel mode") {
    auto run = [](ExecMode mode) {
        set_exec_mode(mode);
        Graph g;
        Tensor x = g.leaf({2, 8, 8}, random_values(128, 99), true);
        Tensor w = g.leaf({4, 2, 3, 3}, random_values(72, 98), true);
        Tensor b = g.leaf({4}, random_values(4, 97), true);
        Tensor y = max_pool2d(relu(conv2d(x, w, b)));
        Tensor loss = mean_pool(mul(y, y), {0, 1, 2});
        g.backward(loss);
        std::vector<double> out;
        out.push_back(loss.value());
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        out.insert(out.end(), b.grad().begin(), b.grad().end());
        return out;
    };
    auto serial = run(ExecMode::Serial);
    auto parallel = run(ExecMode::Parallel);
    set_exec_mode(ExecMode::Parallel);
    REQUIRE(serial.size() == parallel.size());
    CHECK(std::memcmp(serial.data(), parallel.data(), serial.size() * sizeof(double)) == 0);
}
