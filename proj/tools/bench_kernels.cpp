#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "udma/kernels.hpp"
#include "udma/parallel.hpp"
#include "udma/rng.hpp"

using namespace udma;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
}

double best_of(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto dt = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        if (dt < best) best = dt;
    }
    return best;
}

// Times the serial and parallel variants of one kernel and checks that
// they produce bit-identical output buffers.
bool bench_case(const char* name, int reps, std::vector<double>& out,
                const std::function<void()>& serial_fn,
                const std::function<void()>& par_fn) {
    std::fill(out.begin(), out.end(), 0.0);
    const double serial_ms = best_of(reps, serial_fn);
    const std::vector<double> reference = out;

    std::fill(out.begin(), out.end(), 0.0);
    const double par_ms = best_of(reps, par_fn);
    const bool identical =
        std::memcmp(reference.data(), out.data(), out.size() * sizeof(double)) == 0;

    std::printf("%-18s %10.3f ms %10.3f ms %8.2fx   %s\n", name, serial_ms, par_ms,
                serial_ms / par_ms, identical ? "bit-identical" : "MISMATCH");
    return identical;
}

}  // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::atoi(argv[1]) : 5;

    // Matmul at the shape the pixel-feature stage produces on a full-size
    // sweep, plus a square case for raw arithmetic density.
    const int m = 2048, k = 24, n = 64;
    const int sq = 256;
    // Conv at a mid-size range image with the default encoder widths.
    const int cin = 5, h = 64, w = 512, cout = 16;

    const auto a = random_values(static_cast<std::size_t>(m) * k, 1);
    const auto b = random_values(static_cast<std::size_t>(k) * n, 2);
    const auto sa = random_values(static_cast<std::size_t>(sq) * sq, 3);
    const auto sb = random_values(static_cast<std::size_t>(sq) * sq, 4);
    const auto x = random_values(static_cast<std::size_t>(cin) * h * w, 5);
    const auto cw = random_values(static_cast<std::size_t>(cout) * cin * 9, 6);
    const auto cbias = random_values(cout, 7);
    const auto dy = random_values(static_cast<std::size_t>(cout) * h * w, 8);

    std::vector<double> out(static_cast<std::size_t>(m) * n);
    std::vector<double> sq_out(static_cast<std::size_t>(sq) * sq);
    std::vector<double> y(static_cast<std::size_t>(cout) * h * w);
    std::vector<double> dx(static_cast<std::size_t>(cin) * h * w);
    std::vector<double> dw(static_cast<std::size_t>(cout) * cin * 9);
    std::vector<double> dbias(cout);

    std::printf("kernel             serial        parallel     speedup   check  (%d threads, best of %d)\n",
                max_threads(), reps);
    bool ok = true;

    ok &= bench_case(
        "matmul 2048x24x64", reps, out,
        [&] { kernels::serial::matmul(a.data(), b.data(), out.data(), m, k, n); },
        [&] { kernels::par::matmul(a.data(), b.data(), out.data(), m, k, n); });

    ok &= bench_case(
        "matmul 256^3", reps, sq_out,
        [&] { kernels::serial::matmul(sa.data(), sb.data(), sq_out.data(), sq, sq, sq); },
        [&] { kernels::par::matmul(sa.data(), sb.data(), sq_out.data(), sq, sq, sq); });

    ok &= bench_case(
        "matmul_bwd_a", reps, sq_out,
        [&] {
            std::fill(sq_out.begin(), sq_out.end(), 0.0);
            kernels::serial::matmul_bwd_a(sa.data(), sb.data(), sq_out.data(), sq, sq, sq);
        },
        [&] {
            std::fill(sq_out.begin(), sq_out.end(), 0.0);
            kernels::par::matmul_bwd_a(sa.data(), sb.data(), sq_out.data(), sq, sq, sq);
        });

    ok &= bench_case(
        "matmul_bwd_b", reps, sq_out,
        [&] {
            std::fill(sq_out.begin(), sq_out.end(), 0.0);
            kernels::serial::matmul_bwd_b(sa.data(), sb.data(), sq_out.data(), sq, sq, sq);
        },
        [&] {
            std::fill(sq_out.begin(), sq_out.end(), 0.0);
            kernels::par::matmul_bwd_b(sa.data(), sb.data(), sq_out.data(), sq, sq, sq);
        });

    ok &= bench_case(
        "conv2d 5->16", reps, y,
        [&] {
            kernels::serial::conv2d(x.data(), cw.data(), cbias.data(), y.data(), cin, h, w,
                                    cout);
        },
        [&] {
            kernels::par::conv2d(x.data(), cw.data(), cbias.data(), y.data(), cin, h, w, cout);
        });

    ok &= bench_case(
        "conv2d_bwd_input", reps, dx,
        [&] {
            std::fill(dx.begin(), dx.end(), 0.0);
            kernels::serial::conv2d_bwd_input(dy.data(), cw.data(), dx.data(), cin, h, w, cout);
        },
        [&] {
            std::fill(dx.begin(), dx.end(), 0.0);
            kernels::par::conv2d_bwd_input(dy.data(), cw.data(), dx.data(), cin, h, w, cout);
        });

    ok &= bench_case(
        "conv2d_bwd_weight", reps, dw,
        [&] {
            std::fill(dw.begin(), dw.end(), 0.0);
            std::fill(dbias.begin(), dbias.end(), 0.0);
            kernels::serial::conv2d_bwd_weight(x.data(), dy.data(), dw.data(), dbias.data(),
                                               cin, h, w, cout);
        },
        [&] {
            std::fill(dw.begin(), dw.end(), 0.0);
            std::fill(dbias.begin(), dbias.end(), 0.0);
            kernels::par::conv2d_bwd_weight(x.data(), dy.data(), dw.data(), dbias.data(), cin,
                                            h, w, cout);
        });

    if (!ok) {
        std::printf("serial and parallel outputs diverged\n");
        return 1;
    }
    return 0;
}
