#include "udma/kernels.hpp"

#include "udma/parallel.hpp"

// The serial and parallel bodies are generated from one macro-free template
// via UDMA_KERNEL_LOOP: in the parallel variant the outer loop carries an
// `omp parallel for`, in the serial variant it does not. Inner loops are
// identical, which is what makes the two variants bit-identical.

namespace udma::kernels {

namespace {

inline double conv_cell(const double* x, const double* w, int cin, int h, int wd,
                        int co, int p, int q) {
    // 3x3, stride 1, zero pad 1
    double acc = 0.0;
    for (int ci = 0; ci < cin; ++ci) {
        const double* plane = x + static_cast<std::int64_t>(ci) * h * wd;
        const double* wk = w + ((static_cast<std::int64_t>(co) * cin + ci) * 9);
        for (int dy = 0; dy < 3; ++dy) {
            int yy = p + dy - 1;
            if (yy < 0 || yy >= h) continue;
            for (int dx = 0; dx < 3; ++dx) {
                int xx = q + dx - 1;
                if (xx < 0 || xx >= wd) continue;
                acc += plane[static_cast<std::int64_t>(yy) * wd + xx] * wk[dy * 3 + dx];
            }
        }
    }
    return acc;
}

inline double conv_bwd_input_cell(const double* dy, const double* w, int cin, int h, int wd,
                                  int cout, int ci, int p, int q) {
    double acc = 0.0;
    for (int co = 0; co < cout; ++co) {
        const double* dplane = dy + static_cast<std::int64_t>(co) * h * wd;
        const double* wk = w + ((static_cast<std::int64_t>(co) * cin + ci) * 9);
        for (int ky = 0; ky < 3; ++ky) {
            int a = p - ky + 1;
            if (a < 0 || a >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
                int b = q - kx + 1;
                if (b < 0 || b >= wd) continue;
                acc += dplane[static_cast<std::int64_t>(a) * wd + b] * wk[ky * 3 + kx];
            }
        }
    }
    return acc;
}

inline double conv_bwd_weight_cell(const double* x, const double* dy, int h, int wd,
                                   int co, int ci, int ky, int kx) {
    const double* dplane = dy + static_cast<std::int64_t>(co) * h * wd;
    const double* xplane = x + static_cast<std::int64_t>(ci) * h * wd;
    double acc = 0.0;
    for (int a = 0; a < h; ++a) {
        int yy = a + ky - 1;
        if (yy < 0 || yy >= h) continue;
        for (int b = 0; b < wd; ++b) {
            int xx = b + kx - 1;
            if (xx < 0 || xx >= wd) continue;
            acc += dplane[static_cast<std::int64_t>(a) * wd + b] *
                   xplane[static_cast<std::int64_t>(yy) * wd + xx];
        }
    }
    return acc;
}

template <ExecMode Mode>
struct Impl {
    template <typename Fn>
    static void loop(std::int64_t n, Fn&& fn) {
        detail::parallel_for(n, Mode, std::forward<Fn>(fn));
    }

    static void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
        loop(m, [=](std::int64_t i) {
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int l = 0; l < k; ++l) acc += a[i * k + l] * b[static_cast<std::int64_t>(l) * n + j];
                c[i * n + j] = acc;
            }
        });
    }

    // da += dc * b^T
    static void matmul_bwd_a(const double* dc, const double* b, double* da, int m, int k, int n) {
        loop(m, [=](std::int64_t i) {
            for (int l = 0; l < k; ++l) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) acc += dc[i * n + j] * b[static_cast<std::int64_t>(l) * n + j];
                da[i * k + l] += acc;
            }
        });
    }

    // db += a^T * dc
    static void matmul_bwd_b(const double* a, const double* dc, double* db, int m, int k, int n) {
        loop(k, [=](std::int64_t l) {
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int i = 0; i < m; ++i) acc += a[static_cast<std::int64_t>(i) * k + l] * dc[static_cast<std::int64_t>(i) * n + j];
                db[l * n + j] += acc;
            }
        });
    }

    static void conv2d(const double* x, const double* w, const double* bias, double* y,
                       int cin, int h, int wd, int cout) {
        loop(static_cast<std::int64_t>(cout) * h, [=](std::int64_t t) {
            int co = static_cast<int>(t / h);
            int p = static_cast<int>(t % h);
            double* row = y + (static_cast<std::int64_t>(co) * h + p) * wd;
            for (int q = 0; q < wd; ++q)
                row[q] = bias[co] + conv_cell(x, w, cin, h, wd, co, p, q);
        });
    }

    static void conv2d_bwd_input(const double* dy, const double* w, double* dx,
                                 int cin, int h, int wd, int cout) {
        loop(static_cast<std::int64_t>(cin) * h, [=](std::int64_t t) {
            int ci = static_cast<int>(t / h);
            int p = static_cast<int>(t % h);
            double* row = dx + (static_cast<std::int64_t>(ci) * h + p) * wd;
            for (int q = 0; q < wd; ++q)
                row[q] += conv_bwd_input_cell(dy, w, cin, h, wd, cout, ci, p, q);
        });
    }

    static void conv2d_bwd_weight(const double* x, const double* dy, double* dw, double* dbias,
                                  int cin, int h, int wd, int cout) {
        loop(static_cast<std::int64_t>(cout) * cin, [=](std::int64_t t) {
            int co = static_cast<int>(t / cin);
            int ci = static_cast<int>(t % cin);
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx)
                    dw[(static_cast<std::int64_t>(co) * cin + ci) * 9 + ky * 3 + kx] +=
                        conv_bwd_weight_cell(x, dy, h, wd, co, ci, ky, kx);
        });
        loop(cout, [=](std::int64_t co) {
            const double* dplane = dy + co * h * wd;
            double acc = 0.0;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * wd; ++i) acc += dplane[i];
            dbias[co] += acc;
        });
    }
};

}  // namespace

namespace serial {
void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    Impl<ExecMode::Serial>::matmul(a, b, c, m, k, n);
}
void matmul_bwd_a(const double* dc, const double* b, double* da, int m, int k, int n) {
    Impl<ExecMode::Serial>::matmul_bwd_a(dc, b, da, m, k, n);
}
void matmul_bwd_b(const double* a, const double* dc, double* db, int m, int k, int n) {
    Impl<ExecMode::Serial>::matmul_bwd_b(a, dc, db, m, k, n);
}
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int cin, int h, int wd, int cout) {
    Impl<ExecMode::Serial>::conv2d(x, w, bias, y, cin, h, wd, cout);
}
void conv2d_bwd_input(const double* dy, const double* w, double* dx,
                      int cin, int h, int wd, int cout) {
    Impl<ExecMode::Serial>::conv2d_bwd_input(dy, w, dx, cin, h, wd, cout);
}
void conv2d_bwd_weight(const double* x, const double* dy, double* dw, double* dbias,
                       int cin, int h, int wd, int cout) {
    Impl<ExecMode::Serial>::conv2d_bwd_weight(x, dy, dw, dbias, cin, h, wd, cout);
}
}  // namespace serial

namespace par {
void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    Impl<ExecMode::Parallel>::matmul(a, b, c, m, k, n);
}
void matmul_bwd_a(const double* dc, const double* b, double* da, int m, int k, int n) {
    Impl<ExecMode::Parallel>::matmul_bwd_a(dc, b, da, m, k, n);
}
void matmul_bwd_b(const double* a, const double* dc, double* db, int m, int k, int n) {
    Impl<ExecMode::Parallel>::matmul_bwd_b(a, dc, db, m, k, n);
}
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int cin, int h, int wd, int cout) {
    Impl<ExecMode::Parallel>::conv2d(x, w, bias, y, cin, h, wd, cout);
}
void conv2d_bwd_input(const double* dy, const double* w, double* dx,
                      int cin, int h, int wd, int cout) {
    Impl<ExecMode::Parallel>::conv2d_bwd_input(dy, w, dx, cin, h, wd, cout);
}
void conv2d_bwd_weight(const double* x, const double* dy, double* dw, double* dbias,
                       int cin, int h, int wd, int cout) {
    Impl<ExecMode::Parallel>::conv2d_bwd_weight(x, dy, dw, dbias, cin, h, wd, cout);
}
}  // namespace par

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    exec_mode() == ExecMode::Parallel ? par::matmul(a, b, c, m, k, n)
                                      : serial::matmul(a, b, c, m, k, n);
}
void matmul_bwd_a(const double* dc, const double* b, double* da, int m, int k, int n) {
    exec_mode() == ExecMode::Parallel ? par::matmul_bwd_a(dc, b, da, m, k, n)
                                      : serial::matmul_bwd_a(dc, b, da, m, k, n);
}
void matmul_bwd_b(const double* a, const double* dc, double* db, int m, int k, int n) {
    exec_mode() == ExecMode::Parallel ? par::matmul_bwd_b(a, dc, db, m, k, n)
                                      : serial::matmul_bwd_b(a, dc, db, m, k, n);
}
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int cin, int h, int wd, int cout) {
    exec_mode() == ExecMode::Parallel ? par::conv2d(x, w, bias, y, cin, h, wd, cout)
                                      : serial::conv2d(x, w, bias, y, cin, h, wd, cout);
}
void conv2d_bwd_input(const double* dy, const double* w, double* dx,
                      int cin, int h, int wd, int cout) {
    exec_mode() == ExecMode::Parallel ? par::conv2d_bwd_input(dy, w, dx, cin, h, wd, cout)
                                      : serial::conv2d_bwd_input(dy, w, dx, cin, h, wd, cout);
}
void conv2d_bwd_weight(const double* x, const double* dy, double* dw, double* dbias,
                       int cin, int h, int wd, int cout) {
    exec_mode() == ExecMode::Parallel
        ? par::conv2d_bwd_weight(x, dy, dw, dbias, cin, h, wd, cout)
        : serial::conv2d_bwd_weight(x, dy, dw, dbias, cin, h, wd, cout);
}

}  // namespace udma::kernels
