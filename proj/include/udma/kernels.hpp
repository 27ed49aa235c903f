#pragma once

#include <cstdint>

namespace udma::kernels {

// Dense kernels behind the tensor ops. Each has a serial and an OpenMP
// variant; both compute every output element with the same inner loop
// order, so they agree bit-for-bit (asserted by tests). The graph layer
// dispatches on udma::exec_mode(); the benchmark calls both directly.
//
// Layouts: matrices row-major; images channel-major [C][H][W]; conv
// weights [Cout][Cin][3][3]. Backward kernels accumulate (+=).

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_bwd_a(const double* dc, const double* b, double* da, int m, int k, int n);
void matmul_bwd_b(const double* a, const double* dc, double* db, int m, int k, int n);

void conv2d(const double* x, const double* w, const double* bias, double* y,
            int cin, int h, int wd, int cout);
void conv2d_bwd_input(const double* dy, const double* w, double* dx,
                      int cin, int h, int wd, int cout);
void conv2d_bwd_weight(const double* x, const double* dy, double* dw, double* dbias,
                       int cin, int h, int wd, int cout);

}  // namespace serial

namespace par {

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_bwd_a(const double* dc, const double* b, double* da, int m, int k, int n);
void matmul_bwd_b(const double* a, const double* dc, double* db, int m, int k, int n);

void conv2d(const double* x, const double* w, const double* bias, double* y,
            int cin, int h, int wd, int cout);
void conv2d_bwd_input(const double* dy, const double* w, double* dx,
                      int cin, int h, int wd, int cout);
void conv2d_bwd_weight(const double* x, const double* dy, double* dw, double* dbias,
                       int cin, int h, int wd, int cout);

}  // namespace par

// exec_mode() dispatchers used by the graph ops.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_bwd_a(const double* dc, const double* b, double* da, int m, int k, int n);
void matmul_bwd_b(const double* a, const double* dc, double* db, int m, int k, int n);
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int cin, int h, int wd, int cout);
void conv2d_bwd_input(const double* dy, const double* w, double* dx,
                      int cin, int h, int wd, int cout);
void conv2d_bwd_weight(const double* x, const double* dy, double* dw, double* dbias,
                       int cin, int h, int wd, int cout);

}  // namespace udma::kernels
