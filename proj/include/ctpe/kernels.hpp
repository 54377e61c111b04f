#pragma once

#include <cstdint>
#include <cstddef>

// Dense numeric kernels used by the models. The default entry points are
// OpenMP-parallel; ctpe::kernels::serial holds independently written plain
// loops with the same per-element accumulation order, used as the reference
// in tests and in the kernel benchmark.
//
// Every parallel kernel assigns each output element to exactly one thread
// and accumulates in a fixed order, so results are bit-identical to the
// serial reference for any thread count.
//
// Layouts: images are channel-major [C][H][W]; conv weights [OC][C][KH][KW];
// matrices row-major.

namespace ctpe::kernels {

// out[OC][OH][OW]; zero padding; bias may be null.
void conv2d_forward(const double* in, int C, int H, int W,
                    const double* w, const double* bias,
                    int OC, int KH, int KW, int stride, int pad,
                    double* out, int OH, int OW);

// gin[C][H][W] is overwritten.
void conv2d_backward_input(const double* gout, int OC, int OH, int OW,
                           const double* w, int C, int KH, int KW,
                           int stride, int pad,
                           double* gin, int H, int W);

// gw/gbias are accumulated into (callers zero them before the first batch
// chunk); gbias may be null.
void conv2d_backward_params(const double* in, int C, int H, int W,
                            const double* gout, int OC, int OH, int OW,
                            int KH, int KW, int stride, int pad,
                            double* gw, double* gbias);

// c[M][N] = a[M][K] * b[K][N]
void matmul(const double* a, int M, int K, const double* b, int N, double* c);

// y[M] = A[M][N] x[N]
void matvec(const double* a, int M, int N, const double* x, double* y);
// y[M] += A[M][N] x[N]
void matvec_add(const double* a, int M, int N, const double* x, double* y);
// y[N] += A[M][N]^T x[M]
void matvec_t_add(const double* a, int M, int N, const double* x, double* y);
// A[M][N] += u[M] v[N]^T
void outer_add(const double* u, int M, const double* v, int N, double* a);

void relu_forward(const double* x, size_t n, double* out);
// gin = gout where x > 0, else 0
void relu_backward(const double* x, const double* gout, size_t n, double* gin);

// out[C] = spatial mean of in[C][H][W]
void global_avg_pool(const double* in, int C, int H, int W, double* out);
// gin[c][y][x] = gout[c] / (H*W)
void global_avg_pool_backward(const double* gout, int C, int H, int W, double* gin);

// out = clamp((hu - (level - width/2)) / width, 0, 1)
void window_transform(const int16_t* hu, size_t n, double level, double width, float* out);

// align_corners-style bilinear resize of a single-channel map.
void bilinear_upsample(const double* in, int H, int W, double* out, int OH, int OW);

namespace serial {

void conv2d_forward(const double* in, int C, int H, int W,
                    const double* w, const double* bias,
                    int OC, int KH, int KW, int stride, int pad,
                    double* out, int OH, int OW);
void conv2d_backward_input(const double* gout, int OC, int OH, int OW,
                           const double* w, int C, int KH, int KW,
                           int stride, int pad,
                           double* gin, int H, int W);
void conv2d_backward_params(const double* in, int C, int H, int W,
                            const double* gout, int OC, int OH, int OW,
                            int KH, int KW, int stride, int pad,
                            double* gw, double* gbias);
void matmul(const double* a, int M, int K, const double* b, int N, double* c);
void matvec(const double* a, int M, int N, const double* x, double* y);
void matvec_add(const double* a, int M, int N, const double* x, double* y);
void matvec_t_add(const double* a, int M, int N, const double* x, double* y);
void outer_add(const double* u, int M, const double* v, int N, double* a);
void relu_forward(const double* x, size_t n, double* out);
void relu_backward(const double* x, const double* gout, size_t n, double* gin);
void global_avg_pool(const double* in, int C, int H, int W, double* out);
void global_avg_pool_backward(const double* gout, int C, int H, int W, double* gin);
void window_transform(const int16_t* hu, size_t n, double level, double width, float* out);
void bilinear_upsample(const double* in, int H, int W, double* out, int OH, int OW);

} // namespace serial

} // namespace ctpe::kernels
