#include "ctpe/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace ctpe::kernels {

void conv2d_forward(const double* in, int C, int H, int W,
                    const double* w, const double* bias,
                    int OC, int KH, int KW, int stride, int pad,
                    double* out, int OH, int OW) {
    const long work = static_cast<long>(OC) * OH * OW * C * KH * KW;
    #pragma omp parallel for collapse(2) schedule(static) if (work > 32768)
    for (int oc = 0; oc < OC; ++oc) {
        for (int oy = 0; oy < OH; ++oy) {
            const double* woc = w + static_cast<size_t>(oc) * C * KH * KW;
            double* orow = out + (static_cast<size_t>(oc) * OH + oy) * OW;
            for (int ox = 0; ox < OW; ++ox) {
                double acc = bias ? bias[oc] : 0.0;
                const int y0 = oy * stride - pad;
                const int x0 = ox * stride - pad;
                for (int c = 0; c < C; ++c) {
                    const double* inc = in + static_cast<size_t>(c) * H * W;
                    const double* wc = woc + static_cast<size_t>(c) * KH * KW;
                    for (int ky = 0; ky < KH; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= H) continue;
                        for (int kx = 0; kx < KW; ++kx) {
                            const int x = x0 + kx;
                            if (x < 0 || x >= W) continue;
                            acc += wc[ky * KW + kx] * inc[y * W + x];
                        }
                    }
                }
                orow[ox] = acc;
            }
        }
    }
}

void conv2d_backward_input(const double* gout, int OC, int OH, int OW,
                           const double* w, int C, int KH, int KW,
                           int stride, int pad,
                           double* gin, int H, int W) {
    // Gather form: each input pixel collects from the output positions that
    // touched it, so threads never share a destination.
    const long work = static_cast<long>(C) * H * W * OC;
    #pragma omp parallel for collapse(2) schedule(static) if (work > 32768)
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int oc = 0; oc < OC; ++oc) {
                    const double* woc = w + (static_cast<size_t>(oc) * C + c) * KH * KW;
                    const double* goc = gout + static_cast<size_t>(oc) * OH * OW;
                    for (int ky = 0; ky < KH; ++ky) {
                        const int ty = y + pad - ky;
                        if (ty < 0 || ty % stride != 0) continue;
                        const int oy = ty / stride;
                        if (oy >= OH) continue;
                        for (int kx = 0; kx < KW; ++kx) {
                            const int tx = x + pad - kx;
                            if (tx < 0 || tx % stride != 0) continue;
                            const int ox = tx / stride;
                            if (ox >= OW) continue;
                            acc += woc[ky * KW + kx] * goc[oy * OW + ox];
                        }
                    }
                }
                gin[(static_cast<size_t>(c) * H + y) * W + x] = acc;
            }
        }
    }
}

void conv2d_backward_params(const double* in, int C, int H, int W,
                            const double* gout, int OC, int OH, int OW,
                            int KH, int KW, int stride, int pad,
                            double* gw, double* gbias) {
    const long work = static_cast<long>(OC) * OH * OW * C * KH * KW;
    #pragma omp parallel for schedule(static) if (work > 32768)
    for (int oc = 0; oc < OC; ++oc) {
        double* gwoc = gw + static_cast<size_t>(oc) * C * KH * KW;
        const double* goc = gout + static_cast<size_t>(oc) * OH * OW;
        double bacc = 0.0;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                const double g = goc[oy * OW + ox];
                bacc += g;
                const int y0 = oy * stride - pad;
                const int x0 = ox * stride - pad;
                for (int c = 0; c < C; ++c) {
                    const double* inc = in + static_cast<size_t>(c) * H * W;
                    double* gwc = gwoc + static_cast<size_t>(c) * KH * KW;
                    for (int ky = 0; ky < KH; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= H) continue;
                        for (int kx = 0; kx < KW; ++kx) {
                            const int x = x0 + kx;
                            if (x < 0 || x >= W) continue;
                            gwc[ky * KW + kx] += g * inc[y * W + x];
                        }
                    }
                }
            }
        }
        if (gbias) gbias[oc] += bacc;
    }
}

void matmul(const double* a, int M, int K, const double* b, int N, double* c) {
    #pragma omp parallel for schedule(static) if (static_cast<long>(M) * K * N > 16384)
    for (int i = 0; i < M; ++i) {
        const double* ai = a + static_cast<size_t>(i) * K;
        double* ci = c + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += ai[k] * b[static_cast<size_t>(k) * N + j];
            ci[j] = acc;
        }
    }
}

void matvec(const double* a, int M, int N, const double* x, double* y) {
    #pragma omp parallel for schedule(static) if (static_cast<long>(M) * N > 16384)
    for (int i = 0; i < M; ++i) {
        const double* ai = a + static_cast<size_t>(i) * N;
        double acc = 0.0;
        for (int j = 0; j < N; ++j) acc += ai[j] * x[j];
        y[i] = acc;
    }
}

void matvec_add(const double* a, int M, int N, const double* x, double* y) {
    #pragma omp parallel for schedule(static) if (static_cast<long>(M) * N > 16384)
    for (int i = 0; i < M; ++i) {
        const double* ai = a + static_cast<size_t>(i) * N;
        double acc = 0.0;
        for (int j = 0; j < N; ++j) acc += ai[j] * x[j];
        y[i] += acc;
    }
}

void matvec_t_add(const double* a, int M, int N, const double* x, double* y) {
    #pragma omp parallel for schedule(static) if (static_cast<long>(M) * N > 16384)
    for (int j = 0; j < N; ++j) {
        double acc = 0.0;
        for (int i = 0; i < M; ++i) acc += a[static_cast<size_t>(i) * N + j] * x[i];
        y[j] += acc;
    }
}

void outer_add(const double* u, int M, const double* v, int N, double* a) {
    #pragma omp parallel for schedule(static) if (static_cast<long>(M) * N > 16384)
    for (int i = 0; i < M; ++i) {
        double* ai = a + static_cast<size_t>(i) * N;
        const double ui = u[i];
        for (int j = 0; j < N; ++j) ai[j] += ui * v[j];
    }
}

void relu_forward(const double* x, size_t n, double* out) {
    #pragma omp parallel for schedule(static) if (n > 16384)
    for (long i = 0; i < static_cast<long>(n); ++i)
        out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* gout, size_t n, double* gin) {
    #pragma omp parallel for schedule(static) if (n > 16384)
    for (long i = 0; i < static_cast<long>(n); ++i)
        gin[i] = x[i] > 0.0 ? gout[i] : 0.0;
}

void global_avg_pool(const double* in, int C, int H, int W, double* out) {
    const double denom = static_cast<double>(H) * W;
    #pragma omp parallel for schedule(static) if (static_cast<long>(C) * H * W > 16384)
    for (int c = 0; c < C; ++c) {
        const double* inc = in + static_cast<size_t>(c) * H * W;
        double acc = 0.0;
        for (int i = 0; i < H * W; ++i) acc += inc[i];
        out[c] = acc / denom;
    }
}

void global_avg_pool_backward(const double* gout, int C, int H, int W, double* gin) {
    const double denom = static_cast<double>(H) * W;
    #pragma omp parallel for schedule(static) if (static_cast<long>(C) * H * W > 16384)
    for (int c = 0; c < C; ++c) {
        double* gc = gin + static_cast<size_t>(c) * H * W;
        const double g = gout[c] / denom;
        for (int i = 0; i < H * W; ++i) gc[i] = g;
    }
}

void window_transform(const int16_t* hu, size_t n, double level, double width, float* out) {
    const double lo = level - width / 2.0;
    #pragma omp parallel for schedule(static) if (n > 16384)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        const double v = (static_cast<double>(hu[i]) - lo) / width;
        out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
}

void bilinear_upsample(const double* in, int H, int W, double* out, int OH, int OW) {
    const double sy = OH > 1 ? static_cast<double>(H - 1) / (OH - 1) : 0.0;
    const double sx = OW > 1 ? static_cast<double>(W - 1) / (OW - 1) : 0.0;
    #pragma omp parallel for schedule(static) if (static_cast<long>(OH) * OW > 16384)
    for (int oy = 0; oy < OH; ++oy) {
        const double fy = oy * sy;
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < OW; ++ox) {
            const double fx = ox * sx;
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - x0;
            const double top = in[y0 * W + x0] * (1.0 - wx) + in[y0 * W + x1] * wx;
            const double bot = in[y1 * W + x0] * (1.0 - wx) + in[y1 * W + x1] * wx;
            out[oy * OW + ox] = top * (1.0 - wy) + bot * wy;
        }
    }
}

} // namespace ctpe::kernels
