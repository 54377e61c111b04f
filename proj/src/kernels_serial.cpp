#include "ctpe/kernels.hpp"

#include <algorithm>
#include <cmath>

// Plain-loop reference implementations. Kept deliberately simple; the test
// suite checks the parallel kernels against these, and the benchmark target
// reports the speedup.

namespace ctpe::kernels::serial {

void conv2d_forward(const double* in, int C, int H, int W,
                    const double* w, const double* bias,
                    int OC, int KH, int KW, int stride, int pad,
                    double* out, int OH, int OW) {
    for (int oc = 0; oc < OC; ++oc)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                double acc = bias ? bias[oc] : 0.0;
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            const int y = oy * stride - pad + ky;
                            const int x = ox * stride - pad + kx;
                            if (y < 0 || y >= H || x < 0 || x >= W) continue;
                            acc += w[((static_cast<size_t>(oc) * C + c) * KH + ky) * KW + kx] *
                                   in[(static_cast<size_t>(c) * H + y) * W + x];
                        }
                out[(static_cast<size_t>(oc) * OH + oy) * OW + ox] = acc;
            }
}

void conv2d_backward_input(const double* gout, int OC, int OH, int OW,
                           const double* w, int C, int KH, int KW,
                           int stride, int pad,
                           double* gin, int H, int W) {
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int oc = 0; oc < OC; ++oc)
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            const int ty = y + pad - ky;
                            const int tx = x + pad - kx;
                            if (ty < 0 || tx < 0 || ty % stride != 0 || tx % stride != 0) continue;
                            const int oy = ty / stride;
                            const int ox = tx / stride;
                            if (oy >= OH || ox >= OW) continue;
                            acc += w[((static_cast<size_t>(oc) * C + c) * KH + ky) * KW + kx] *
                                   gout[(static_cast<size_t>(oc) * OH + oy) * OW + ox];
                        }
                gin[(static_cast<size_t>(c) * H + y) * W + x] = acc;
            }
}

void conv2d_backward_params(const double* in, int C, int H, int W,
                            const double* gout, int OC, int OH, int OW,
                            int KH, int KW, int stride, int pad,
                            double* gw, double* gbias) {
    for (int oc = 0; oc < OC; ++oc) {
        double bacc = 0.0;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                const double g = gout[(static_cast<size_t>(oc) * OH + oy) * OW + ox];
                bacc += g;
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            const int y = oy * stride - pad + ky;
                            const int x = ox * stride - pad + kx;
                            if (y < 0 || y >= H || x < 0 || x >= W) continue;
                            gw[((static_cast<size_t>(oc) * C + c) * KH + ky) * KW + kx] +=
                                g * in[(static_cast<size_t>(c) * H + y) * W + x];
                        }
            }
        if (gbias) gbias[oc] += bacc;
    }
}

void matmul(const double* a, int M, int K, const double* b, int N, double* c) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k)
                acc += a[static_cast<size_t>(i) * K + k] * b[static_cast<size_t>(k) * N + j];
            c[static_cast<size_t>(i) * N + j] = acc;
        }
}

void matvec(const double* a, int M, int N, const double* x, double* y) {
    for (int i = 0; i < M; ++i) {
        double acc = 0.0;
        for (int j = 0; j < N; ++j) acc += a[static_cast<size_t>(i) * N + j] * x[j];
        y[i] = acc;
    }
}

void matvec_add(const double* a, int M, int N, const double* x, double* y) {
    for (int i = 0; i < M; ++i) {
        double acc = 0.0;
        for (int j = 0; j < N; ++j) acc += a[static_cast<size_t>(i) * N + j] * x[j];
        y[i] += acc;
    }
}

void matvec_t_add(const double* a, int M, int N, const double* x, double* y) {
    for (int j = 0; j < N; ++j) {
        double acc = 0.0;
        for (int i = 0; i < M; ++i) acc += a[static_cast<size_t>(i) * N + j] * x[i];
        y[j] += acc;
    }
}

void outer_add(const double* u, int M, const double* v, int N, double* a) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j)
            a[static_cast<size_t>(i) * N + j] += u[i] * v[j];
}

void relu_forward(const double* x, size_t n, double* out) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* gout, size_t n, double* gin) {
    for (size_t i = 0; i < n; ++i) gin[i] = x[i] > 0.0 ? gout[i] : 0.0;
}

void global_avg_pool(const double* in, int C, int H, int W, double* out) {
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int i = 0; i < H * W; ++i) acc += in[static_cast<size_t>(c) * H * W + i];
        out[c] = acc / (static_cast<double>(H) * W);
    }
}

void global_avg_pool_backward(const double* gout, int C, int H, int W, double* gin) {
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H * W; ++i)
            gin[static_cast<size_t>(c) * H * W + i] = gout[c] / (static_cast<double>(H) * W);
}

void window_transform(const int16_t* hu, size_t n, double level, double width, float* out) {
    for (size_t i = 0; i < n; ++i) {
        const double v = (static_cast<double>(hu[i]) - (level - width / 2.0)) / width;
        out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
}

void bilinear_upsample(const double* in, int H, int W, double* out, int OH, int OW) {
    const double sy = OH > 1 ? static_cast<double>(H - 1) / (OH - 1) : 0.0;
    const double sx = OW > 1 ? static_cast<double>(W - 1) / (OW - 1) : 0.0;
    for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
            const double fy = oy * sy;
            const double fx = ox * sx;
            const int y0 = static_cast<int>(fy);
            const int x0 = static_cast<int>(fx);
            const int y1 = std::min(y0 + 1, H - 1);
            const int x1 = std::min(x0 + 1, W - 1);
            const double wy = fy - y0;
            const double wx = fx - x0;
            const double top = in[y0 * W + x0] * (1.0 - wx) + in[y0 * W + x1] * wx;
            const double bot = in[y1 * W + x0] * (1.0 - wx) + in[y1 * W + x1] * wx;
            out[oy * OW + ox] = top * (1.0 - wy) + bot * wy;
        }
}

} // namespace ctpe::kernels::serial
