#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "convseq/tensor.hpp"

namespace convseq::kernels {

// C[m x q] += A[m x p] * B[p x q]
inline void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t p,
                    std::size_t q) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * q;
        const double* a = A + i * p;
        for (std::size_t k = 0; k < p; ++k) {
            double av = a[k];
            if (av == 0.0) continue;
            const double* b = B + k * q;
            for (std::size_t j = 0; j < q; ++j) c[j] += av * b[j];
        }
    }
}

// C[m x q] += A[m x p] * B[q x p]^T
inline void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t p,
                    std::size_t q) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * p;
        double* c = C + i * q;
        for (std::size_t j = 0; j < q; ++j) {
            const double* b = B + j * p;
            double acc = 0.0;
            for (std::size_t k = 0; k < p; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[p x q] += A[m x p]^T * B[m x q]
inline void gemm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t p,
                    std::size_t q) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * p;
        const double* b = B + i * q;
        for (std::size_t k = 0; k < p; ++k) {
            double av = a[k];
            if (av == 0.0) continue;
            double* c = C + k * q;
            for (std::size_t j = 0; j < q; ++j) c[j] += av * b[j];
        }
    }
}

// Numerically stable softmax over contiguous rows of length n.
inline void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * n;
        double* yr = y + r * n;
        double mx = xr[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        double inv = 1.0 / s;
        for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
    }
}

// Source position of kernel slot j for output position i; may be negative /
// past the end, in which case the input reads as zero.
// centered: i + j - (k-1)/2   (k odd)     causal: i + j - (k-1)
inline long long conv_src(long long i, long long j, long long k, bool causal) {
    return causal ? i + j - (k - 1) : i + j - (k - 1) / 2;
}

// Depthwise convolution, one weight row per channel. x [B,n,d], w [d,k].
inline void depthwise_conv_raw(const double* x, const double* w, double* out, std::size_t B,
                               std::size_t n, std::size_t d, std::size_t k, bool causal) {
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x + b * n * d;
        double* ob = out + b * n * d;
        for (std::size_t i = 0; i < n; ++i) {
            double* oi = ob + i * d;
            for (std::size_t j = 0; j < k; ++j) {
                long long src = conv_src((long long)i, (long long)j, (long long)k, causal);
                if (src < 0 || src >= (long long)n) continue;
                const double* xs = xb + (std::size_t)src * d;
                const double* wj = w + j;
                for (std::size_t c = 0; c < d; ++c) oi[c] += wj[c * k] * xs[c];
            }
        }
    }
}

// Per-position kernels with channel groups. x [B,n,d], kern [B,n,H,k].
inline void dynamic_depthwise_conv_raw(const double* x, const double* kern, double* out,
                                       std::size_t B, std::size_t n, std::size_t d, std::size_t H,
                                       std::size_t k, bool causal) {
    std::size_t group = d / H;
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x + b * n * d;
        const double* kb = kern + b * n * H * k;
        double* ob = out + b * n * d;
        for (std::size_t i = 0; i < n; ++i) {
            const double* ki = kb + i * H * k;
            double* oi = ob + i * d;
            for (std::size_t j = 0; j < k; ++j) {
                long long src = conv_src((long long)i, (long long)j, (long long)k, causal);
                if (src < 0 || src >= (long long)n) continue;
                const double* xs = xb + (std::size_t)src * d;
                for (std::size_t c = 0; c < d; ++c) oi[c] += ki[(c / group) * k + j] * xs[c];
            }
        }
    }
}

// Non-separable convolution. x [B,n,din], w [dout,din,k].
inline void conv_full_raw(const double* x, const double* w, double* out, std::size_t B,
                          std::size_t n, std::size_t din, std::size_t dout, std::size_t k,
                          bool causal) {
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x + b * n * din;
        double* ob = out + b * n * dout;
        for (std::size_t i = 0; i < n; ++i) {
            double* oi = ob + i * dout;
            for (std::size_t j = 0; j < k; ++j) {
                long long src = conv_src((long long)i, (long long)j, (long long)k, causal);
                if (src < 0 || src >= (long long)n) continue;
                const double* xs = xb + (std::size_t)src * din;
                for (std::size_t co = 0; co < dout; ++co) {
                    const double* wr = w + (co * din) * k + j;
                    double acc = 0.0;
                    for (std::size_t ci = 0; ci < din; ++ci) acc += wr[ci * k] * xs[ci];
                    oi[co] += acc;
                }
            }
        }
    }
}

}  // namespace convseq::kernels
