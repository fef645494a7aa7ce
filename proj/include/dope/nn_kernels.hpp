#pragma once

#include <cstdint>
#include <vector>

#include "dope/parallel.hpp"

namespace dope::ad {

/// C(M x N) += A(M x K) * B(K x N), row-major. The k-loop is unrolled by 4 so
/// each pass over a C row does 4 fused multiply-adds per load/store.
template <typename T>
void gemm_acc(T* c, const T* a, const T* b, int m, int k, int n) {
    auto rows = [=](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t i = r0; i < r1; ++i) {
            T* crow = c + i * n;
            const T* arow = a + i * k;
            int kk = 0;
            for (; kk + 4 <= k; kk += 4) {
                const T a0 = arow[kk], a1 = arow[kk + 1], a2 = arow[kk + 2], a3 = arow[kk + 3];
                const T* b0 = b + static_cast<std::int64_t>(kk) * n;
                const T* b1 = b0 + n;
                const T* b2 = b1 + n;
                const T* b3 = b2 + n;
                for (int j = 0; j < n; ++j)
                    crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            for (; kk < k; ++kk) {
                const T a0 = arow[kk];
                const T* b0 = b + static_cast<std::int64_t>(kk) * n;
                for (int j = 0; j < n; ++j) crow[j] += a0 * b0[j];
            }
        }
    };
    const std::int64_t flops = static_cast<std::int64_t>(m) * k * n;
    if (flops >= (1 << 16) && m >= 2)
        ThreadPool::instance().parallel_ranges(m, rows);
    else
        rows(0, m);
}

struct ConvDims {
    int c_in = 0, h = 0, w = 0;
    int c_out = 0, kh = 0, kw = 0;
    int stride = 1, pad = 0;
    int h_out = 0, w_out = 0;

    static ConvDims make(int c_in, int h, int w, int c_out, int kh, int kw, int stride,
                         int pad) {
        ConvDims d{c_in, h, w, c_out, kh, kw, stride, pad};
        d.h_out = (h + 2 * pad - kh) / stride + 1;
        d.w_out = (w + 2 * pad - kw) / stride + 1;
        return d;
    }
    int patch() const { return c_in * kh * kw; }
    int positions() const { return h_out * w_out; }
};

/// col(K x P) with K = c_in*kh*kw and P = h_out*w_out. Zero padding.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
    const int p = d.positions();
    for (int ic = 0; ic < d.c_in; ++ic) {
        const T* xc = x + static_cast<std::int64_t>(ic) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                T* row = col + (static_cast<std::int64_t>(ic) * d.kh * d.kw + ky * d.kw + kx) * p;
                for (int oy = 0; oy < d.h_out; ++oy) {
                    const int iy = oy * d.stride + ky - d.pad;
                    T* out = row + static_cast<std::int64_t>(oy) * d.w_out;
                    if (iy < 0 || iy >= d.h) {
                        for (int ox = 0; ox < d.w_out; ++ox) out[ox] = T(0);
                        continue;
                    }
                    const T* in = xc + static_cast<std::int64_t>(iy) * d.w;
                    for (int ox = 0; ox < d.w_out; ++ox) {
                        const int ix = ox * d.stride + kx - d.pad;
                        out[ox] = (ix >= 0 && ix < d.w) ? in[ix] : T(0);
                    }
                }
            }
        }
    }
}

/// Scatter-add of a col gradient back into the input gradient.
template <typename T>
void col2im_acc(const T* dcol, const ConvDims& d, T* dx) {
    const int p = d.positions();
    // Parallel over input channels: each channel's patch rows are disjoint.
    auto chans = [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t ic = c0; ic < c1; ++ic) {
            T* xc = dx + ic * d.h * d.w;
            for (int ky = 0; ky < d.kh; ++ky) {
                for (int kx = 0; kx < d.kw; ++kx) {
                    const T* row = dcol + (ic * d.kh * d.kw + ky * d.kw + kx) * p;
                    for (int oy = 0; oy < d.h_out; ++oy) {
                        const int iy = oy * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= d.h) continue;
                        const T* in = row + static_cast<std::int64_t>(oy) * d.w_out;
                        T* out = xc + static_cast<std::int64_t>(iy) * d.w;
                        for (int ox = 0; ox < d.w_out; ++ox) {
                            const int ix = ox * d.stride + kx - d.pad;
                            if (ix >= 0 && ix < d.w) out[ix] += in[ox];
                        }
                    }
                }
            }
        }
    };
    if (static_cast<std::int64_t>(d.c_in) * d.kh * d.kw * p >= (1 << 16) && d.c_in >= 2)
        ThreadPool::instance().parallel_ranges(d.c_in, chans);
    else
        chans(0, d.c_in);
}

/// Reusable per-thread scratch, so the hot path stops hitting the allocator
/// (buffers this size would otherwise be mmap'ed and unmapped every call).
template <typename T>
std::vector<T>& conv_scratch(int slot) {
    thread_local std::vector<T> bufs[3];
    return bufs[slot];
}

/// out(c_out x P) = w(c_out x K) * col(K x P) + bias.
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, const ConvDims& d, T* out,
                    std::vector<T>& col_scratch) {
    const int p = d.positions();
    const int k = d.patch();
    const T* col = x;
    if (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0) {
        // 1x1 conv: the input already is the col matrix.
    } else {
        col_scratch.resize(static_cast<std::size_t>(k) * p);
        im2col(x, d, col_scratch.data());
        col = col_scratch.data();
    }
    for (int oc = 0; oc < d.c_out; ++oc) {
        T* row = out + static_cast<std::int64_t>(oc) * p;
        const T b = bias[oc];
        for (int j = 0; j < p; ++j) row[j] = b;
    }
    gemm_acc(out, w, col, d.c_out, k, p);
}

/// Accumulates input/weight/bias gradients. Pass nullptr to skip a target.
template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dout, const ConvDims& d, T* dx, T* dw,
                     T* db) {
    const int p = d.positions();
    const int k = d.patch();
    const bool is1x1 = d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0;

    if (db) {
        for (int oc = 0; oc < d.c_out; ++oc) {
            const T* row = dout + static_cast<std::int64_t>(oc) * p;
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            int j = 0;
            for (; j + 4 <= p; j += 4) {
                s0 += row[j];
                s1 += row[j + 1];
                s2 += row[j + 2];
                s3 += row[j + 3];
            }
            for (; j < p; ++j) s0 += row[j];
            db[oc] += (s0 + s1) + (s2 + s3);
        }
    }

    if (dw) {
        // dW(c_out x K) += dout(c_out x P) * colT(P x K); build the transposed
        // col so the inner loop is a contiguous axpy.
        std::vector<T>& col = conv_scratch<T>(0);
        const T* colp = x;
        if (!is1x1) {
            col.resize(static_cast<std::size_t>(k) * p);
            im2col(x, d, col.data());
            colp = col.data();
        }
        std::vector<T>& colT = conv_scratch<T>(1);
        colT.resize(static_cast<std::size_t>(p) * k);
        for (int kk = 0; kk < k; ++kk)
            for (int j = 0; j < p; ++j) colT[static_cast<std::size_t>(j) * k + kk] =
                colp[static_cast<std::size_t>(kk) * p + j];
        gemm_acc(dw, dout, colT.data(), d.c_out, p, k);
    }

    if (dx) {
        std::vector<T>& dcol = conv_scratch<T>(2);
        dcol.assign(static_cast<std::size_t>(k) * p, T(0));
        // dcol(K x P) += wT(K x c_out) * dout(c_out x P)
        auto krows = [&](std::int64_t k0, std::int64_t k1) {
            for (std::int64_t kk = k0; kk < k1; ++kk) {
                T* row = dcol.data() + kk * p;
                for (int oc = 0; oc < d.c_out; ++oc) {
                    const T wv = w[static_cast<std::int64_t>(oc) * k + kk];
                    const T* g = dout + static_cast<std::int64_t>(oc) * p;
                    for (int j = 0; j < p; ++j) row[j] += wv * g[j];
                }
            }
        };
        if (static_cast<std::int64_t>(k) * d.c_out * p >= (1 << 16) && k >= 2)
            ThreadPool::instance().parallel_ranges(k, krows);
        else
            krows(0, k);
        if (is1x1) {
            for (std::size_t i = 0; i < dcol.size(); ++i) dx[i] += dcol[i];
        } else {
            col2im_acc(dcol.data(), d, dx);
        }
    }
}

} // namespace dope::ad
