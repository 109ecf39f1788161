#pragma once

#include <cblas.h>

#include <cmath>
#include <vector>

#include "onp/tensor.hpp"

namespace onp::nn {

// Activations are stored channel-major over the batch: [C][N][H*W]. Per-image
// column blocks keep one GEMM per layer per batch and make per-channel
// normalization contiguous.

struct ConvDims {
    int c_in, c_out, kh, kw, stride, pad;
    int h_in, w_in, h_out, w_out;

    static ConvDims make(int c_in, int c_out, int kh, int kw, int stride, int pad, int h_in,
                         int w_in) {
        ConvDims d{c_in, c_out, kh, kw, stride, pad, h_in, w_in, 0, 0};
        d.h_out = (h_in + 2 * pad - kh) / stride + 1;
        d.w_out = (w_in + 2 * pad - kw) / stride + 1;
        return d;
    }
    int k() const { return c_in * kh * kw; }
    int hw_out() const { return h_out * w_out; }
    int hw_in() const { return h_in * w_in; }
};

// col layout: [c_in*kh*kw][N*h_out*w_out], image n occupying the column block
// [n*hw_out, (n+1)*hw_out).
inline void im2col(const ConvDims& d, const float* x, int n_batch, float* col) {
    const int hw_out = d.hw_out();
    const size_t cols = static_cast<size_t>(n_batch) * hw_out;
    for (int ci = 0; ci < d.c_in; ++ci) {
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                float* dst = col + (static_cast<size_t>(ci) * d.kh * d.kw + ky * d.kw + kx) * cols;
                for (int n = 0; n < n_batch; ++n) {
                    const float* src = x + (static_cast<size_t>(ci) * n_batch + n) * d.hw_in();
                    float* out = dst + static_cast<size_t>(n) * hw_out;
                    for (int oy = 0; oy < d.h_out; ++oy) {
                        const int iy = oy * d.stride - d.pad + ky;
                        if (iy < 0 || iy >= d.h_in) {
                            for (int ox = 0; ox < d.w_out; ++ox) out[oy * d.w_out + ox] = 0.0f;
                            continue;
                        }
                        const float* row = src + static_cast<size_t>(iy) * d.w_in;
                        for (int ox = 0; ox < d.w_out; ++ox) {
                            const int ix = ox * d.stride - d.pad + kx;
                            out[oy * d.w_out + ox] =
                                (ix >= 0 && ix < d.w_in) ? row[ix] : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add transpose of im2col; dcol is consumed, dx accumulated.
inline void col2im_add(const ConvDims& d, const float* dcol, int n_batch, float* dx) {
    const int hw_out = d.hw_out();
    const size_t cols = static_cast<size_t>(n_batch) * hw_out;
    for (int ci = 0; ci < d.c_in; ++ci) {
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const float* src =
                    dcol + (static_cast<size_t>(ci) * d.kh * d.kw + ky * d.kw + kx) * cols;
                for (int n = 0; n < n_batch; ++n) {
                    float* dst = dx + (static_cast<size_t>(ci) * n_batch + n) * d.hw_in();
                    const float* in = src + static_cast<size_t>(n) * hw_out;
                    for (int oy = 0; oy < d.h_out; ++oy) {
                        const int iy = oy * d.stride - d.pad + ky;
                        if (iy < 0 || iy >= d.h_in) continue;
                        float* row = dst + static_cast<size_t>(iy) * d.w_in;
                        for (int ox = 0; ox < d.w_out; ++ox) {
                            const int ix = ox * d.stride - d.pad + kx;
                            if (ix >= 0 && ix < d.w_in) row[ix] += in[oy * d.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

// y[c_out][N*hw_out] = W[c_out][k] * col[k][N*hw_out]
inline void conv_gemm_forward(const ConvDims& d, const float* weight, const float* col,
                              int n_batch, float* y) {
    const int n_cols = n_batch * d.hw_out();
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, d.c_out, n_cols, d.k(), 1.0f, weight,
                d.k(), col, n_cols, 0.0f, y, n_cols);
}

// dW += dY * col^T ; dcol = W^T * dY
inline void conv_gemm_backward(const ConvDims& d, const float* weight, const float* col,
                               const float* dy, int n_batch, float* dweight, float* dcol) {
    const int n_cols = n_batch * d.hw_out();
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, d.c_out, d.k(), n_cols, 1.0f, dy, n_cols,
                col, n_cols, 1.0f, dweight, d.k());
    if (dcol)
        cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, d.k(), n_cols, d.c_out, 1.0f, weight,
                    d.k(), dy, n_cols, 0.0f, dcol, n_cols);
}

constexpr float kNormEps = 1e-5f;

struct NormStats {
    std::vector<float> mean;    // per channel, batch stats saved for backward
    std::vector<float> invstd;
};

// Per-channel normalization with affine scale/shift. Training mode uses batch
// statistics over [N*hw] and updates running stats in place.
inline void norm_forward(int channels, size_t per_channel, float* y, const float* scale,
                         const float* shift, float* running_mean, float* running_var,
                         bool training, float momentum, NormStats* saved) {
    if (saved) {
        saved->mean.assign(static_cast<size_t>(channels), 0.0f);
        saved->invstd.assign(static_cast<size_t>(channels), 0.0f);
    }
    for (int c = 0; c < channels; ++c) {
        float* row = y + static_cast<size_t>(c) * per_channel;
        float mean, invstd;
        if (training) {
            double s = 0.0, s2 = 0.0;
            for (size_t i = 0; i < per_channel; ++i) {
                s += row[i];
                s2 += static_cast<double>(row[i]) * row[i];
            }
            mean = static_cast<float>(s / per_channel);
            const float var = static_cast<float>(s2 / per_channel) - mean * mean;
            invstd = 1.0f / std::sqrt(std::max(var, 0.0f) + kNormEps);
            running_mean[c] = (1.0f - momentum) * running_mean[c] + momentum * mean;
            running_var[c] = (1.0f - momentum) * running_var[c] + momentum * std::max(var, 0.0f);
        } else {
            mean = running_mean[c];
            invstd = 1.0f / std::sqrt(running_var[c] + kNormEps);
        }
        if (saved) {
            saved->mean[static_cast<size_t>(c)] = mean;
            saved->invstd[static_cast<size_t>(c)] = invstd;
        }
        const float a = scale[c] * invstd;
        const float b = shift[c] - scale[c] * invstd * mean;
        for (size_t i = 0; i < per_channel; ++i) row[i] = a * row[i] + b;
    }
}

// Backward through training-mode normalization. y_pre is the pre-norm input,
// dy is consumed and replaced with dx.
inline void norm_backward_train(int channels, size_t per_channel, const float* y_pre, float* dy,
                                const float* scale, const NormStats& saved, float* dscale,
                                float* dshift) {
    const double m = static_cast<double>(per_channel);
    for (int c = 0; c < channels; ++c) {
        const float* x = y_pre + static_cast<size_t>(c) * per_channel;
        float* g = dy + static_cast<size_t>(c) * per_channel;
        const float mean = saved.mean[static_cast<size_t>(c)];
        const float invstd = saved.invstd[static_cast<size_t>(c)];
        double sum_g = 0.0, sum_gx = 0.0;
        for (size_t i = 0; i < per_channel; ++i) {
            sum_g += g[i];
            sum_gx += static_cast<double>(g[i]) * (x[i] - mean) * invstd;
        }
        dshift[c] += static_cast<float>(sum_g);
        dscale[c] += static_cast<float>(sum_gx);
        const float k1 = scale[c] * invstd;
        const float gmean = static_cast<float>(sum_g / m);
        const float gxmean = static_cast<float>(sum_gx / m);
        for (size_t i = 0; i < per_channel; ++i) {
            const float xhat = (x[i] - mean) * invstd;
            g[i] = k1 * (g[i] - gmean - xhat * gxmean);
        }
    }
}

// Backward through eval-mode normalization (fixed affine).
inline void norm_backward_eval(int channels, size_t per_channel, float* dy, const float* scale,
                               const float* running_var) {
    for (int c = 0; c < channels; ++c) {
        const float a = scale[c] / std::sqrt(running_var[c] + kNormEps);
        float* g = dy + static_cast<size_t>(c) * per_channel;
        for (size_t i = 0; i < per_channel; ++i) g[i] *= a;
    }
}

inline void relu_forward(float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

// dx = dy .* [out > 0], given the post-relu output
inline void relu_backward(const float* out, float* dy, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (out[i] <= 0.0f) dy[i] = 0.0f;
}

}  // namespace onp::nn
