#pragma once

// 3D network building blocks with explicit forward/backward passes. The inner
// loops run over contiguous w-rows so the compiler can vectorize them; all
// accumulation orders are fixed, keeping results bit-reproducible.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "semivox/rng.hpp"
#include "semivox/tensor.hpp"

namespace semivox {

struct ParamRef {
    std::string name;
    std::vector<float>* value = nullptr;
    std::vector<float>* grad = nullptr;
};

// Cubical 3D convolution. Kernel 3 uses padding 1; kernels 1 and 2 use none.
// Stride 2 with kernel 2 is the downsampling step (halves even dims exactly).
struct Conv3d {
    int in_c = 0, out_c = 0, kernel = 3, stride = 1, pad = 0;
    std::vector<float> w, b, gw, gb;  // w layout [oc][ic][kd][kh][kw]

    Conv3d() = default;
    Conv3d(int in_channels, int out_channels, int k, int s)
        : in_c(in_channels), out_c(out_channels), kernel(k), stride(s), pad(k == 3 ? 1 : 0) {
        w.assign(static_cast<std::size_t>(out_c) * in_c * k * k * k, 0.0f);
        b.assign(static_cast<std::size_t>(out_c), 0.0f);
        gw.assign(w.size(), 0.0f);
        gb.assign(b.size(), 0.0f);
    }

    void init(RngEngine& eng) {
        // He-style uniform bound from fan-in.
        const double fan_in = static_cast<double>(in_c) * kernel * kernel * kernel;
        const double bound = std::sqrt(6.0 / fan_in);
        for (float& x : w) x = static_cast<float>(rng_uniform(eng, -bound, bound));
        for (float& x : b) x = 0.0f;
    }

    Dims3 out_dims(Dims3 in) const {
        auto one = [&](std::int32_t n) {
            return static_cast<std::int32_t>((n + 2 * pad - kernel) / stride + 1);
        };
        return Dims3{one(in.d), one(in.h), one(in.w)};
    }

    // Accumulates each output row completely before moving on, so large grids
    // are streamed once instead of once per kernel tap.
    void forward(const Tensor4& in, Tensor4& out) const {
        const Dims3 od = out_dims(in.sp);
        out = make_tensor(out_c, od);
        std::vector<float> rowbuf(static_cast<std::size_t>(od.w));
        std::int32_t w0[8], w1[8];
        for (int kw = 0; kw < kernel; ++kw) tap_range(od.w, in.sp.w, stride, pad, kw, w0[kw], w1[kw]);
        for (int oc = 0; oc < out_c; ++oc) {
            float* dst = out.chan(oc);
            const float* kch = &w[static_cast<std::size_t>(oc) * in_c * kernel * kernel * kernel];
            for (std::int32_t d = 0; d < od.d; ++d)
                for (std::int32_t h = 0; h < od.h; ++h) {
                    float* __restrict__ row = rowbuf.data();
                    for (std::int32_t x = 0; x < od.w; ++x) row[x] = b[oc];
                    for (int ic = 0; ic < in_c; ++ic) {
                        const float* src = in.chan(ic);
                        const float* ker = kch + static_cast<std::size_t>(ic) * kernel * kernel * kernel;
                        for (int kd = 0; kd < kernel; ++kd) {
                            const std::int32_t sd = stride * d - pad + kd;
                            if (sd < 0 || sd >= in.sp.d) continue;
                            for (int kh = 0; kh < kernel; ++kh) {
                                const std::int32_t sh = stride * h - pad + kh;
                                if (sh < 0 || sh >= in.sp.h) continue;
                                const float* irow = src + flat_index(in.sp, sd, sh, 0);
                                for (int kw = 0; kw < kernel; ++kw) {
                                    const float wk = ker[(kd * kernel + kh) * kernel + kw];
                                    const int off = kw - pad;
                                    if (stride == 1) {
                                        const float* __restrict__ ir = irow + off;
                                        for (std::int32_t x = w0[kw]; x < w1[kw]; ++x)
                                            row[x] += wk * ir[x];
                                    } else {
                                        for (std::int32_t x = w0[kw]; x < w1[kw]; ++x)
                                            row[x] += wk * irow[stride * x + off];
                                    }
                                }
                            }
                        }
                    }
                    float* orow = dst + flat_index(od, d, h, 0);
                    for (std::int32_t x = 0; x < od.w; ++x) orow[x] = row[x];
                }
        }
    }

    // dOut -> gw, gb (accumulated) and optionally dIn (accumulated).
    void backward(const Tensor4& in, const Tensor4& dout, Tensor4* din) {
        const Dims3 od = dout.sp;
        const std::int64_t ovox = od.voxels();
        for (int oc = 0; oc < out_c; ++oc) {
            const float* g = dout.chan(oc);
            double acc = 0;
            for (std::int64_t i = 0; i < ovox; ++i) acc += g[i];
            gb[oc] += static_cast<float>(acc);
            for (int ic = 0; ic < in_c; ++ic) {
                const float* src = in.chan(ic);
                const std::size_t kbase = ((static_cast<std::size_t>(oc) * in_c) + ic) *
                                          kernel * kernel * kernel;
                weight_grad(src, in.sp, g, od, &gw[kbase]);
                if (din) {
                    const float* ker = &w[kbase];
                    scatter_input_grad(g, od, ker, din->chan(ic), in.sp);
                }
            }
        }
    }

    std::vector<ParamRef> params(const std::string& prefix) {
        return {{prefix + ".w", &w, &gw}, {prefix + ".b", &b, &gb}};
    }

  private:
    // Valid output range for one kernel tap: in = stride*out - pad + k in [0, n).
    static void tap_range(std::int32_t n_out, std::int32_t n_in, int stride, int pad, int k,
                          std::int32_t& lo, std::int32_t& hi) {
        lo = 0;
        while (lo < n_out && stride * lo - pad + k < 0) ++lo;
        hi = n_out;
        while (hi > lo && stride * (hi - 1) - pad + k >= n_in) --hi;
    }

    // in-grad(i) += sum_k w[k] * dout(o) over the valid output positions.
    void scatter_input_grad(const float* dout, Dims3 od, const float* ker, float* din,
                            Dims3 id) const {
        for (int kd = 0; kd < kernel; ++kd)
            for (int kh = 0; kh < kernel; ++kh)
                for (int kw = 0; kw < kernel; ++kw) {
                    const float wk = ker[(kd * kernel + kh) * kernel + kw];
                    if (wk == 0.0f) continue;
                    tap_backward(dout, od, wk, din, id, kd, kh, kw);
                }
    }

    void tap_backward(const float* dout, Dims3 od, float wk, float* din, Dims3 id, int kd, int kh,
                      int kw) const {
        std::int32_t d0, d1, h0, h1, w0, w1;
        tap_range(od.d, id.d, stride, pad, kd, d0, d1);
        tap_range(od.h, id.h, stride, pad, kh, h0, h1);
        tap_range(od.w, id.w, stride, pad, kw, w0, w1);
        for (std::int32_t d = d0; d < d1; ++d) {
            const std::int32_t sd = stride * d - pad + kd;
            for (std::int32_t h = h0; h < h1; ++h) {
                const std::int32_t sh = stride * h - pad + kh;
                const float* grow = dout + flat_index(od, d, h, 0);
                float* irow = din + flat_index(id, sd, sh, stride * w0 - pad + kw);
                if (stride == 1) {
                    for (std::int32_t x = w0; x < w1; ++x, ++irow) *irow += wk * grow[x];
                } else {
                    for (std::int32_t x = w0; x < w1; ++x, irow += stride) *irow += wk * grow[x];
                }
            }
        }
    }

    void weight_grad(const float* in, Dims3 id, const float* dout, Dims3 od, float* gker) const {
        for (int kd = 0; kd < kernel; ++kd)
            for (int kh = 0; kh < kernel; ++kh)
                for (int kw = 0; kw < kernel; ++kw) {
                    std::int32_t d0, d1, h0, h1, w0, w1;
                    tap_range(od.d, id.d, stride, pad, kd, d0, d1);
                    tap_range(od.h, id.h, stride, pad, kh, h0, h1);
                    tap_range(od.w, id.w, stride, pad, kw, w0, w1);
                    double acc = 0;
                    for (std::int32_t d = d0; d < d1; ++d) {
                        const std::int32_t sd = stride * d - pad + kd;
                        for (std::int32_t h = h0; h < h1; ++h) {
                            const std::int32_t sh = stride * h - pad + kh;
                            const float* grow = dout + flat_index(od, d, h, 0);
                            const float* irow =
                                in + flat_index(id, sd, sh, stride * w0 - pad + kw);
                            if (stride == 1) {
                                for (std::int32_t x = w0; x < w1; ++x, ++irow)
                                    acc += static_cast<double>(grow[x]) * *irow;
                            } else {
                                for (std::int32_t x = w0; x < w1; ++x, irow += stride)
                                    acc += static_cast<double>(grow[x]) * *irow;
                            }
                        }
                    }
                    gker[(kd * kernel + kh) * kernel + kw] += static_cast<float>(acc);
                }
    }
};

inline void relu_inplace(Tensor4& t) {
    for (float& x : t.v)
        if (x < 0) x = 0;
}

// Parameter-free instance normalization: each channel is standardized by its
// own spatial mean and variance. No running statistics, so results stay
// deterministic and batch-independent.
constexpr double kInstanceNormEps = 1e-5;

inline void instance_norm_inplace(Tensor4& t, std::vector<float>* inv_sigma = nullptr) {
    const std::int64_t n = t.spatial();
    if (inv_sigma) inv_sigma->resize(static_cast<std::size_t>(t.channels));
    for (int c = 0; c < t.channels; ++c) {
        float* x = t.chan(c);
        double sum = 0, sq = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            sum += x[i];
            sq += static_cast<double>(x[i]) * x[i];
        }
        const double mean = sum / n;
        const double var = std::max(0.0, sq / n - mean * mean);
        const float inv = static_cast<float>(1.0 / std::sqrt(var + kInstanceNormEps));
        if (inv_sigma) (*inv_sigma)[static_cast<std::size_t>(c)] = inv;
        const float mu = static_cast<float>(mean);
        for (std::int64_t i = 0; i < n; ++i) x[i] = (x[i] - mu) * inv;
    }
}

// normalized holds the forward output x_hat; standard whitening backward:
// dx = inv_sigma * (dy - mean(dy) - x_hat * mean(dy * x_hat)).
inline Tensor4 instance_norm_backward(const Tensor4& normalized,
                                      const std::vector<float>& inv_sigma, const Tensor4& dy) {
    const std::int64_t n = normalized.spatial();
    Tensor4 dx = make_tensor(normalized.channels, normalized.sp);
    for (int c = 0; c < normalized.channels; ++c) {
        const float* xh = normalized.chan(c);
        const float* g = dy.chan(c);
        float* out = dx.chan(c);
        double gsum = 0, gdot = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            gsum += g[i];
            gdot += static_cast<double>(g[i]) * xh[i];
        }
        const float gmean = static_cast<float>(gsum / n);
        const float gxmean = static_cast<float>(gdot / n);
        const float inv = inv_sigma[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < n; ++i)
            out[i] = inv * (g[i] - gmean - xh[i] * gxmean);
    }
    return dx;
}

// Uses the forward output (post-activation) as the mask.
inline void relu_backward_inplace(const Tensor4& out, Tensor4& dout) {
    for (std::size_t i = 0; i < dout.v.size(); ++i)
        if (out.v[i] <= 0) dout.v[i] = 0;
}

inline Tensor4 upsample2_nearest(const Tensor4& in) {
    Tensor4 out = make_tensor(in.channels, {in.sp.d * 2, in.sp.h * 2, in.sp.w * 2});
    for (int c = 0; c < in.channels; ++c) {
        const float* src = in.chan(c);
        float* dst = out.chan(c);
        for (std::int32_t d = 0; d < out.sp.d; ++d)
            for (std::int32_t h = 0; h < out.sp.h; ++h) {
                const float* srow = src + flat_index(in.sp, d / 2, h / 2, 0);
                float* drow = dst + flat_index(out.sp, d, h, 0);
                for (std::int32_t w = 0; w < out.sp.w; ++w) drow[w] = srow[w / 2];
            }
    }
    return out;
}

inline Tensor4 upsample2_nearest_backward(const Tensor4& dout, Dims3 in_sp) {
    Tensor4 din = make_tensor(dout.channels, in_sp);
    for (int c = 0; c < dout.channels; ++c) {
        const float* g = dout.chan(c);
        float* dst = din.chan(c);
        for (std::int32_t d = 0; d < dout.sp.d; ++d)
            for (std::int32_t h = 0; h < dout.sp.h; ++h) {
                float* drow = dst + flat_index(in_sp, d / 2, h / 2, 0);
                const float* grow = g + flat_index(dout.sp, d, h, 0);
                for (std::int32_t w = 0; w < dout.sp.w; ++w) drow[w / 2] += grow[w];
            }
    }
    return din;
}

inline void add_inplace(Tensor4& a, const Tensor4& b) {
    if (a.channels != b.channels || !(a.sp == b.sp))
        throw std::invalid_argument("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

}  // namespace semivox
