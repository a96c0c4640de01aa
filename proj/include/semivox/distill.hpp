#pragma once

// Feature distillation from a frozen 2D foundation teacher: the teacher
// interface, a deterministic fixture implementation for tests and desk runs,
// a thin adapter that loads exported patch-embedding weights, the slice-wise
// 3D feature extraction pipeline, the trainable channel projector, and the
// normalized feature-matching loss.

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "semivox/layers.hpp"
#include "semivox/tensor.hpp"
#include "semivox/volume.hpp"

namespace semivox {

struct Image2D {
    int h = 0, w = 0;
    std::vector<float> v;
    float at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    float& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
};

struct Feature2D {
    int channels = 0, h = 0, w = 0;
    std::vector<float> v;  // [c][y][x]
    float at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    float& at(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
};

// Frozen slice featurizer. Implementations hold no trainable state; featurize
// must be deterministic, and param_digest must not change over a training run.
class FoundationTeacher {
  public:
    virtual ~FoundationTeacher() = default;
    virtual Feature2D featurize(const Image2D& slice) const = 0;
    virtual int channels() const = 0;
    virtual int input_resolution() const = 0;
    virtual std::uint64_t param_digest() const = 0;
};

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

// Deterministic local-statistics featurizer: the input is divided into a grid
// of square cells; per cell the statistics (mean, variance, mean forward
// difference along each axis) pass through a fixed random linear map drawn
// once from the seed. Constant inputs yield the same feature vector at every
// grid location.
class FixtureTeacher final : public FoundationTeacher {
  public:
    FixtureTeacher(int feature_channels = 16, int input_resolution = 32, int cell = 4,
                   std::uint64_t seed = 0x5eedbea7ULL)
        : c_t_(feature_channels), res_(input_resolution), cell_(cell) {
        if (c_t_ < 1 || res_ < 1 || cell_ < 1 || res_ % cell_ != 0)
            throw std::invalid_argument("FixtureTeacher: resolution must be a multiple of cell");
        RngEngine eng = make_engine(seed);
        weight_.resize(static_cast<std::size_t>(c_t_) * 4);
        bias_.resize(static_cast<std::size_t>(c_t_));
        for (float& x : weight_) x = static_cast<float>(rng_uniform(eng, -1.0, 1.0));
        for (float& x : bias_) x = static_cast<float>(rng_uniform(eng, -0.1, 0.1));
    }

    Feature2D featurize(const Image2D& slice) const override {
        if (slice.h != res_ || slice.w != res_)
            throw std::invalid_argument("FixtureTeacher: expected " + std::to_string(res_) + "x" +
                                        std::to_string(res_) + " slice, got " +
                                        std::to_string(slice.h) + "x" + std::to_string(slice.w));
        const int g = res_ / cell_;
        Feature2D out;
        out.channels = c_t_;
        out.h = out.w = g;
        out.v.assign(static_cast<std::size_t>(c_t_) * g * g, 0.0f);
        for (int cy = 0; cy < g; ++cy)
            for (int cx = 0; cx < g; ++cx) {
                double stats[4] = {0, 0, 0, 0};
                const int y0 = cy * cell_, x0 = cx * cell_;
                for (int y = 0; y < cell_; ++y)
                    for (int x = 0; x < cell_; ++x) stats[0] += slice.at(y0 + y, x0 + x);
                stats[0] /= cell_ * cell_;
                for (int y = 0; y < cell_; ++y)
                    for (int x = 0; x < cell_; ++x) {
                        const double dv = slice.at(y0 + y, x0 + x) - stats[0];
                        stats[1] += dv * dv;
                    }
                stats[1] /= cell_ * cell_;
                if (cell_ > 1) {
                    for (int y = 0; y + 1 < cell_; ++y)
                        for (int x = 0; x < cell_; ++x)
                            stats[2] += slice.at(y0 + y + 1, x0 + x) - slice.at(y0 + y, x0 + x);
                    stats[2] /= static_cast<double>((cell_ - 1) * cell_);
                    for (int y = 0; y < cell_; ++y)
                        for (int x = 0; x + 1 < cell_; ++x)
                            stats[3] += slice.at(y0 + y, x0 + x + 1) - slice.at(y0 + y, x0 + x);
                    stats[3] /= static_cast<double>(cell_ * (cell_ - 1));
                }
                for (int c = 0; c < c_t_; ++c) {
                    double acc = bias_[c];
                    for (int s = 0; s < 4; ++s) acc += weight_[c * 4 + s] * stats[s];
                    out.at(c, cy, cx) = static_cast<float>(acc);
                }
            }
        return out;
    }

    int channels() const override { return c_t_; }
    int input_resolution() const override { return res_; }
    std::uint64_t param_digest() const override {
        std::uint64_t h = 1469598103934665603ULL;
        h = detail::fnv1a(h, weight_.data(), weight_.size() * sizeof(float));
        h = detail::fnv1a(h, bias_.data(), bias_.size() * sizeof(float));
        return h;
    }

  private:
    int c_t_, res_, cell_;
    std::vector<float> weight_;  // c_t x 4
    std::vector<float> bias_;
};

// Thin adapter around an exported frozen patch-embedding layer.
//
// Weight file layout (little-endian):
//   magic "SVWT", then uint32 feature channels C_T, uint32 patch size P,
//   uint32 input resolution R (multiple of P), float32 normalization mean,
//   float32 normalization std, then C_T x (3*P*P) float32 weights and C_T
//   float32 biases.
//
// Slices are normalized as (x - mean) / std (the constants ship inside the
// weight file), replicated to 3 channels, and embedded per non-overlapping
// P x P patch. Output spatial resolution is R/P per axis.
class PretrainedVitAdapter final : public FoundationTeacher {
  public:
    explicit PretrainedVitAdapter(const std::string& weights_path) {
        std::ifstream f(weights_path, std::ios::binary);
        if (!f) throw std::runtime_error("PretrainedVitAdapter: cannot open " + weights_path);
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        if (bytes.size() < 24 || bytes.compare(0, 4, "SVWT") != 0)
            throw std::runtime_error("PretrainedVitAdapter: unrecognized weight file " +
                                     weights_path);
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
        auto u32 = [&](std::size_t off) {
            return static_cast<std::uint32_t>(p[off]) | (std::uint32_t(p[off + 1]) << 8) |
                   (std::uint32_t(p[off + 2]) << 16) | (std::uint32_t(p[off + 3]) << 24);
        };
        auto f32 = [&](std::size_t off) { return std::bit_cast<float>(u32(off)); };
        c_t_ = static_cast<int>(u32(4));
        patch_ = static_cast<int>(u32(8));
        res_ = static_cast<int>(u32(12));
        mean_ = f32(16);
        std_ = f32(20);
        if (c_t_ < 1 || patch_ < 1 || res_ < patch_ || res_ % patch_ != 0 || !(std_ > 0))
            throw std::runtime_error("PretrainedVitAdapter: invalid header in " + weights_path);
        const std::size_t wn = static_cast<std::size_t>(c_t_) * 3 * patch_ * patch_;
        if (bytes.size() != 24 + (wn + c_t_) * 4)
            throw std::runtime_error("PretrainedVitAdapter: truncated weight file " +
                                     weights_path);
        weight_.resize(wn);
        bias_.resize(static_cast<std::size_t>(c_t_));
        std::size_t off = 24;
        for (float& x : weight_) { x = f32(off); off += 4; }
        for (float& x : bias_) { x = f32(off); off += 4; }
    }

    Feature2D featurize(const Image2D& slice) const override {
        if (slice.h != res_ || slice.w != res_)
            throw std::invalid_argument("PretrainedVitAdapter: expected " + std::to_string(res_) +
                                        "x" + std::to_string(res_) + " slice");
        const int g = res_ / patch_;
        const int pp = patch_ * patch_;
        Feature2D out;
        out.channels = c_t_;
        out.h = out.w = g;
        out.v.assign(static_cast<std::size_t>(c_t_) * g * g, 0.0f);
        std::vector<double> vec(static_cast<std::size_t>(pp));
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                for (int y = 0; y < patch_; ++y)
                    for (int x = 0; x < patch_; ++x)
                        vec[static_cast<std::size_t>(y) * patch_ + x] =
                            (slice.at(gy * patch_ + y, gx * patch_ + x) - mean_) / std_;
                for (int c = 0; c < c_t_; ++c) {
                    double acc = bias_[c];
                    const float* wrow = &weight_[static_cast<std::size_t>(c) * 3 * pp];
                    for (int ch = 0; ch < 3; ++ch)  // replicated grayscale channels
                        for (int i = 0; i < pp; ++i) acc += wrow[ch * pp + i] * vec[i];
                    out.at(c, gy, gx) = static_cast<float>(acc);
                }
            }
        return out;
    }

    int channels() const override { return c_t_; }
    int input_resolution() const override { return res_; }
    std::uint64_t param_digest() const override {
        std::uint64_t h = 1469598103934665603ULL;
        h = detail::fnv1a(h, weight_.data(), weight_.size() * sizeof(float));
        h = detail::fnv1a(h, bias_.data(), bias_.size() * sizeof(float));
        h = detail::fnv1a(h, &mean_, sizeof mean_);
        h = detail::fnv1a(h, &std_, sizeof std_);
        return h;
    }

  private:
    int c_t_ = 0, patch_ = 0, res_ = 0;
    float mean_ = 0, std_ = 1;
    std::vector<float> weight_;  // c_t x (3 * patch * patch)
    std::vector<float> bias_;
};

inline Image2D resize_bilinear(const Image2D& in, int out_h, int out_w) {
    Image2D out;
    out.h = out_h;
    out.w = out_w;
    out.v.resize(static_cast<std::size_t>(out_h) * out_w);
    const double sy = static_cast<double>(in.h) / out_h;
    const double sx = static_cast<double>(in.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(in.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, in.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(in.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, in.w - 1);
            const double wx = fx - x0;
            const double top = in.at(y0, x0) * (1 - wx) + in.at(y0, x1) * wx;
            const double bot = in.at(y1, x0) * (1 - wx) + in.at(y1, x1) * wx;
            out.at(y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
        }
    }
    return out;
}

// Adaptive average pooling: output cell (i) averages input indices
// [floor(i*n/m), ceil((i+1)*n/m)). Identity when n == m.
inline Tensor4 adaptive_avg_pool(const Tensor4& in, Dims3 target) {
    if (target.d < 1 || target.h < 1 || target.w < 1)
        throw std::invalid_argument("adaptive_avg_pool: target dims must be positive");
    auto lo = [](std::int64_t i, std::int64_t n, std::int64_t m) { return (i * n) / m; };
    auto hi = [](std::int64_t i, std::int64_t n, std::int64_t m) {
        return ((i + 1) * n + m - 1) / m;
    };
    Tensor4 out = make_tensor(in.channels, target);
    for (int c = 0; c < in.channels; ++c) {
        const float* src = in.chan(c);
        float* dst = out.chan(c);
        for (std::int32_t d = 0; d < target.d; ++d) {
            const std::int64_t d0 = lo(d, in.sp.d, target.d), d1 = hi(d, in.sp.d, target.d);
            for (std::int32_t h = 0; h < target.h; ++h) {
                const std::int64_t h0 = lo(h, in.sp.h, target.h), h1 = hi(h, in.sp.h, target.h);
                for (std::int32_t w = 0; w < target.w; ++w) {
                    const std::int64_t w0 = lo(w, in.sp.w, target.w), w1 = hi(w, in.sp.w, target.w);
                    double acc = 0;
                    for (std::int64_t dd = d0; dd < d1; ++dd)
                        for (std::int64_t hh = h0; hh < h1; ++hh)
                            for (std::int64_t ww = w0; ww < w1; ++ww)
                                acc += src[flat_index(in.sp, std::int32_t(dd), std::int32_t(hh),
                                                      std::int32_t(ww))];
                    dst[flat_index(target, d, h, w)] = static_cast<float>(
                        acc / ((d1 - d0) * (h1 - h0) * (w1 - w0)));
                }
            }
        }
    }
    return out;
}

// Slice-wise teacher featurization along the depth axis, stacked into a 3D
// feature grid and pooled to the student's deepest spatial dims.
inline Tensor4 extract_teacher_features(const FoundationTeacher& teacher, const Volume& volume,
                                        Dims3 target_dims) {
    const int res = teacher.input_resolution();
    Tensor4 stacked;
    for (std::int32_t d = 0; d < volume.dims.d; ++d) {
        Image2D slice;
        slice.h = volume.dims.h;
        slice.w = volume.dims.w;
        slice.v.assign(volume.data.begin() + flat_index(volume.dims, d, 0, 0),
                       volume.data.begin() + flat_index(volume.dims, d, 0, 0) +
                           static_cast<std::int64_t>(volume.dims.h) * volume.dims.w);
        Feature2D feat;
        try {
            feat = teacher.featurize(resize_bilinear(slice, res, res));
        } catch (const std::exception& e) {
            throw std::runtime_error("extract_teacher_features: slice " + std::to_string(d) +
                                     ": " + e.what());
        }
        if (d == 0)
            stacked = make_tensor(feat.channels, {volume.dims.d, feat.h, feat.w});
        else if (feat.channels != stacked.channels || feat.h != stacked.sp.h ||
                 feat.w != stacked.sp.w)
            throw std::runtime_error("extract_teacher_features: slice " + std::to_string(d) +
                                     ": inconsistent teacher output shape");
        for (int c = 0; c < feat.channels; ++c)
            for (int y = 0; y < feat.h; ++y)
                for (int x = 0; x < feat.w; ++x)
                    stacked.at(c, d, y, x) = feat.at(c, y, x);
    }
    return adaptive_avg_pool(stacked, target_dims);
}

enum class ProjectorKind { Linear, ConvStack };

struct ProjectorCache {
    Tensor4 input;
    Tensor4 pre_norm;   // conv-stack only
    Tensor4 post_norm;  // conv-stack only, post-relu
    std::vector<float> inv_rms;
};

// Maps student channels to teacher channels, spatial dims preserved. The
// default is a single 1x1x1 linear map; the conv stack is
// conv3 -> channel RMS norm -> relu -> conv1.
class Projector {
  public:
    Projector() = default;
    Projector(ProjectorKind kind, int in_channels, int out_channels) : kind_(kind) {
        if (kind_ == ProjectorKind::Linear) {
            lin_ = Conv3d(in_channels, out_channels, 1, 1);
        } else {
            conv3_ = Conv3d(in_channels, out_channels, 3, 1);
            conv1_ = Conv3d(out_channels, out_channels, 1, 1);
            norm_g_.assign(static_cast<std::size_t>(out_channels), 1.0f);
            norm_gg_.assign(norm_g_.size(), 0.0f);
        }
        in_c_ = in_channels;
        out_c_ = out_channels;
    }

    int in_channels() const { return in_c_; }
    int out_channels() const { return out_c_; }
    ProjectorKind kind() const { return kind_; }

    void init(RngEngine& eng) {
        if (kind_ == ProjectorKind::Linear) {
            lin_.init(eng);
        } else {
            conv3_.init(eng);
            conv1_.init(eng);
        }
    }

    // Identity map; only valid for the linear kind with equal channel counts.
    void set_identity() {
        if (kind_ != ProjectorKind::Linear || in_c_ != out_c_)
            throw std::logic_error("Projector::set_identity needs square linear kind");
        std::fill(lin_.w.begin(), lin_.w.end(), 0.0f);
        std::fill(lin_.b.begin(), lin_.b.end(), 0.0f);
        for (int c = 0; c < out_c_; ++c) lin_.w[static_cast<std::size_t>(c) * in_c_ + c] = 1.0f;
    }

    void zero_bias() {
        if (kind_ == ProjectorKind::Linear) std::fill(lin_.b.begin(), lin_.b.end(), 0.0f);
    }

    Tensor4 forward(const Tensor4& features, ProjectorCache* cache = nullptr) const {
        if (features.channels != in_c_)
            throw std::invalid_argument("Projector: expected " + std::to_string(in_c_) +
                                        " channels, got " + std::to_string(features.channels));
        if (kind_ == ProjectorKind::Linear) {
            Tensor4 out;
            lin_.forward(features, out);
            if (cache) cache->input = features;
            return out;
        }
        Tensor4 mid;
        conv3_.forward(features, mid);
        ProjectorCache local;
        ProjectorCache& cc = cache ? *cache : local;
        cc.input = features;
        cc.pre_norm = mid;
        rms_norm(mid, cc.inv_rms);
        relu_inplace(mid);
        cc.post_norm = mid;
        Tensor4 out;
        conv1_.forward(mid, out);
        return out;
    }

    // Returns the gradient w.r.t. the input features.
    Tensor4 backward(const ProjectorCache& cc, const Tensor4& dout) {
        if (kind_ == ProjectorKind::Linear) {
            Tensor4 din = make_tensor(in_c_, cc.input.sp);
            lin_.backward(cc.input, dout, &din);
            return din;
        }
        Tensor4 dpost = make_tensor(out_c_, cc.post_norm.sp);
        conv1_.backward(cc.post_norm, dout, &dpost);
        relu_backward_inplace(cc.post_norm, dpost);
        Tensor4 dpre = rms_norm_backward(cc.pre_norm, cc.inv_rms, dpost);
        Tensor4 din = make_tensor(in_c_, cc.input.sp);
        conv3_.backward(cc.input, dpre, &din);
        return din;
    }

    std::vector<ParamRef> parameters() {
        if (kind_ == ProjectorKind::Linear) return lin_.params("proj");
        auto out = conv3_.params("proj.conv3");
        out.push_back({"proj.norm.g", &norm_g_, &norm_gg_});
        for (auto& p : conv1_.params("proj.conv1")) out.push_back(std::move(p));
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) std::fill(p.grad->begin(), p.grad->end(), 0.0f);
    }

  private:
    static constexpr double kNormEps = 1e-6;

    void rms_norm(Tensor4& t, std::vector<float>& inv_rms) const {
        const std::int64_t n = t.spatial();
        inv_rms.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            double ss = 0;
            for (int c = 0; c < t.channels; ++c) {
                const double x = t.v[c * n + i];
                ss += x * x;
            }
            const double inv = 1.0 / std::sqrt(ss / t.channels + kNormEps);
            inv_rms[static_cast<std::size_t>(i)] = static_cast<float>(inv);
            for (int c = 0; c < t.channels; ++c)
                t.v[c * n + i] = static_cast<float>(t.v[c * n + i] * inv * norm_g_[c]);
        }
    }

    Tensor4 rms_norm_backward(const Tensor4& pre, const std::vector<float>& inv_rms,
                              const Tensor4& dy) {
        const std::int64_t n = pre.spatial();
        const int C = pre.channels;
        Tensor4 dx = make_tensor(C, pre.sp);
        for (std::int64_t i = 0; i < n; ++i) {
            const double inv = inv_rms[static_cast<std::size_t>(i)];
            double dot = 0;  // sum_j dy_j g_j x_j
            for (int c = 0; c < C; ++c)
                dot += static_cast<double>(dy.v[c * n + i]) * norm_g_[c] * pre.v[c * n + i];
            for (int c = 0; c < C; ++c) {
                const double x = pre.v[c * n + i];
                const double g = norm_g_[c];
                const double d = dy.v[c * n + i];
                dx.v[c * n + i] = static_cast<float>(g * inv * d - x * inv * inv * inv * dot / C);
                norm_gg_[c] += static_cast<float>(d * x * inv);
            }
        }
        return dx;
    }

    ProjectorKind kind_ = ProjectorKind::Linear;
    int in_c_ = 0, out_c_ = 0;
    Conv3d lin_;
    Conv3d conv3_, conv1_;
    std::vector<float> norm_g_, norm_gg_;
};

inline Tensor4 project_student(const Projector& proj, const Tensor4& deep_features,
                               ProjectorCache* cache = nullptr) {
    return proj.forward(deep_features, cache);
}

// Mean over spatial locations of the squared distance between per-location
// L2-normalized channel vectors (epsilon 1e-8 guard on each norm). The
// teacher side is a constant: no gradient is produced for it. Range [0, 4].
inline double distillation_loss(const Tensor4& projected, const Tensor4& teacher_features,
                                Tensor4* grad_projected = nullptr) {
    if (projected.channels != teacher_features.channels || !(projected.sp == teacher_features.sp))
        throw std::invalid_argument("distillation_loss: shape mismatch between projected " +
                                    std::to_string(projected.channels) + "x" +
                                    to_string(projected.sp) + " and teacher " +
                                    std::to_string(teacher_features.channels) + "x" +
                                    to_string(teacher_features.sp));
    constexpr double eps = 1e-8;
    const std::int64_t n = projected.spatial();
    const int C = projected.channels;
    if (grad_projected) *grad_projected = make_tensor(C, projected.sp);

    std::vector<double> p(C), t(C), d(C);
    double total = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        double pp = 0, tt = 0;
        for (int c = 0; c < C; ++c) {
            p[c] = projected.v[c * n + i];
            t[c] = teacher_features.v[c * n + i];
            pp += p[c] * p[c];
            tt += t[c] * t[c];
        }
        const double np = std::sqrt(pp), nt = std::sqrt(tt);
        const double sp = np + eps, st = nt + eps;
        double dist = 0, pd = 0;
        for (int c = 0; c < C; ++c) {
            d[c] = p[c] / sp - t[c] / st;
            dist += d[c] * d[c];
            pd += p[c] * d[c];
        }
        total += dist;
        if (grad_projected) {
            for (int c = 0; c < C; ++c) {
                double g = 2.0 * d[c] / sp;
                if (np > 0) g -= 2.0 * p[c] * pd / (np * sp * sp);
                grad_projected->v[c * n + i] = static_cast<float>(g / n);
            }
        }
    }
    return total / n;
}

}  // namespace semivox
