#pragma once

// Compact 3D encoder-decoder segmentation network with two 1x1x1 output
// heads (main and auxiliary) and a tap on the deepest encoder features.
// Forward passes are const on parameters; gradients accumulate in the layers
// through an explicit cache, and the EMA teacher is a structural copy updated
// only through ema_update.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "semivox/layers.hpp"
#include "semivox/tensor.hpp"
#include "semivox/volume.hpp"

namespace semivox {

struct NetConfig {
    int in_channels = 1;
    int base_channels = 16;
    int stages = 4;  // number of 2x downsampling steps
    int num_classes = 2;

    int deep_channels() const { return base_channels << stages; }
    bool operator==(const NetConfig&) const = default;
};

struct StudentOutput {
    Tensor4 main_logits;
    Tensor4 aux_logits;
    Tensor4 deep;  // deepest encoder features, (base << stages) channels
};

// Every conv is followed by instance norm then relu (decoder skips are added
// before the norm). The cache keeps, per site, the normalized pre-relu tensor
// h* (needed by the norm backward), the post-relu tensor r* (the next conv's
// input and the relu mask), and the per-channel 1/sigma values.
struct ForwardCache {
    Tensor4 input;
    std::vector<Tensor4> hx, rx;  // stem/encoder sites, index 0 full res .. s deepest
    std::vector<Tensor4> hy, ry;  // downsample sites
    std::vector<Tensor4> t;       // upsampled decoder inputs
    std::vector<Tensor4> hu, ru;  // decoder sites, index 0 full res
    std::vector<std::vector<float>> ix, iy, iu;
};

class SegNet {
  public:
    NetConfig cfg;

    SegNet() = default;
    explicit SegNet(const NetConfig& c) : cfg(c) {
        if (c.base_channels < 1 || c.stages < 1 || c.num_classes < 2 || c.in_channels < 1)
            throw std::invalid_argument("SegNet: invalid architecture config");
        stem_ = Conv3d(c.in_channels, c.base_channels, 3, 1);
        for (int i = 0; i < c.stages; ++i) {
            const int ci = c.base_channels << i;
            down_.emplace_back(ci, ci * 2, 2, 2);
            enc_.emplace_back(ci * 2, ci * 2, 3, 1);
            up_.emplace_back(ci * 2, ci, 3, 1);
        }
        head_main_ = Conv3d(c.base_channels, c.num_classes, 1, 1);
        head_aux_ = Conv3d(c.base_channels, c.num_classes, 1, 1);
    }

    void init(RngEngine& eng) {
        stem_.init(eng);
        for (int i = 0; i < cfg.stages; ++i) {
            down_[i].init(eng);
            enc_[i].init(eng);
            up_[i].init(eng);
        }
        head_main_.init(eng);
        head_aux_.init(eng);
    }

    void check_input_dims(Dims3 dims) const {
        const int div = 1 << cfg.stages;
        const char* axes = "dhw";
        for (int ax = 0; ax < 3; ++ax)
            if (dims[ax] % div != 0)
                throw std::invalid_argument(std::string("SegNet: input axis ") + axes[ax] +
                                            " (" + std::to_string(dims[ax]) +
                                            ") not divisible by " + std::to_string(div));
    }

    StudentOutput forward(const Volume& vol, ForwardCache* cache = nullptr) const {
        check_input_dims(vol.dims);
        ForwardCache local;
        ForwardCache& cc = cache ? *cache : local;
        const int s = cfg.stages;
        cc.input = from_volume(vol);
        cc.hx.assign(s + 1, {});
        cc.rx.assign(s + 1, {});
        cc.hy.assign(s, {});
        cc.ry.assign(s, {});
        cc.t.assign(s, {});
        cc.hu.assign(s, {});
        cc.ru.assign(s, {});
        cc.ix.assign(s + 1, {});
        cc.iy.assign(s, {});
        cc.iu.assign(s, {});

        auto norm_relu = [](Tensor4& a, Tensor4& h, Tensor4& r, std::vector<float>& inv_sigma) {
            instance_norm_inplace(a, &inv_sigma);
            h = std::move(a);
            r = h;
            relu_inplace(r);
        };

        Tensor4 a;
        stem_.forward(cc.input, a);
        norm_relu(a, cc.hx[0], cc.rx[0], cc.ix[0]);
        for (int i = 0; i < s; ++i) {
            down_[i].forward(cc.rx[i], a);
            norm_relu(a, cc.hy[i], cc.ry[i], cc.iy[i]);
            enc_[i].forward(cc.ry[i], a);
            norm_relu(a, cc.hx[i + 1], cc.rx[i + 1], cc.ix[i + 1]);
        }

        const Tensor4* prev = &cc.rx[s];
        for (int i = s - 1; i >= 0; --i) {
            cc.t[i] = upsample2_nearest(*prev);
            up_[i].forward(cc.t[i], a);
            add_inplace(a, cc.rx[i]);  // skip joins before the norm
            norm_relu(a, cc.hu[i], cc.ru[i], cc.iu[i]);
            prev = &cc.ru[i];
        }

        StudentOutput out;
        head_main_.forward(cc.ru[0], out.main_logits);
        head_aux_.forward(cc.ru[0], out.aux_logits);
        out.deep = cc.rx[s];
        return out;
    }

    // Accumulates parameter gradients. Null grad tensors are treated as zero;
    // d_deep carries the extra gradient injected at the deepest encoder tap
    // (expressed w.r.t. the exposed deep features).
    void backward(const ForwardCache& cc, const Tensor4* d_main, const Tensor4* d_aux,
                  const Tensor4* d_deep) {
        const int s = cfg.stages;
        Tensor4 dru = make_tensor(cfg.base_channels, cc.ru[0].sp);
        if (d_main) head_main_.backward(cc.ru[0], *d_main, &dru);
        if (d_aux) head_aux_.backward(cc.ru[0], *d_aux, &dru);

        std::vector<Tensor4> drx(s + 1);
        for (int i = 0; i <= s; ++i) drx[i] = make_tensor(cc.rx[i].channels, cc.rx[i].sp);

        for (int i = 0; i < s; ++i) {
            relu_backward_inplace(cc.ru[i], dru);
            Tensor4 da = instance_norm_backward(cc.hu[i], cc.iu[i], dru);
            add_inplace(drx[i], da);  // skip connection
            Tensor4 dt = make_tensor(cc.t[i].channels, cc.t[i].sp);
            up_[i].backward(cc.t[i], da, &dt);
            dru = upsample2_nearest_backward(dt, i + 1 < s ? cc.ru[i + 1].sp : cc.rx[s].sp);
        }
        add_inplace(drx[s], dru);
        if (d_deep) add_inplace(drx[s], *d_deep);

        for (int i = s - 1; i >= 0; --i) {
            relu_backward_inplace(cc.rx[i + 1], drx[i + 1]);
            Tensor4 da = instance_norm_backward(cc.hx[i + 1], cc.ix[i + 1], drx[i + 1]);
            Tensor4 dry = make_tensor(cc.ry[i].channels, cc.ry[i].sp);
            enc_[i].backward(cc.ry[i], da, &dry);
            relu_backward_inplace(cc.ry[i], dry);
            Tensor4 dy = instance_norm_backward(cc.hy[i], cc.iy[i], dry);
            down_[i].backward(cc.rx[i], dy, &drx[i]);
        }
        relu_backward_inplace(cc.rx[0], drx[0]);
        Tensor4 da0 = instance_norm_backward(cc.hx[0], cc.ix[0], drx[0]);
        stem_.backward(cc.input, da0, nullptr);
    }

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> out;
        auto append = [&](std::vector<ParamRef> v) {
            for (auto& p : v) out.push_back(std::move(p));
        };
        append(stem_.params("stem"));
        for (int i = 0; i < cfg.stages; ++i) {
            append(down_[i].params("down" + std::to_string(i)));
            append(enc_[i].params("enc" + std::to_string(i)));
            append(up_[i].params("up" + std::to_string(i)));
        }
        append(head_main_.params("head_main"));
        append(head_aux_.params("head_aux"));
        return out;
    }

    std::vector<ParamRef> aux_head_parameters() { return head_aux_.params("head_aux"); }

    void zero_grad() {
        for (auto& p : parameters()) std::fill(p.grad->begin(), p.grad->end(), 0.0f);
    }

    std::uint64_t param_digest() const {
        // FNV-1a over the raw parameter bytes, in declaration order.
        std::uint64_t h = 1469598103934665603ULL;
        auto feed = [&h](const std::vector<float>& v) {
            const auto* p = reinterpret_cast<const unsigned char*>(v.data());
            for (std::size_t i = 0; i < v.size() * sizeof(float); ++i) {
                h ^= p[i];
                h *= 1099511628211ULL;
            }
        };
        feed(stem_.w); feed(stem_.b);
        for (int i = 0; i < cfg.stages; ++i) {
            feed(down_[i].w); feed(down_[i].b);
            feed(enc_[i].w); feed(enc_[i].b);
            feed(up_[i].w); feed(up_[i].b);
        }
        feed(head_main_.w); feed(head_main_.b);
        feed(head_aux_.w); feed(head_aux_.b);
        return h;
    }

  private:
    Conv3d stem_;
    std::vector<Conv3d> down_, enc_, up_;
    Conv3d head_main_, head_aux_;
};

inline std::vector<StudentOutput> forward_student(const SegNet& net, std::span<const Volume> batch) {
    std::vector<StudentOutput> out;
    out.reserve(batch.size());
    for (const Volume& v : batch) out.push_back(net.forward(v));
    return out;
}

// p_teacher' = m * p_teacher + (1 - m) * p_student, elementwise. Evaluated as
// p_teacher += (1 - m) * (p_student - p_teacher) so that equal parameter sets
// are a bit-exact fixed point.
inline void ema_update(SegNet& teacher, SegNet& student, double m) {
    if (!(teacher.cfg == student.cfg))
        throw std::invalid_argument("ema_update: teacher/student architecture mismatch");
    auto tp = teacher.parameters();
    auto sp = student.parameters();
    if (tp.size() != sp.size())
        throw std::invalid_argument("ema_update: parameter list mismatch");
    const float one_minus_m = static_cast<float>(1.0 - m);
    for (std::size_t i = 0; i < tp.size(); ++i) {
        if (tp[i].name != sp[i].name || tp[i].value->size() != sp[i].value->size())
            throw std::invalid_argument("ema_update: parameter " + tp[i].name +
                                        " does not match structurally");
        float* t = tp[i].value->data();
        const float* st = sp[i].value->data();
        for (std::size_t j = 0; j < tp[i].value->size(); ++j)
            t[j] += one_minus_m * (st[j] - t[j]);
    }
}

struct PseudoLabel {
    LabelMap labels;
    std::vector<float> confidence;  // per-voxel softmax maximum, in (0, 1]
};

// Argmax of the teacher's main head on the weak view; ties break toward the
// lowest class id.
inline PseudoLabel teacher_pseudo_label(const SegNet& teacher, const Volume& weak) {
    const StudentOutput out = teacher.forward(weak);
    const Tensor4& logits = out.main_logits;
    const std::int64_t n = logits.spatial();
    const int C = logits.channels;
    PseudoLabel pl;
    pl.labels = make_label_map(logits.sp, C);
    pl.confidence.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        int best = 0;
        float zmax = logits.v[i];
        for (int c = 1; c < C; ++c) {
            const float z = logits.v[c * n + i];
            if (z > zmax) { zmax = z; best = c; }
        }
        double denom = 0;
        for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(logits.v[c * n + i]) - zmax);
        pl.labels.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
        pl.confidence[static_cast<std::size_t>(i)] = static_cast<float>(1.0 / denom);
    }
    return pl;
}

}  // namespace semivox
