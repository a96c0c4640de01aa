#pragma once

// Sliding-window inference and the Dice / average-surface-distance metrics.
// Surfaces use 6-connectivity with the volume border counting as outside;
// ASD is computed through an exact squared Euclidean distance transform.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "semivox/model.hpp"
#include "semivox/tensor.hpp"
#include "semivox/volume.hpp"

namespace semivox {

struct SlidingWindowSpec {
    Dims3 window;
    Dims3 stride{32, 32, 16};
};

inline std::vector<std::int32_t> window_starts(std::int32_t dim, std::int32_t window,
                                               std::int32_t stride) {
    if (window < 1 || window > dim)
        throw std::invalid_argument("sliding window: window exceeds volume axis (" +
                                    std::to_string(window) + " > " + std::to_string(dim) + ")");
    if (stride < 1) throw std::invalid_argument("sliding window: stride must be >= 1");
    stride = std::min(stride, window);  // keeps every voxel covered
    std::vector<std::int32_t> starts;
    for (std::int32_t x = 0;; x += stride) {
        if (x + window >= dim) {
            if (starts.empty() || starts.back() != dim - window) starts.push_back(dim - window);
            break;
        }
        starts.push_back(x);
    }
    return starts;
}

inline LabelMap argmax_labels(const Tensor4& logits) {
    LabelMap out = make_label_map(logits.sp, logits.channels);
    const std::int64_t n = logits.spatial();
    for (std::int64_t i = 0; i < n; ++i) {
        int best = 0;
        float zmax = logits.v[i];
        for (int c = 1; c < logits.channels; ++c) {
            const float z = logits.v[c * n + i];
            if (z > zmax) { zmax = z; best = c; }  // ties keep the lowest id
        }
        out.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
    }
    return out;
}

// Windows at stride multiples, final window clamped to the boundary; logits
// averaged uniformly over every window covering a voxel.
inline Tensor4 sliding_window_logits(const Volume& volume, const SlidingWindowSpec& spec,
                                     const std::function<Tensor4(const Volume&)>& forward) {
    const Dims3 vd = volume.dims;
    const auto sd = window_starts(vd.d, spec.window.d, spec.stride.d);
    const auto sh = window_starts(vd.h, spec.window.h, spec.stride.h);
    const auto sw = window_starts(vd.w, spec.window.w, spec.stride.w);

    Tensor4 sum;
    std::vector<std::uint32_t> cover(static_cast<std::size_t>(vd.voxels()), 0);
    for (std::int32_t od : sd)
        for (std::int32_t oh : sh)
            for (std::int32_t ow : sw) {
                Volume win = make_volume(spec.window);
                for (std::int32_t d = 0; d < spec.window.d; ++d)
                    for (std::int32_t h = 0; h < spec.window.h; ++h) {
                        const float* src = volume.data.data() +
                                           flat_index(vd, od + d, oh + h, ow);
                        float* dst = win.data.data() + flat_index(spec.window, d, h, 0);
                        std::copy(src, src + spec.window.w, dst);
                    }
                const Tensor4 logits = forward(win);
                if (logits.channels < 1 || !(logits.sp == spec.window))
                    throw std::runtime_error("sliding window: forward output shape mismatch");
                if (sum.channels == 0) sum = make_tensor(logits.channels, vd);
                for (int c = 0; c < logits.channels; ++c)
                    for (std::int32_t d = 0; d < spec.window.d; ++d)
                        for (std::int32_t h = 0; h < spec.window.h; ++h) {
                            float* dst = sum.chan(c) + flat_index(vd, od + d, oh + h, ow);
                            const float* src =
                                logits.chan(c) + flat_index(spec.window, d, h, 0);
                            for (std::int32_t w = 0; w < spec.window.w; ++w) dst[w] += src[w];
                        }
                for (std::int32_t d = 0; d < spec.window.d; ++d)
                    for (std::int32_t h = 0; h < spec.window.h; ++h) {
                        std::uint32_t* cv = cover.data() + flat_index(vd, od + d, oh + h, ow);
                        for (std::int32_t w = 0; w < spec.window.w; ++w) ++cv[w];
                    }
            }

    const std::int64_t n = vd.voxels();
    for (std::int64_t i = 0; i < n; ++i)
        if (cover[static_cast<std::size_t>(i)] == 0)
            throw std::logic_error("sliding window: uncovered voxel");
    for (int c = 0; c < sum.channels; ++c) {
        float* dst = sum.chan(c);
        for (std::int64_t i = 0; i < n; ++i) dst[i] /= cover[static_cast<std::size_t>(i)];
    }
    return sum;
}

inline LabelMap sliding_window_predict(const SegNet& net, const Volume& volume,
                                       const SlidingWindowSpec& spec) {
    net.check_input_dims(spec.window);
    Tensor4 avg = sliding_window_logits(volume, spec, [&](const Volume& win) {
        return net.forward(win).main_logits;
    });
    LabelMap out = argmax_labels(avg);
    out.num_classes = net.cfg.num_classes;
    return out;
}

inline std::optional<double> dice(const LabelMap& pred, const LabelMap& gt, int class_id) {
    if (!(pred.dims == gt.dims)) throw std::invalid_argument("dice: dims mismatch");
    std::uint64_t a = 0, b = 0, inter = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool in_a = pred.data[i] == class_id;
        const bool in_b = gt.data[i] == class_id;
        a += in_a;
        b += in_b;
        inter += in_a && in_b;
    }
    if (a + b == 0) return std::nullopt;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

// Voxels of the class with at least one 6-neighbor outside the region; the
// volume border counts as outside.
inline std::vector<Coord3> surface_voxels(const LabelMap& labels, int class_id) {
    std::vector<Coord3> out;
    const Dims3 s = labels.dims;
    for (std::int32_t d = 0; d < s.d; ++d)
        for (std::int32_t h = 0; h < s.h; ++h)
            for (std::int32_t w = 0; w < s.w; ++w) {
                if (labels.at(d, h, w) != class_id) continue;
                const bool boundary =
                    d == 0 || d == s.d - 1 || h == 0 || h == s.h - 1 || w == 0 || w == s.w - 1 ||
                    labels.at(d - 1, h, w) != class_id || labels.at(d + 1, h, w) != class_id ||
                    labels.at(d, h - 1, w) != class_id || labels.at(d, h + 1, w) != class_id ||
                    labels.at(d, h, w - 1) != class_id || labels.at(d, h, w + 1) != class_id;
                if (boundary) out.push_back({d, h, w});
            }
    return out;
}

namespace detail {

// 1D squared-distance transform (Felzenszwalb & Huttenlocher).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& out, std::size_t n,
                   std::vector<int>& v, std::vector<double>& z) {
    v.resize(n);
    z.resize(n + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (std::size_t q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + q * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
            if (s <= z[k]) { --k; continue; }
            break;
        }
        ++k;
        v[k] = static_cast<int>(q);
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double dq = static_cast<double>(q) - v[k];
        out[q] = dq * dq + f[v[k]];
    }
}

// Exact squared Euclidean distance to the nearest seed voxel.
inline std::vector<double> edt_3d(const Dims3& dims, const std::vector<Coord3>& seeds) {
    const double inf = 1e30;
    std::vector<double> dist(static_cast<std::size_t>(dims.voxels()), inf);
    for (const Coord3& c : seeds) dist[static_cast<std::size_t>(flat_index(dims, c.d, c.h, c.w))] = 0;

    std::vector<double> f, out;
    std::vector<int> v;
    std::vector<double> z;
    // along w
    f.resize(dims.w);
    out.resize(dims.w);
    for (std::int32_t d = 0; d < dims.d; ++d)
        for (std::int32_t h = 0; h < dims.h; ++h) {
            double* row = dist.data() + flat_index(dims, d, h, 0);
            for (std::int32_t w = 0; w < dims.w; ++w) f[w] = row[w];
            edt_1d(f, out, dims.w, v, z);
            for (std::int32_t w = 0; w < dims.w; ++w) row[w] = out[w];
        }
    // along h
    f.resize(dims.h);
    out.resize(dims.h);
    for (std::int32_t d = 0; d < dims.d; ++d)
        for (std::int32_t w = 0; w < dims.w; ++w) {
            for (std::int32_t h = 0; h < dims.h; ++h)
                f[h] = dist[static_cast<std::size_t>(flat_index(dims, d, h, w))];
            edt_1d(f, out, dims.h, v, z);
            for (std::int32_t h = 0; h < dims.h; ++h)
                dist[static_cast<std::size_t>(flat_index(dims, d, h, w))] = out[h];
        }
    // along d
    f.resize(dims.d);
    out.resize(dims.d);
    for (std::int32_t h = 0; h < dims.h; ++h)
        for (std::int32_t w = 0; w < dims.w; ++w) {
            for (std::int32_t d = 0; d < dims.d; ++d)
                f[d] = dist[static_cast<std::size_t>(flat_index(dims, d, h, w))];
            edt_1d(f, out, dims.d, v, z);
            for (std::int32_t d = 0; d < dims.d; ++d)
                dist[static_cast<std::size_t>(flat_index(dims, d, h, w))] = out[d];
        }
    return dist;
}

inline double mean_surface_distance(const std::vector<Coord3>& from, const Dims3& dims,
                                    const std::vector<double>& sq_dist_to_other) {
    double acc = 0;
    for (const Coord3& c : from)
        acc += std::sqrt(sq_dist_to_other[static_cast<std::size_t>(flat_index(dims, c.d, c.h, c.w))]);
    return acc / static_cast<double>(from.size());
}

}  // namespace detail

// Average of the two direction-means of surface-to-nearest-surface Euclidean
// distances, in voxel units. Undefined when either surface is empty.
inline std::optional<double> asd(const LabelMap& pred, const LabelMap& gt, int class_id) {
    if (!(pred.dims == gt.dims)) throw std::invalid_argument("asd: dims mismatch");
    const std::vector<Coord3> sp = surface_voxels(pred, class_id);
    const std::vector<Coord3> sg = surface_voxels(gt, class_id);
    if (sp.empty() || sg.empty()) return std::nullopt;
    const std::vector<double> dist_to_gt = detail::edt_3d(pred.dims, sg);
    const std::vector<double> dist_to_pred = detail::edt_3d(pred.dims, sp);
    const double fwd = detail::mean_surface_distance(sp, pred.dims, dist_to_gt);
    const double bwd = detail::mean_surface_distance(sg, pred.dims, dist_to_pred);
    return 0.5 * (fwd + bwd);
}

struct MetricsReport {
    int num_classes = 0;  // including background; rows cover classes 1..C-1
    int num_cases = 0;
    std::vector<std::optional<double>> mean_dice;  // index by class id
    std::vector<std::optional<double>> mean_asd;
    std::vector<int> missing_dice;  // cases where the metric was undefined
    std::vector<int> missing_asd;
    std::optional<double> avg_dice;  // over defined foreground classes
    std::optional<double> avg_asd;
};

template <typename CaseRange>
MetricsReport evaluate(const SegNet& net, const CaseRange& cases, const SlidingWindowSpec& spec) {
    const int C = net.cfg.num_classes;
    MetricsReport rep;
    rep.num_classes = C;
    rep.mean_dice.assign(C, std::nullopt);
    rep.mean_asd.assign(C, std::nullopt);
    rep.missing_dice.assign(C, 0);
    rep.missing_asd.assign(C, 0);
    std::vector<double> dice_sum(C, 0), asd_sum(C, 0);
    std::vector<int> dice_n(C, 0), asd_n(C, 0);

    for (const auto& cs : cases) {
        ++rep.num_cases;
        const LabelMap pred = sliding_window_predict(net, cs.image, spec);
        for (int c = 1; c < C; ++c) {
            if (auto v = dice(pred, cs.labels, c)) {
                dice_sum[c] += *v;
                ++dice_n[c];
            } else {
                ++rep.missing_dice[c];
            }
            if (auto v = asd(pred, cs.labels, c)) {
                asd_sum[c] += *v;
                ++asd_n[c];
            } else {
                ++rep.missing_asd[c];
            }
        }
    }
    if (rep.num_cases == 0) throw std::invalid_argument("evaluate: empty split");

    double dice_total = 0, asd_total = 0;
    int dice_classes = 0, asd_classes = 0;
    for (int c = 1; c < C; ++c) {
        if (dice_n[c] > 0) {
            rep.mean_dice[c] = dice_sum[c] / dice_n[c];
            dice_total += *rep.mean_dice[c];
            ++dice_classes;
        }
        if (asd_n[c] > 0) {
            rep.mean_asd[c] = asd_sum[c] / asd_n[c];
            asd_total += *rep.mean_asd[c];
            ++asd_classes;
        }
    }
    if (dice_classes > 0) rep.avg_dice = dice_total / dice_classes;
    if (asd_classes > 0) rep.avg_asd = asd_total / asd_classes;
    return rep;
}

inline void write_metrics_csv(const MetricsReport& rep, std::ostream& os) {
    auto cell = [](const std::optional<double>& v) {
        char buf[40];
        if (!v) return std::string("nan");
        std::snprintf(buf, sizeof buf, "%.9g", *v);
        return std::string(buf);
    };
    os << "class,dice,asd\n";
    for (int c = 1; c < rep.num_classes; ++c)
        os << c << "," << cell(rep.mean_dice[c]) << "," << cell(rep.mean_asd[c]) << "\n";
    os << "avg," << cell(rep.avg_dice) << "," << cell(rep.avg_asd) << "\n";
}

}  // namespace semivox
