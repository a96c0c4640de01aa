#pragma once

// Synthetic imbalanced phantoms: each foreground class is one axis-aligned
// ellipsoid with a class-specific intensity offset, plus additive uniform
// noise. Controllable per-class volume fractions make these a desk-scale
// stand-in for real multi-organ scans.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "semivox/rng.hpp"
#include "semivox/volume.hpp"

namespace semivox {

struct Vec3 {
    double d = 0, h = 0, w = 0;
    double operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
};

// Optional fixed geometry for one class; fields left empty are chosen from
// the target fraction (semi-axes) and the seed (center).
struct EllipsoidPlacement {
    std::optional<Vec3> center;
    std::optional<Vec3> semi_axes;
};

enum class ShapeKind { Ellipsoid };

struct PhantomSpec {
    Dims3 dims;
    int num_foreground_classes = 0;
    std::vector<double> volume_fractions;       // per class, each > 0, sum < 1
    ShapeKind shape = ShapeKind::Ellipsoid;
    std::vector<double> contrasts;              // per-class intensity offset
    double noise_amplitude = 0.02;
    double background_intensity = 0.15;
    std::vector<EllipsoidPlacement> placements; // empty, or one per class
};

inline void validate_phantom_spec(const PhantomSpec& spec) {
    if (spec.dims.d < 1 || spec.dims.h < 1 || spec.dims.w < 1)
        throw std::invalid_argument("phantom: dims must be positive");
    const int k = spec.num_foreground_classes;
    if (k < 1 || k > 255)
        throw std::invalid_argument("phantom: num_foreground_classes out of range");
    if (static_cast<int>(spec.volume_fractions.size()) != k)
        throw std::invalid_argument("phantom: need one volume fraction per foreground class");
    if (static_cast<int>(spec.contrasts.size()) != k)
        throw std::invalid_argument("phantom: need one contrast per foreground class");
    double sum = 0;
    for (double f : spec.volume_fractions) {
        if (!(f > 0)) throw std::invalid_argument("phantom: volume fractions must be positive");
        sum += f;
    }
    if (!(sum < 1.0))
        throw std::invalid_argument("phantom: volume fractions must sum to < 1");
    if (!spec.placements.empty() && static_cast<int>(spec.placements.size()) != k)
        throw std::invalid_argument("phantom: placements must be empty or one per class");
    if (spec.noise_amplitude < 0)
        throw std::invalid_argument("phantom: noise amplitude must be >= 0");
}

namespace detail {

// Semi-axes for a target voxel count, elongated along larger grid axes so
// large fractions still fit inside flat volumes.
inline Vec3 default_semi_axes(const Dims3& dims, double fraction) {
    const double target = fraction * static_cast<double>(dims.voxels());
    const double r = std::cbrt(3.0 * target / (4.0 * std::numbers::pi));
    const double geo = std::cbrt(static_cast<double>(dims.d) * dims.h * dims.w);
    return Vec3{r * dims.d / geo, r * dims.h / geo, r * dims.w / geo};
}

struct PlacedEllipsoid {
    int class_id = 0;
    Vec3 center;
    Vec3 axes;
};

inline bool boxes_overlap(const PlacedEllipsoid& a, const PlacedEllipsoid& b) {
    for (int ax = 0; ax < 3; ++ax) {
        const double lo_a = a.center[ax] - a.axes[ax], hi_a = a.center[ax] + a.axes[ax];
        const double lo_b = b.center[ax] - b.axes[ax], hi_b = b.center[ax] + b.axes[ax];
        if (hi_a < lo_b || hi_b < lo_a) return false;
    }
    return true;
}

}  // namespace detail

inline bool inside_ellipsoid(const Vec3& center, const Vec3& axes,
                             std::int32_t d, std::int32_t h, std::int32_t w) {
    const double fd = (d - center.d) / axes.d;
    const double fh = (h - center.h) / axes.h;
    const double fw = (w - center.w) / axes.w;
    return fd * fd + fh * fh + fw * fw <= 1.0;
}

// Deterministic for fixed (seed, spec). Classes are rasterized largest first
// so that when overlap cannot be avoided, rarer classes win the voxel.
inline std::pair<Volume, LabelMap> generate_phantom(std::uint64_t seed, const PhantomSpec& spec) {
    validate_phantom_spec(spec);
    RngEngine eng = make_engine(seed);
    const int k = spec.num_foreground_classes;

    std::vector<detail::PlacedEllipsoid> placed;
    std::vector<int> order(k);
    for (int i = 0; i < k; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return spec.volume_fractions[a] > spec.volume_fractions[b];
    });

    for (int oi : order) {
        const int class_id = oi + 1;
        detail::PlacedEllipsoid e;
        e.class_id = class_id;
        e.axes = (!spec.placements.empty() && spec.placements[oi].semi_axes)
                     ? *spec.placements[oi].semi_axes
                     : detail::default_semi_axes(spec.dims, spec.volume_fractions[oi]);

        std::int32_t margin[3];
        for (int ax = 0; ax < 3; ++ax) {
            margin[ax] = static_cast<std::int32_t>(std::ceil(e.axes[ax]));
            if (2 * margin[ax] + 1 > spec.dims[ax])
                throw std::invalid_argument("phantom: ellipsoid for class " +
                                            std::to_string(class_id) + " cannot fit inside dims " +
                                            to_string(spec.dims) + " on axis " +
                                            std::to_string(ax));
        }

        if (!spec.placements.empty() && spec.placements[oi].center) {
            e.center = *spec.placements[oi].center;
            for (int ax = 0; ax < 3; ++ax)
                if (e.center[ax] - e.axes[ax] < 0 || e.center[ax] + e.axes[ax] > spec.dims[ax] - 1)
                    throw std::invalid_argument("phantom: placed ellipsoid for class " +
                                                std::to_string(class_id) +
                                                " cannot fit inside dims on axis " +
                                                std::to_string(ax));
        } else {
            // Up to 64 draws to avoid bounding-box overlap, then accept it.
            for (int attempt = 0; attempt < 64; ++attempt) {
                Vec3 c;
                c.d = static_cast<double>(margin[0] + rng_index(eng, spec.dims.d - 2 * margin[0]));
                c.h = static_cast<double>(margin[1] + rng_index(eng, spec.dims.h - 2 * margin[1]));
                c.w = static_cast<double>(margin[2] + rng_index(eng, spec.dims.w - 2 * margin[2]));
                e.center = c;
                bool collides = false;
                for (const auto& other : placed)
                    if (detail::boxes_overlap(e, other)) { collides = true; break; }
                if (!collides) break;
            }
        }
        placed.push_back(e);
    }

    LabelMap labels = make_label_map(spec.dims, k + 1);
    for (const auto& e : placed) {
        const std::int32_t d0 = std::max<std::int32_t>(0, std::int32_t(std::floor(e.center.d - e.axes.d)));
        const std::int32_t d1 = std::min<std::int32_t>(spec.dims.d - 1, std::int32_t(std::ceil(e.center.d + e.axes.d)));
        const std::int32_t h0 = std::max<std::int32_t>(0, std::int32_t(std::floor(e.center.h - e.axes.h)));
        const std::int32_t h1 = std::min<std::int32_t>(spec.dims.h - 1, std::int32_t(std::ceil(e.center.h + e.axes.h)));
        const std::int32_t w0 = std::max<std::int32_t>(0, std::int32_t(std::floor(e.center.w - e.axes.w)));
        const std::int32_t w1 = std::min<std::int32_t>(spec.dims.w - 1, std::int32_t(std::ceil(e.center.w + e.axes.w)));
        for (std::int32_t d = d0; d <= d1; ++d)
            for (std::int32_t h = h0; h <= h1; ++h)
                for (std::int32_t w = w0; w <= w1; ++w)
                    if (inside_ellipsoid(e.center, e.axes, d, h, w))
                        labels.at(d, h, w) = static_cast<std::uint8_t>(e.class_id);
    }

    Volume vol = make_volume(spec.dims);
    const std::int64_t n = spec.dims.voxels();
    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint8_t c = labels.data[static_cast<std::size_t>(i)];
        double v = spec.background_intensity;
        if (c > 0) v += spec.contrasts[c - 1];
        v += spec.noise_amplitude * (2.0 * rng_u01(eng) - 1.0);
        vol.data[static_cast<std::size_t>(i)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return {std::move(vol), std::move(labels)};
}

}  // namespace semivox
