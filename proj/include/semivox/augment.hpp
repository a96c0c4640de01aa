#pragma once

// Weak and strong training views. Weak = random crop + per-axis flips applied
// identically to volume and label map; strong = per-crop min-max
// normalization followed by a random gamma curve. Both record their
// parameters so any output coordinate can be mapped back to the source.

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

#include "semivox/rng.hpp"
#include "semivox/volume.hpp"

namespace semivox {

struct CropRecord {
    Coord3 origin;
    Dims3 crop;
    bool flip[3] = {false, false, false};

    // Output coordinate -> coordinate in the source volume.
    Coord3 map_to_input(const Coord3& out) const {
        Coord3 in;
        in.d = origin.d + (flip[0] ? crop.d - 1 - out.d : out.d);
        in.h = origin.h + (flip[1] ? crop.h - 1 - out.h : out.h);
        in.w = origin.w + (flip[2] ? crop.w - 1 - out.w : out.w);
        return in;
    }
};

struct StrongRecord {
    double gamma = 1.0;
    CropRecord source;
};

struct WeakView {
    Volume image;
    std::optional<LabelMap> labels;
    CropRecord record;
};

struct StrongView {
    Volume image;
    StrongRecord record;
};

struct WeakAugOptions {
    bool flips_enabled = true;
};

inline WeakView apply_weak(const Volume& volume, const LabelMap* labels, std::uint64_t seed,
                           Dims3 crop_dims, const WeakAugOptions& opts = {}) {
    for (int ax = 0; ax < 3; ++ax) {
        if (crop_dims[ax] < 1)
            throw std::invalid_argument("apply_weak: crop dims must be positive");
        if (crop_dims[ax] > volume.dims[ax])
            throw std::invalid_argument("apply_weak: crop exceeds volume on axis " +
                                        std::to_string(ax) + " (" +
                                        std::to_string(crop_dims[ax]) + " > " +
                                        std::to_string(volume.dims[ax]) + ")");
    }
    if (labels && labels->dims != volume.dims)
        throw std::invalid_argument("apply_weak: label dims do not match volume dims");

    RngEngine eng = make_engine(seed);
    CropRecord rec;
    rec.crop = crop_dims;
    rec.origin.d = static_cast<std::int32_t>(rng_index(eng, volume.dims.d - crop_dims.d + 1));
    rec.origin.h = static_cast<std::int32_t>(rng_index(eng, volume.dims.h - crop_dims.h + 1));
    rec.origin.w = static_cast<std::int32_t>(rng_index(eng, volume.dims.w - crop_dims.w + 1));
    if (opts.flips_enabled)
        for (bool& fl : rec.flip) fl = rng_coin(eng);

    WeakView view;
    view.record = rec;
    view.image = make_volume(crop_dims);
    if (labels) view.labels = make_label_map(crop_dims, labels->num_classes);
    for (std::int32_t d = 0; d < crop_dims.d; ++d)
        for (std::int32_t h = 0; h < crop_dims.h; ++h)
            for (std::int32_t w = 0; w < crop_dims.w; ++w) {
                const Coord3 src = rec.map_to_input({d, h, w});
                view.image.at(d, h, w) = volume.at(src.d, src.h, src.w);
                if (labels) view.labels->at(d, h, w) = labels->at(src.d, src.h, src.w);
            }
    return view;
}

// Gamma is drawn log-uniformly from gamma_range. Intensities are first
// min-max normalized over the crop; a constant-intensity crop degenerates to
// the all-zero view.
inline StrongView apply_strong(const Volume& weak, std::uint64_t seed,
                               std::pair<double, double> gamma_range,
                               const CropRecord* source = nullptr) {
    if (!(gamma_range.first > 0) || !(gamma_range.second >= gamma_range.first))
        throw std::invalid_argument("apply_strong: need 0 < gamma_min <= gamma_max");
    for (float x : weak.data)
        if (!std::isfinite(x)) throw std::invalid_argument("apply_strong: non-finite intensity");

    RngEngine eng = make_engine(seed);
    StrongView out;
    out.record.gamma = rng_log_uniform(eng, gamma_range.first, gamma_range.second);
    if (source) out.record.source = *source;

    const auto [mn_it, mx_it] = std::minmax_element(weak.data.begin(), weak.data.end());
    const float mn = *mn_it, mx = *mx_it;
    out.image = make_volume(weak.dims);
    if (mx > mn) {
        const float scale = 1.0f / (mx - mn);
        for (std::size_t i = 0; i < weak.data.size(); ++i) {
            const double norm = (weak.data[i] - mn) * scale;
            out.image.data[i] = static_cast<float>(std::pow(norm, out.record.gamma));
        }
    }
    return out;
}

}  // namespace semivox
