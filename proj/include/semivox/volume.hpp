#pragma once

// Core volumetric data model: scalar volumes, class-id label maps, and
// per-class voxel statistics. Data is stored row-major (d, h, w), w fastest.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace semivox {

struct Dims3 {
    std::int32_t d = 0, h = 0, w = 0;

    std::int64_t voxels() const {
        return static_cast<std::int64_t>(d) * h * w;
    }
    bool operator==(const Dims3&) const = default;
    std::int32_t operator[](int axis) const {
        return axis == 0 ? d : (axis == 1 ? h : w);
    }
};

inline std::string to_string(const Dims3& s) {
    return std::to_string(s.d) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

struct Coord3 {
    std::int32_t d = 0, h = 0, w = 0;
    bool operator==(const Coord3&) const = default;
    std::int32_t operator[](int axis) const {
        return axis == 0 ? d : (axis == 1 ? h : w);
    }
};

inline std::int64_t flat_index(const Dims3& s, std::int32_t d, std::int32_t h, std::int32_t w) {
    return (static_cast<std::int64_t>(d) * s.h + h) * s.w + w;
}

// 3D scalar intensity grid, 32-bit values, typically normalized to [0, 1].
struct Volume {
    Dims3 dims;
    std::vector<float> data;

    float at(std::int32_t d, std::int32_t h, std::int32_t w) const {
        return data[flat_index(dims, d, h, w)];
    }
    float& at(std::int32_t d, std::int32_t h, std::int32_t w) {
        return data[flat_index(dims, d, h, w)];
    }
};

inline Volume make_volume(Dims3 dims, float fill = 0.0f) {
    if (dims.d < 1 || dims.h < 1 || dims.w < 1)
        throw std::invalid_argument("make_volume: dims must be positive, got " + to_string(dims));
    return Volume{dims, std::vector<float>(static_cast<std::size_t>(dims.voxels()), fill)};
}

// 3D class-id grid aligned with a Volume. Class 0 is background.
struct LabelMap {
    Dims3 dims;
    std::vector<std::uint8_t> data;
    int num_classes = 0;

    std::uint8_t at(std::int32_t d, std::int32_t h, std::int32_t w) const {
        return data[flat_index(dims, d, h, w)];
    }
    std::uint8_t& at(std::int32_t d, std::int32_t h, std::int32_t w) {
        return data[flat_index(dims, d, h, w)];
    }
};

inline LabelMap make_label_map(Dims3 dims, int num_classes, std::uint8_t fill = 0) {
    if (dims.d < 1 || dims.h < 1 || dims.w < 1)
        throw std::invalid_argument("make_label_map: dims must be positive, got " + to_string(dims));
    if (num_classes < 1 || num_classes > 256)
        throw std::invalid_argument("make_label_map: num_classes out of range");
    return LabelMap{dims, std::vector<std::uint8_t>(static_cast<std::size_t>(dims.voxels()), fill),
                    num_classes};
}

inline void check_volume(const Volume& v, const char* who) {
    if (v.dims.voxels() != static_cast<std::int64_t>(v.data.size()))
        throw std::invalid_argument(std::string(who) + ": data length does not match dims");
    for (float x : v.data)
        if (!std::isfinite(x))
            throw std::invalid_argument(std::string(who) + ": non-finite intensity value");
}

// Per-class voxel counts N_c over one or more label maps.
struct ClassStats {
    std::vector<std::uint64_t> counts;
    std::uint64_t total_voxels = 0;

    int num_classes() const { return static_cast<int>(counts.size()); }
};

inline ClassStats compute_class_stats(std::span<const LabelMap> labels, int num_classes) {
    if (num_classes < 1)
        throw std::invalid_argument("compute_class_stats: num_classes must be >= 1");
    ClassStats stats;
    stats.counts.assign(static_cast<std::size_t>(num_classes), 0);
    for (const LabelMap& m : labels) {
        for (std::uint8_t v : m.data) {
            if (v >= num_classes)
                throw std::invalid_argument("compute_class_stats: label value " +
                                            std::to_string(int(v)) + " >= num_classes " +
                                            std::to_string(num_classes));
            ++stats.counts[v];
        }
        stats.total_voxels += static_cast<std::uint64_t>(m.dims.voxels());
    }
    return stats;
}

inline ClassStats compute_class_stats(const LabelMap& labels, int num_classes) {
    return compute_class_stats(std::span<const LabelMap>(&labels, 1), num_classes);
}

}  // namespace semivox
