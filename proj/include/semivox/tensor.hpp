#pragma once

// Channel-major 4D activation tensor: index (c, d, h, w), w fastest.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "semivox/volume.hpp"

namespace semivox {

struct Tensor4 {
    int channels = 0;
    Dims3 sp;
    std::vector<float> v;

    std::int64_t spatial() const { return sp.voxels(); }
    std::int64_t size() const { return channels * sp.voxels(); }
    float* chan(int c) { return v.data() + c * sp.voxels(); }
    const float* chan(int c) const { return v.data() + c * sp.voxels(); }
    float at(int c, std::int32_t d, std::int32_t h, std::int32_t w) const {
        return v[c * sp.voxels() + flat_index(sp, d, h, w)];
    }
    float& at(int c, std::int32_t d, std::int32_t h, std::int32_t w) {
        return v[c * sp.voxels() + flat_index(sp, d, h, w)];
    }
};

inline Tensor4 make_tensor(int channels, Dims3 sp, float fill = 0.0f) {
    if (channels < 1) throw std::invalid_argument("make_tensor: channels must be >= 1");
    Tensor4 t;
    t.channels = channels;
    t.sp = sp;
    t.v.assign(static_cast<std::size_t>(channels) * sp.voxels(), fill);
    return t;
}

inline Tensor4 from_volume(const Volume& vol) {
    Tensor4 t;
    t.channels = 1;
    t.sp = vol.dims;
    t.v = vol.data;
    return t;
}

}  // namespace semivox
