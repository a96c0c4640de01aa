#pragma once

// Bit-exact volume persistence.
//
// File layout (fixed little-endian regardless of host):
//   bytes 0..3   magic "DMXV"
//   byte  4      version, currently 1
//   byte  5      dtype: 0 = real32 (Volume), 1 = uint8 (LabelMap)
//   bytes 6..17  dims D, H, W as three uint32 little-endian
//   bytes 18..   payload, row-major (d, h, w), little-endian per element
//
// A label map does not persist its class count; on load num_classes is the
// smallest consistent value (max label + 1).

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "semivox/volume.hpp"

namespace semivox {

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("store_volume: cannot open " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("store_volume: write failed on " + path);
}

inline std::string header_bytes(std::uint8_t dtype, Dims3 dims) {
    std::string out = "DMXV";
    out.push_back(1);  // version
    out.push_back(static_cast<char>(dtype));
    put_u32le(out, static_cast<std::uint32_t>(dims.d));
    put_u32le(out, static_cast<std::uint32_t>(dims.h));
    put_u32le(out, static_cast<std::uint32_t>(dims.w));
    return out;
}

}  // namespace detail

constexpr std::size_t kVolumeHeaderBytes = 18;

inline void store_volume(const Volume& v, const std::string& path) {
    std::string out = detail::header_bytes(0, v.dims);
    out.reserve(out.size() + v.data.size() * 4);
    for (float x : v.data) detail::put_u32le(out, std::bit_cast<std::uint32_t>(x));
    detail::write_file(path, out);
}

inline void store_volume(const LabelMap& m, const std::string& path) {
    std::string out = detail::header_bytes(1, m.dims);
    out.append(reinterpret_cast<const char*>(m.data.data()), m.data.size());
    detail::write_file(path, out);
}

using LoadedVolume = std::variant<Volume, LabelMap>;

inline LoadedVolume load_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_volume: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (bytes.size() < kVolumeHeaderBytes || bytes.compare(0, 4, "DMXV") != 0)
        throw std::runtime_error("load_volume: unrecognized format in " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (p[4] != 1)
        throw std::runtime_error("load_volume: unsupported version " + std::to_string(int(p[4])));
    const std::uint8_t dtype = p[5];
    if (dtype > 1)
        throw std::runtime_error("load_volume: unknown dtype code " + std::to_string(int(dtype)));
    Dims3 dims{static_cast<std::int32_t>(detail::get_u32le(p + 6)),
               static_cast<std::int32_t>(detail::get_u32le(p + 10)),
               static_cast<std::int32_t>(detail::get_u32le(p + 14))};
    if (dims.d < 1 || dims.h < 1 || dims.w < 1)
        throw std::runtime_error("load_volume: invalid dims " + to_string(dims));
    const std::uint64_t n = static_cast<std::uint64_t>(dims.voxels());
    const std::uint64_t payload = bytes.size() - kVolumeHeaderBytes;
    const std::uint64_t expect = dtype == 0 ? n * 4 : n;
    if (payload != expect)
        throw std::runtime_error("load_volume: truncated/oversized payload in " + path +
                                 " (have " + std::to_string(payload) + " bytes, need " +
                                 std::to_string(expect) + ")");

    if (dtype == 0) {
        Volume v{dims, std::vector<float>(n)};
        const unsigned char* q = p + kVolumeHeaderBytes;
        for (std::uint64_t i = 0; i < n; ++i, q += 4)
            v.data[i] = std::bit_cast<float>(detail::get_u32le(q));
        check_volume(v, "load_volume");
        return v;
    }
    LabelMap m{dims, std::vector<std::uint8_t>(n), 0};
    std::memcpy(m.data.data(), p + kVolumeHeaderBytes, n);
    std::uint8_t maxv = 0;
    for (std::uint8_t v : m.data) maxv = std::max(maxv, v);
    m.num_classes = int(maxv) + 1;
    return m;
}

inline Volume load_volume_image(const std::string& path) {
    LoadedVolume lv = load_volume(path);
    if (!std::holds_alternative<Volume>(lv))
        throw std::runtime_error("load_volume: expected real32 volume in " + path);
    return std::get<Volume>(std::move(lv));
}

inline LabelMap load_volume_labels(const std::string& path) {
    LoadedVolume lv = load_volume(path);
    if (!std::holds_alternative<LabelMap>(lv))
        throw std::runtime_error("load_volume: expected uint8 label map in " + path);
    return std::get<LabelMap>(std::move(lv));
}

}  // namespace semivox
