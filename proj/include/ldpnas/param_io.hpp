#pragma once

// Parameter checkpoint file, little-endian throughout:
//   magic "LDPPARAM" | u32 version | u32 node count | u64 parameter count
//   | node count x (i64 offset, u64 length) | parameter count x f32

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ldpnas/engine.hpp"

namespace ldpnas {

inline constexpr char kParamMagic[8] = {'L', 'D', 'P', 'P', 'A', 'R', 'A', 'M'};
inline constexpr std::uint32_t kParamVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
    static_assert(std::is_integral_v<T>);
    unsigned char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((std::uint64_t(v) >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw Error("truncated parameter checkpoint");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return static_cast<T>(v);
}

} // namespace detail

template <class Scalar>
void save_params(const std::string& path, const ParamStore<Scalar>& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    os.write(kParamMagic, 8);
    detail::put_le<std::uint32_t>(os, kParamVersion);
    detail::put_le<std::uint32_t>(os, std::uint32_t(store.offsets.size()));
    detail::put_le<std::uint64_t>(os, store.values.size());
    for (std::size_t i = 0; i < store.offsets.size(); ++i) {
        detail::put_le<std::int64_t>(os, store.offsets[i]);
        detail::put_le<std::uint64_t>(os, std::uint64_t(store.sizes[i]));
    }
    for (Scalar v : store.values) detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(float(v)));
    if (!os) throw Error("write failed: " + path);
}

/// Loads values into a store laid out for the same plan; the offsets table must agree.
template <class Scalar>
void load_params(const std::string& path, ParamStore<Scalar>& store) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kParamMagic, 8) != 0) throw Error("not a parameter checkpoint");
    if (detail::get_le<std::uint32_t>(is) != kParamVersion) throw Error("unsupported checkpoint version");
    const auto nodes = detail::get_le<std::uint32_t>(is);
    const auto count = detail::get_le<std::uint64_t>(is);
    if (nodes != store.offsets.size() || count != store.values.size())
        throw ShapeError("checkpoint layout does not match plan");
    for (std::size_t i = 0; i < nodes; ++i) {
        const auto off = detail::get_le<std::int64_t>(is);
        const auto len = detail::get_le<std::uint64_t>(is);
        if (off != store.offsets[i] || len != std::uint64_t(store.sizes[i]))
            throw ShapeError("checkpoint offsets table does not match plan");
    }
    for (auto& v : store.values) v = Scalar(std::bit_cast<float>(detail::get_le<std::uint32_t>(is)));
}

} // namespace ldpnas
