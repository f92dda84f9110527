#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "svtc/common/error.hpp"

// Explicit little-endian encoding so files are byte-identical on every host.
namespace svtc::le {

inline void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

inline void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void encode_u32(char* dst, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) dst[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline std::uint32_t decode_u32(const char* src) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[i])) << (8 * i);
    return v;
}

inline float decode_f32(const char* src) { return std::bit_cast<float>(decode_u32(src)); }

// Reads exactly n bytes or throws FormatError naming the byte offset at which
// the stream ran out.
inline void read_exact(std::istream& in, char* dst, std::size_t n, const std::string& what) {
    const auto start = static_cast<long long>(in.tellg());
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw FormatError(what + ": truncated at byte offset " +
                          std::to_string(start + static_cast<long long>(in.gcount())));
    }
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
    char b[4];
    read_exact(in, b, 4, what);
    return decode_u32(b);
}

inline std::uint8_t get_u8(std::istream& in, const std::string& what) {
    char b;
    read_exact(in, &b, 1, what);
    return static_cast<std::uint8_t>(b);
}

} // namespace svtc::le
