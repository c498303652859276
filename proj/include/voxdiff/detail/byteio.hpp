#pragma once

// Little-endian scalar (de)serialization shared by the .sgrid and .vdck
// readers/writers. Readers take an origin string so truncation errors name
// the offending file.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "voxdiff/errors.hpp"

namespace voxdiff::detail {

[[noreturn]] inline void malformed(const std::string& origin, const std::string& what) {
    throw ConfigError(origin + ": " + what);
}

inline void put_u16(std::ostream& out, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline uint16_t get_u16(std::istream& in, const std::string& origin) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2)) malformed(origin, "truncated data");
    return uint16_t(b[0]) | (uint16_t(b[1]) << 8);
}

inline uint32_t get_u32(std::istream& in, const std::string& origin) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) malformed(origin, "truncated data");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return v;
}

inline float get_f32(std::istream& in, const std::string& origin) {
    uint32_t bits = get_u32(in, origin);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace voxdiff::detail
