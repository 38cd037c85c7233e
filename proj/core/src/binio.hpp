#pragma once

// Little-endian binary append/read helpers shared by the checkpoint and
// adversarial-batch serializers. Internal to the library.

#include <cstdint>
#include <cstring>
#include <string>

#include "ila/common.hpp"

namespace ila::binio {

inline void put_u32(std::string& s, uint32_t v) {
    s.append(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_u64(std::string& s, uint64_t v) {
    s.append(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_f32(std::string& s, float v) {
    s.append(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void need(const std::string& s, size_t off, size_t n, const std::string& what) {
    if (off + n > s.size()) throw IoError("file truncated in " + what);
}

inline uint32_t get_u32(const std::string& s, size_t& off, const std::string& what) {
    need(s, off, 4, what);
    uint32_t v;
    std::memcpy(&v, s.data() + off, 4);
    off += 4;
    return v;
}

inline uint64_t get_u64(const std::string& s, size_t& off, const std::string& what) {
    need(s, off, 8, what);
    uint64_t v;
    std::memcpy(&v, s.data() + off, 8);
    off += 8;
    return v;
}

inline float get_f32(const std::string& s, size_t& off, const std::string& what) {
    need(s, off, 4, what);
    float v;
    std::memcpy(&v, s.data() + off, 4);
    off += 4;
    return v;
}

}  // namespace ila::binio
