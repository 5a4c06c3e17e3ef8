#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include "sentinel/error.hpp"

namespace sentinel {

namespace detail {

inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
            t[i] = c;
        }
        return t;
    }();
    return table;
}

} // namespace detail

inline std::uint32_t crc32(std::span<const std::byte> data, std::uint32_t seed = 0) {
    std::uint32_t c = seed ^ 0xffffffffu;
    const auto& table = detail::crc32_table();
    for (std::byte b : data)
        c = table[(c ^ static_cast<std::uint8_t>(b)) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

inline std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t seed = 0) {
    return crc32(std::span<const std::byte>(static_cast<const std::byte*>(data), size), seed);
}

/// FNV-1a digest of a file's bytes; used for run-summary input digests and
/// artifact identity checks.
inline std::uint64_t file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingArtifactError("cannot open file for digest: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

} // namespace sentinel
