#pragma once

// Byte-order helpers shared by the dataset and report readers/writers.

#include "tickets/datasets.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace tickets::detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

inline std::uint32_t load_be_u32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

inline void append_be_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

inline void append_le_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(std::uint8_t(v >> s));
}

inline void append_le_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) out.push_back(std::uint8_t(v >> s));
}

inline void append_le_f32(std::vector<std::uint8_t>& out, float v) {
    append_le_u32(out, std::bit_cast<std::uint32_t>(v));
}

// Bounds-checked little-endian cursor over an in-memory file.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string what)
        : bytes_(bytes), what_(std::move(what)) {}

    std::span<const std::uint8_t> take(std::size_t n) {
        if (n > bytes_.size() - pos_) throw FormatError(what_ + ": truncated file");
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::uint32_t le_u32() {
        auto b = take(4);
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
               (std::uint32_t(b[3]) << 24);
    }

    std::uint64_t le_u64() {
        std::uint64_t lo = le_u32();
        std::uint64_t hi = le_u32();
        return lo | (hi << 32);
    }

    float le_f32() { return std::bit_cast<float>(le_u32()); }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::string what_;
};

} // namespace tickets::detail
