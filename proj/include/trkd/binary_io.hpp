#pragma once

// Little-endian encode/decode helpers for the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "trkd/errors.hpp"

namespace trkd::bin {

template <typename U>
U to_le(U v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        U out = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xFF);
        return out;
    }
}

class Writer {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void magic(const char (&m)[5]) { raw(m, 4); }
    void u32(std::uint32_t v) { put(to_le(v)); }
    void f32(float v) { put(to_le(std::bit_cast<std::uint32_t>(v))); }
    void f64(double v) { put(to_le(std::bit_cast<std::uint64_t>(v))); }

    const std::vector<unsigned char>& bytes() const noexcept { return buf_; }

private:
    template <typename U>
    void put(U v) {
        raw(&v, sizeof v);
    }
    std::vector<unsigned char> buf_;
};

inline void save(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

class Reader {
public:
    Reader(std::vector<unsigned char> bytes, std::string source)
        : buf_(std::move(bytes)), source_(std::move(source)) {}

    static Reader load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path + "' for reading");
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
        return Reader(std::move(bytes), path);
    }

    bool magic(const char (&m)[5]) {
        need(4);
        const bool ok = std::memcmp(buf_.data() + pos_, m, 4) == 0;
        pos_ += 4;
        return ok;
    }
    std::uint32_t u32() { return to_le(get<std::uint32_t>()); }
    float f32() { return std::bit_cast<float>(to_le(get<std::uint32_t>())); }
    double f64() { return std::bit_cast<double>(to_le(get<std::uint64_t>())); }

    std::size_t remaining() const noexcept { return buf_.size() - pos_; }
    std::size_t size() const noexcept { return buf_.size(); }
    const std::string& source() const noexcept { return source_; }

    void need(std::size_t n) const {
        if (remaining() < n)
            throw TruncationError("'" + source_ + "' is truncated: needed " + std::to_string(n) +
                                  " more bytes at offset " + std::to_string(pos_) + ", have " +
                                  std::to_string(remaining()));
    }

private:
    template <typename U>
    U get() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, buf_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }

    std::vector<unsigned char> buf_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace trkd::bin
