#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "errors.hpp"

namespace avlm::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_if_big(T value) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        std::memcpy(&value, bytes, sizeof(T));
    }
    return value;
}

// Little-endian append-only byte buffer.
class Writer {
public:
    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        value = byteswap_if_big(value);
        const auto* p = reinterpret_cast<const unsigned char*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_bytes(std::span<const unsigned char> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
    void put_string(const std::string& s) {
        bytes_.insert(bytes_.end(), reinterpret_cast<const unsigned char*>(s.data()),
                      reinterpret_cast<const unsigned char*>(s.data()) + s.size());
    }
    std::size_t size() const { return bytes_.size(); }
    const std::vector<unsigned char>& bytes() const { return bytes_; }
    std::vector<unsigned char>& bytes() { return bytes_; }

private:
    std::vector<unsigned char> bytes_;
};

// Bounds-checked little-endian reader; failures name the byte offset.
class Reader {
public:
    explicit Reader(std::span<const unsigned char> data, std::string context = "buffer")
        : data_(data), context_(std::move(context)) {}

    template <class T>
        requires std::is_arithmetic_v<T>
    T get() {
        require(sizeof(T));
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return byteswap_if_big(value);
    }
    std::string get_string(std::size_t n) {
        require(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void seek(std::size_t pos) {
        if (pos > data_.size()) throw ParseError(context_ + ": seek past end", data_.size());
        pos_ = pos;
    }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    void require(std::size_t n) const {
        if (n > remaining())
            throw ParseError(context_ + ": truncated, needed " + std::to_string(n) + " more bytes", data_.size());
    }

private:
    std::span<const unsigned char> data_;
    std::string context_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const unsigned char> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

inline std::string read_text(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::span<const unsigned char> data, std::uint64_t h = 0xCBF29CE484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

}  // namespace avlm::io
