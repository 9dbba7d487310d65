#pragma once

// Little-endian float32 tensor container shared by SAE and toy-model files.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "steerkit/numerics.hpp"

namespace steerkit {

class FormatError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, truncated_payload, shape_mismatch };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

namespace io {

using Magic = std::array<char, 4>;

class Writer {
public:
    void magic(const Magic& m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }

    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

    void f32s(std::span<const double> xs) {
        for (double x : xs) f32(x);
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError(FormatError::Kind::io, "cannot open for writing: " + path);
        out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
        if (!out) throw FormatError(FormatError::Kind::io, "write failed: " + path);
    }

    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class Reader {
public:
    explicit Reader(std::vector<char> bytes, std::string origin)
        : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

    static Reader open(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError(FormatError::Kind::io, "cannot open for reading: " + path);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return Reader(std::move(bytes), path);
    }

    void expect_magic(const Magic& m) {
        need(4, "magic");
        if (std::memcmp(bytes_.data() + pos_, m.data(), 4) != 0)
            throw FormatError(FormatError::Kind::bad_magic,
                              "bad magic in " + origin_ + " (expected \"" + std::string(m.data(), 4) + "\")");
        pos_ += 4;
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::vector<double> f32s(std::size_t n, const char* what) {
        need(n * 4, what);
        std::vector<double> out(n);
        for (auto& x : out) {
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i)
                v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
            pos_ += 4;
            x = static_cast<double>(std::bit_cast<float>(v));
        }
        return out;
    }

    void expect_end() const {
        if (pos_ != bytes_.size())
            throw FormatError(FormatError::Kind::shape_mismatch,
                              "trailing bytes in " + origin_ + ": header shapes disagree with payload size");
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n)
            throw FormatError(FormatError::Kind::truncated_payload,
                              std::string("truncated payload in ") + origin_ + " while reading " + what);
    }

    std::vector<char> bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

inline double quantize_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace io
}  // namespace steerkit
