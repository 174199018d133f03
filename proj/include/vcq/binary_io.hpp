#pragma once

// Little-endian packing for the on-disk formats, independent of host byte order.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "vcq/error.hpp"

namespace vcq::io {

class ByteWriter {
public:
    void bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

    template <typename T>
    void le(T value)
    {
        static_assert(std::is_integral_v<T> && std::is_unsigned_v<T>);
        for (std::size_t i = 0; i < sizeof(T); ++i)
            buf_.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
    }

    void f32(float value)
    {
        std::uint32_t bits = 0;
        std::memcpy(&bits, &value, sizeof bits);
        le(bits);
    }

    const std::vector<char>& data() const { return buf_; }

private:
    std::vector<char> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const char> data) : data_(data) {}

    std::string_view bytes(std::size_t n)
    {
        require(n);
        std::string_view out(data_.data() + pos_, n);
        pos_ += n;
        return out;
    }

    template <typename T>
    T le()
    {
        static_assert(std::is_integral_v<T> && std::is_unsigned_v<T>);
        require(sizeof(T));
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            value |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return value;
    }

    float f32()
    {
        const auto bits = le<std::uint32_t>();
        float value = 0;
        std::memcpy(&value, &bits, sizeof value);
        return value;
    }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void require(std::size_t n) const
    {
        if (data_.size() - pos_ < n)
            throw FormatError("unexpected end of file");
    }

    std::span<const char> data_;
    std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> data);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text)
{
    write_file_atomic(path, std::string_view(text));
}

} // namespace vcq::io
