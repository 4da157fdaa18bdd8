#pragma once

// Little-endian fixed-width helpers shared by the checkpoint, sidecar and
// adapter formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "dift/error.hpp"

namespace dift::io {

template <class U>
U to_little(U v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        U out = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
        }
        return out;
    }
}

template <class U>
void write_uint(std::ostream& out, U v) {
    v = to_little(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_uint(std::istream& in, std::string_view what) {
    U v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) {
        throw DataError("truncated " + std::string(what));
    }
    return to_little(v);
}

inline void write_doubles(std::ostream& out, std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    } else {
        for (double d : values) {
            write_uint(out, std::bit_cast<std::uint64_t>(d));
        }
    }
}

inline void read_doubles(std::istream& in, std::span<double> values, std::string_view what) {
    if constexpr (std::endian::native == std::endian::little) {
        if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()))) {
            throw DataError("truncated " + std::string(what));
        }
    } else {
        for (double& d : values) {
            d = std::bit_cast<double>(read_uint<std::uint64_t>(in, what));
        }
    }
}

inline void write_magic(std::ostream& out, const std::array<char, 8>& magic) { out.write(magic.data(), 8); }

inline void expect_magic(std::istream& in, const std::array<char, 8>& magic, std::string_view what) {
    std::array<char, 8> got{};
    if (!in.read(got.data(), 8) || got != magic) {
        throw DataError("bad magic in " + std::string(what));
    }
}

}  // namespace dift::io
