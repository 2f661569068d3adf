#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "kvevict/errors.hpp"

namespace kvevict::detail {

template <typename T>
void put_le(std::ostream& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto bits = static_cast<U>(value);
    char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<char>(bits & 0xFFU);
        bits = static_cast<U>(bits >> 8U);
    }
    out.write(bytes, sizeof(T));
}

inline void put_f32(std::ostream& out, float value) {
    put_le(out, std::bit_cast<std::uint32_t>(value));
}

inline void put_f32s(std::ostream& out, std::span<const float> values) {
    for (float v : values) {
        put_f32(out, v);
    }
}

template <typename T>
bool get_le(std::istream& in, T& value) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        return false;
    }
    std::make_unsigned_t<T> bits = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) {
        bits = static_cast<std::make_unsigned_t<T>>((bits << 8U) | bytes[i]);
    }
    value = static_cast<T>(bits);
    return true;
}

template <typename T>
T need_le(std::istream& in, const std::string& what) {
    T value{};
    if (!get_le(in, value)) {
        throw ParseError("truncated file while reading " + what);
    }
    return value;
}

inline float need_f32(std::istream& in, const std::string& what) {
    return std::bit_cast<float>(need_le<std::uint32_t>(in, what));
}

}  // namespace kvevict::detail
