#pragma once

// Little-endian primitives shared by the bundle, checkpoint and cache formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "graphcal/error.hpp"
#include "graphcal/numerics.hpp"

namespace graphcal::binio {

inline void write_u64(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out.write(bytes, 8);
}

inline std::uint64_t read_u64(std::istream& in, const char* what) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
        throw FormatError(std::string(what) + ": truncated payload");
    }
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
    return v;
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out.write(bytes, 4);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw FormatError(std::string(what) + ": truncated payload");
    }
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes[i];
    return v;
}

inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline double read_f64(std::istream& in, const char* what) {
    return std::bit_cast<double>(read_u64(in, what));
}

/// u64 rows, u64 cols, then rows*cols f64.
inline void write_matrix(std::ostream& out, const DenseMatrix& m) {
    write_u64(out, m.rows());
    write_u64(out, m.cols());
    for (double v : m.data()) write_f64(out, v);
}

inline DenseMatrix read_matrix(std::istream& in, const char* what) {
    const auto rows = read_u64(in, what);
    const auto cols = read_u64(in, what);
    if (rows > (1ULL << 32) || cols > (1ULL << 32)) {
        throw FormatError(std::string(what) + ": implausible matrix header");
    }
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = read_f64(in, what);
    return m;
}

}  // namespace graphcal::binio
