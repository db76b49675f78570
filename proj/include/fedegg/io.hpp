#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fedegg/dataset.hpp"
#include "fedegg/errors.hpp"

namespace fedegg {

namespace detail {

inline std::vector<unsigned char> read_all_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16_le(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline float read_f32_le(const unsigned char* p) {
    return std::bit_cast<float>(read_u32_le(p));
}

inline void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

}  // namespace detail

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarImageBytes;

/// One CIFAR-10 binary batch: records of <1 label byte><3072 pixel bytes>,
/// pixels as R, G, B planes of 32x32 row-major. Pixels are scaled to [0, 1].
inline Dataset load_cifar10_bin(const std::filesystem::path& path) {
    const auto bytes = detail::read_all_bytes(path);
    if (bytes.empty()) throw FormatError(path.string() + ": empty CIFAR-10 file");
    if (bytes.size() % kCifarRecordBytes != 0) {
        throw FormatError(path.string() + ": truncated CIFAR-10 file (" + std::to_string(bytes.size()) +
                          " bytes is not a multiple of 3073)");
    }
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    std::vector<double> feats(n * kCifarImageBytes);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * kCifarRecordBytes;
        if (rec[0] > 9) {
            throw FormatError(path.string() + ": record " + std::to_string(i) + " has label " +
                              std::to_string(rec[0]));
        }
        labels[i] = rec[0];
        for (std::size_t j = 0; j < kCifarImageBytes; ++j) feats[i * kCifarImageBytes + j] = rec[1 + j] / 255.0;
    }
    return Dataset(kCifarImageBytes, 10, std::move(feats), std::move(labels));
}

// FEDF feature files, all integers little-endian:
//   "FEDF" | u32 n | u32 d | u32 k | n x ( u16 label | d x f32 )

inline constexpr std::array<char, 4> kFeatureMagic{'F', 'E', 'D', 'F'};
inline constexpr std::size_t kFeatureHeaderBytes = 16;

inline Dataset load_feature_file(const std::filesystem::path& path) {
    const auto bytes = detail::read_all_bytes(path);
    if (bytes.size() < kFeatureHeaderBytes) throw FormatError(path.string() + ": feature file shorter than header");
    if (std::memcmp(bytes.data(), kFeatureMagic.data(), 4) != 0) throw FormatError(path.string() + ": bad magic");
    const std::uint64_t n = detail::read_u32_le(bytes.data() + 4);
    const std::uint64_t d = detail::read_u32_le(bytes.data() + 8);
    const std::uint64_t k = detail::read_u32_le(bytes.data() + 12);
    if (n == 0 || d == 0 || k == 0) throw FormatError(path.string() + ": n, d and k must be positive");
    const std::uint64_t record = 2 + 4 * d;
    if (bytes.size() != kFeatureHeaderBytes + n * record) {
        throw FormatError(path.string() + ": declared n=" + std::to_string(n) + ", d=" + std::to_string(d) +
                          " needs " + std::to_string(kFeatureHeaderBytes + n * record) + " bytes, file has " +
                          std::to_string(bytes.size()));
    }
    std::vector<double> feats(n * d);
    std::vector<int> labels(n);
    const unsigned char* p = bytes.data() + kFeatureHeaderBytes;
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint16_t y = detail::read_u16_le(p);
        if (y >= k) throw FormatError(path.string() + ": record " + std::to_string(i) + " label out of range");
        labels[i] = y;
        p += 2;
        for (std::uint64_t j = 0; j < d; ++j, p += 4) feats[i * d + j] = detail::read_f32_le(p);
    }
    try {
        return Dataset(d, k, std::move(feats), std::move(labels));
    } catch (const Error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

/// Writes the dataset as FEDF. Features are narrowed to f32.
inline void write_feature_file(const std::filesystem::path& path, const Dataset& data) {
    if (data.num_classes() > 65536) throw FormatError("write_feature_file: too many classes for u16 labels");
    std::vector<unsigned char> out(kFeatureMagic.begin(), kFeatureMagic.end());
    detail::put_u32_le(out, static_cast<std::uint32_t>(data.size()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(data.dim()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(data.num_classes()));
    out.reserve(kFeatureHeaderBytes + data.size() * (2 + 4 * data.dim()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto y = static_cast<std::uint16_t>(data.label(i));
        out.push_back(static_cast<unsigned char>(y & 0xff));
        out.push_back(static_cast<unsigned char>(y >> 8));
        for (double v : data.row(i)) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw FormatError("short write to " + path.string());
}

}  // namespace fedegg
