#pragma once

// SFT1 tensor file format: 8-byte magic "SACTFT1\0", one UTF-8 JSON header
// line {"shape":[...],"dtype":"f64"}, then raw little-endian f64 values.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sact/tensor.hpp"

namespace sact {

inline constexpr char kSftMagic[8] = {'S', 'A', 'C', 'T', 'F', 'T', '1', '\0'};

namespace detail {

inline void write_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

inline double read_f64_le(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline void save_sft(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_sft: cannot open " + path + " for writing");
    os.write(kSftMagic, 8);
    nlohmann::json header;
    header["shape"] = t.shape();
    header["dtype"] = "f64";
    std::string line = header.dump();
    os.write(line.data(), static_cast<std::streamsize>(line.size()));
    os.put('\n');
    for (double v : t.values()) detail::write_f64_le(os, v);
    if (!os) throw std::runtime_error("save_sft: write failed for " + path);
}

inline Tensor load_sft(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_sft: missing file " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kSftMagic, 8) != 0)
        throw std::runtime_error("load_sft: bad magic in " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("load_sft: truncated header in " + path);
    nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.contains("shape") || !header.contains("dtype"))
        throw std::runtime_error("load_sft: malformed header in " + path);
    if (header["dtype"] != "f64")
        throw std::runtime_error("load_sft: unsupported dtype in " + path);
    Shape shape = header["shape"].get<Shape>();
    std::size_t n = shape_numel(shape);
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = detail::read_f64_le(is);
    if (!is) throw std::runtime_error("load_sft: payload shorter than header shape in " + path);
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace sact
