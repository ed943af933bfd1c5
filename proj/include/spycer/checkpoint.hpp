/**
 * @file checkpoint.hpp
 * @brief Binary checkpoint format.
 *
 *   magic "SPYC" | u32 version | u32 count |
 *   count x ( u32 name_len | name bytes (UTF-8) | u32 rank | rank x u32 dim |
 *             prod(dims) x f32 )
 *
 * All integers and floats are little-endian.
 */
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spycer/error.hpp"
#include "spycer/optim.hpp"
#include "spycer/tensor.hpp"

namespace spycer::ckpt {

inline constexpr char kMagic[4] = {'S', 'P', 'Y', 'C'};
inline constexpr std::uint32_t kVersion = 1;

struct Entry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) fail(ErrorKind::Format, "checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
}

} // namespace detail

inline std::string encode(const std::vector<Entry>& entries) {
    std::string out(kMagic, 4);
    detail::put_u32(out, kVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        std::size_t n = 1;
        for (auto d : e.dims) n *= d;
        if (n != e.data.size()) fail(ErrorKind::ShapeMismatch, "checkpoint entry '" + e.name + "' size mismatch");
        detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        detail::put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) detail::put_u32(out, d);
        for (float f : e.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

inline std::vector<Entry> decode(const std::string& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        fail(ErrorKind::Format, "not a SPYC checkpoint");
    std::size_t pos = 4;
    const auto version = detail::get_u32(bytes, pos);
    if (version != kVersion) fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
    const auto count = detail::get_u32(bytes, pos);
    std::vector<Entry> entries;
    entries.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        Entry e;
        const auto len = detail::get_u32(bytes, pos);
        if (pos + len > bytes.size()) fail(ErrorKind::Format, "checkpoint truncated");
        e.name = bytes.substr(pos, len);
        pos += len;
        const auto rank = detail::get_u32(bytes, pos);
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            e.dims.push_back(detail::get_u32(bytes, pos));
            n *= e.dims.back();
        }
        if (pos + 4 * n > bytes.size()) fail(ErrorKind::Format, "checkpoint truncated");
        e.data.resize(n);
        for (std::size_t i = 0; i < n; ++i) e.data[i] = std::bit_cast<float>(detail::get_u32(bytes, pos));
        entries.push_back(std::move(e));
    }
    if (pos != bytes.size()) fail(ErrorKind::Format, "trailing bytes after checkpoint");
    return entries;
}

template <typename T>
Entry to_entry(const std::string& name, const ad::Tensor<T>& t) {
    Entry e;
    e.name = name;
    for (auto d : t.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    e.data.reserve(t.size());
    for (T v : t.values()) e.data.push_back(static_cast<float>(v));
    return e;
}

template <typename T>
void load_into(const Entry& e, ad::Tensor<T>& t) {
    if (e.data.size() != t.size()) fail(ErrorKind::ShapeMismatch, "checkpoint entry '" + e.name + "' size mismatch");
    for (std::size_t i = 0; i < e.dims.size() && i < t.rank(); ++i)
        if (e.dims[i] != t.dim(i)) fail(ErrorKind::ShapeMismatch, "checkpoint entry '" + e.name + "' shape mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(e.data[i]);
}

inline const Entry& find(const std::vector<Entry>& entries, const std::string& name) {
    for (const auto& e : entries)
        if (e.name == name) return e;
    fail(ErrorKind::Format, "checkpoint has no entry '" + name + "'");
}

inline const Entry* find_optional(const std::vector<Entry>& entries, const std::string& name) {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

inline void write_file(const std::filesystem::path& path, const std::vector<Entry>& entries) {
    const auto bytes = encode(entries);
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<Entry> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode(ss.str());
}

} // namespace spycer::ckpt
