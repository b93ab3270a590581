#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "entroguard/adam.hpp"
#include "entroguard/errors.hpp"

namespace entroguard {

// Checkpoint file: magic "EGCK", u32-LE version, then parameter records
// sorted by name: u32-LE name length, UTF-8 name, u32-LE rank, u32-LE dims,
// raw little-endian float32 payload.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ConfigError("truncated checkpoint");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

}  // namespace ckpt_detail

inline void save_checkpoint(std::ostream& out, const Params& params) {
    std::vector<const Param*> sorted;
    for (const auto& p : params) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [](const Param* a, const Param* b) { return a->name < b->name; });
    out.write("EGCK", 4);
    ckpt_detail::put_u32(out, kCheckpointVersion);
    for (const Param* p : sorted) {
        ckpt_detail::put_u32(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        const auto& shape = p->tensor.shape();
        ckpt_detail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) ckpt_detail::put_u32(out, static_cast<std::uint32_t>(d));
        static_assert(sizeof(float) == 4);
        // host is little-endian; bytes go out as stored
        out.write(reinterpret_cast<const char*>(p->tensor.data().data()),
                  static_cast<std::streamsize>(p->tensor.size() * 4));
    }
}

inline void save_checkpoint(const std::string& path, const Params& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    save_checkpoint(out, params);
}

inline void load_checkpoint(std::istream& in, Params& params) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "EGCK", 4) != 0) throw ConfigError("bad checkpoint magic");
    if (ckpt_detail::get_u32(in) != kCheckpointVersion)
        throw ConfigError("unsupported checkpoint version");
    std::map<std::string, Param*> by_name;
    for (auto& p : params) by_name[p.name] = &p;
    std::size_t loaded = 0;
    while (true) {
        int peek = in.peek();
        if (peek == std::char_traits<char>::eof()) break;
        std::uint32_t name_len = ckpt_detail::get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rank = ckpt_detail::get_u32(in);
        std::vector<int> shape(rank);
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape[i] = static_cast<int>(ckpt_detail::get_u32(in));
            n *= static_cast<std::size_t>(shape[i]);
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("unknown parameter in checkpoint: " + name);
        if (it->second->tensor.shape() != shape)
            throw ConfigError("shape mismatch for parameter " + name);
        in.read(reinterpret_cast<char*>(it->second->tensor.data().data()),
                static_cast<std::streamsize>(n * 4));
        if (!in) throw ConfigError("truncated checkpoint payload for " + name);
        ++loaded;
    }
    if (loaded != params.size()) throw ConfigError("checkpoint parameter count mismatch");
}

inline void load_checkpoint(const std::string& path, Params& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read checkpoint: " + path);
    load_checkpoint(in, params);
}

}  // namespace entroguard
