#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "entroguard/errors.hpp"

namespace entroguard {

// Wire framing: 4-byte big-endian payload length, then that many bytes of
// UTF-8 JSON. Frames above 1 MiB are rejected.

inline constexpr std::uint32_t kMaxFrameBytes = 1 << 20;

inline std::string frame(const std::string& payload) {
    if (payload.size() > kMaxFrameBytes) throw TransportError("frame payload too large");
    const std::uint32_t n = static_cast<std::uint32_t>(payload.size());
    std::string out;
    out.reserve(4 + payload.size());
    out.push_back(static_cast<char>((n >> 24) & 0xff));
    out.push_back(static_cast<char>((n >> 16) & 0xff));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
    out += payload;
    return out;
}

inline std::uint32_t parse_frame_length(const unsigned char header[4]) {
    return (std::uint32_t(header[0]) << 24) | (std::uint32_t(header[1]) << 16) |
           (std::uint32_t(header[2]) << 8) | std::uint32_t(header[3]);
}

// request/response payloads

inline std::string make_ping() { return nlohmann::json{{"op", "ping"}}.dump(); }

inline std::string make_insert(int id, const std::string& text, const std::vector<float>& e) {
    nlohmann::json j{{"op", "insert"}, {"id", id}, {"text", text}};
    j["embedding"] = e;
    return j.dump();
}

inline std::string make_query(const std::vector<float>& e, int k) {
    nlohmann::json j{{"op", "query"}, {"k", k}};
    j["embedding"] = e;
    return j.dump();
}

inline std::string make_ok() { return nlohmann::json{{"ok", true}}.dump(); }

inline std::string make_error(const std::string& message) {
    return nlohmann::json{{"ok", false}, {"error", message}}.dump();
}

}  // namespace entroguard
