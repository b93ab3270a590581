#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "entroguard/errors.hpp"
#include "entroguard/guard.hpp"
#include "entroguard/model.hpp"
#include "entroguard/server.hpp"
#include "entroguard/wire.hpp"

namespace entroguard {

// Blocking TCP client speaking the framed JSON protocol. The server closes
// the connection after replying to a malformed frame, so request() reconnects
// lazily when the socket is gone.
class Client {
public:
    explicit Client(std::uint16_t port, const std::string& host = "127.0.0.1")
        : host_(host), port_(port) {}

    ~Client() { disconnect(); }

    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    // send one framed payload, wait for one framed response
    std::string request(const std::string& payload) { return roundtrip(frame(payload)); }

    // send pre-framed raw bytes as-is (used to exercise malformed frames)
    std::string request_raw(const std::string& bytes) { return roundtrip(bytes); }

    void disconnect() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    std::string roundtrip(const std::string& bytes) {
        const bool reused = fd_ >= 0;
        ensure_connected();
        unsigned char header[4];
        bool sent = net_detail::write_all(fd_, bytes);
        bool got_header = sent && net_detail::read_exact(fd_, header, 4);
        if (!got_header) {
            // a reused connection may be stale (the server drops the
            // connection after a malformed frame) — reconnect and retry once
            disconnect();
            if (!reused) throw TransportError("connection closed before response");
            ensure_connected();
            if (!net_detail::write_all(fd_, bytes)) throw TransportError("send failed");
            if (!net_detail::read_exact(fd_, header, 4)) {
                disconnect();
                throw TransportError("connection closed before response");
            }
        }
        const std::uint32_t n = parse_frame_length(header);
        if (n > kMaxFrameBytes) {
            disconnect();
            throw TransportError("oversize response frame");
        }
        std::string payload(n, '\0');
        if (n > 0 && !net_detail::read_exact(fd_, payload.data(), n)) {
            disconnect();
            throw TransportError("truncated response frame");
        }
        return payload;
    }

    void ensure_connected() {
        if (fd_ >= 0) return;
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw TransportError("socket() failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port_);
        if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
            disconnect();
            throw TransportError("bad host address: " + host_);
        }
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
            disconnect();
            throw TransportError("connect() failed");
        }
    }

    std::string host_;
    std::uint16_t port_;
    int fd_ = -1;
};

struct QueryHit {
    int id;
    double score;
    std::string text;
};

inline std::vector<QueryHit> parse_hits(const std::string& response) {
    nlohmann::json j = nlohmann::json::parse(response);
    if (!j.value("ok", false))
        throw TransportError("query failed: " + j.value("error", std::string("unknown")));
    std::vector<QueryHit> hits;
    for (const auto& h : j.at("hits"))
        hits.push_back({h.at("id").get<int>(), h.at("score").get<double>(),
                        h.at("text").get<std::string>()});
    return hits;
}

inline void expect_ok(const std::string& response) {
    nlohmann::json j = nlohmann::json::parse(response);
    if (!j.value("ok", false))
        throw TransportError("request failed: " + j.value("error", std::string("unknown")));
}

// End-side query path: embed locally, optionally protect the embedding, send
// only the (protected) vector to the cloud. Raw text never crosses the wire
// for queries.
inline std::vector<QueryHit> client_query(Client& client, const std::vector<std::string>& words,
                                          const EncoderModel& encoder, const Vocab& vocab,
                                          int k, const PerturbGenerator* guard = nullptr,
                                          const AdaptConfig* adapt_cfg = nullptr) {
    std::vector<float> e = embed(encoder, encode(words, vocab));
    if (guard) {
        if (!adapt_cfg) throw ContractError("guard requires an adaptation config");
        e = protect(e, *guard, *adapt_cfg);
    }
    return parse_hits(client.request(make_query(e, k)));
}

inline void client_insert(Client& client, int id, const std::vector<std::string>& words,
                          const EncoderModel& encoder, const Vocab& vocab) {
    std::vector<float> e = embed(encoder, encode(words, vocab));
    expect_ok(client.request(make_insert(id, join_words(words), e)));
}

}  // namespace entroguard
