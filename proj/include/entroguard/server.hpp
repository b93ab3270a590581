#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "entroguard/errors.hpp"
#include "entroguard/report.hpp"
#include "entroguard/store.hpp"
#include "entroguard/wire.hpp"

namespace entroguard {

// Append-only record of received query embeddings (honest-but-curious mode).
class CuriousLog {
public:
    void append(const std::vector<float>& embedding) {
        std::lock_guard lock(mutex_);
        Entry e;
        e.query_id = static_cast<int>(entries_.size());
        e.ts = std::chrono::duration_cast<std::chrono::microseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
        e.embedding = embedding;
        entries_.push_back(std::move(e));
    }

    std::vector<std::vector<float>> embeddings() const {
        std::lock_guard lock(mutex_);
        std::vector<std::vector<float>> out;
        for (const auto& e : entries_) out.push_back(e.embedding);
        return out;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return entries_.size();
    }

    // CSV: ts, query_id, e_0..e_{d-1}
    void write_csv(const std::string& path) const {
        std::lock_guard lock(mutex_);
        std::ofstream out(path);
        if (!out) throw ConfigError("cannot write curious log: " + path);
        out << "ts,query_id";
        const int d = entries_.empty() ? 0 : static_cast<int>(entries_[0].embedding.size());
        for (int i = 0; i < d; ++i) out << ",e_" << i;
        out << '\n';
        for (const auto& e : entries_) {
            out << e.ts << ',' << e.query_id;
            for (float v : e.embedding) out << ',' << format_number(v);
            out << '\n';
        }
    }

    static std::vector<std::vector<float>> read_csv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read curious log: " + path);
        std::string line;
        std::getline(in, line);  // header
        std::vector<std::vector<float>> out;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<float> e;
            std::size_t pos = 0;
            int field = 0;
            while (pos <= line.size()) {
                std::size_t comma = line.find(',', pos);
                if (comma == std::string::npos) comma = line.size();
                if (field >= 2) e.push_back(std::stof(line.substr(pos, comma - pos)));
                pos = comma + 1;
                ++field;
            }
            out.push_back(std::move(e));
        }
        return out;
    }

private:
    struct Entry {
        long long ts;
        int query_id;
        std::vector<float> embedding;
    };
    mutable std::mutex mutex_;
    std::vector<Entry> entries_;
};

// One request per frame, synchronous reply. In curious mode every query
// embedding is appended to the log; in honest mode the server performs no
// extra computation on embeddings.
struct HandlerResult {
    std::string response;
    bool close = false;  // malformed frames close the connection
};

inline HandlerResult handle_request(VectorStore& store, const std::string& payload,
                                    CuriousLog* curious) {
    nlohmann::json req;
    try {
        req = nlohmann::json::parse(payload);
    } catch (const nlohmann::json::exception&) {
        return {make_error("malformed payload"), true};
    }
    try {
        const std::string op = req.value("op", "");
        if (op == "ping") return {make_ok(), false};
        if (op == "insert") {
            std::vector<float> e = req.at("embedding").get<std::vector<float>>();
            store.insert(req.at("id").get<int>(), req.at("text").get<std::string>(), e);
            return {make_ok(), false};
        }
        if (op == "query") {
            std::vector<float> e = req.at("embedding").get<std::vector<float>>();
            const int k = req.at("k").get<int>();
            if (static_cast<int>(e.size()) != store.dim())
                return {make_error("dimension mismatch"), false};
            if (curious) curious->append(e);
            nlohmann::json hits = nlohmann::json::array();
            for (const auto& hit : store.topk(e, k))
                hits.push_back({{"id", hit.id}, {"score", hit.score}, {"text", hit.text}});
            return {nlohmann::json{{"ok", true}, {"hits", hits}}.dump(), false};
        }
        return {make_error("unknown op"), false};
    } catch (const nlohmann::json::exception&) {
        return {make_error("malformed payload"), true};
    } catch (const std::exception& e) {
        return {make_error(e.what()), false};
    }
}

namespace net_detail {

inline bool read_exact(int fd, void* buf, std::size_t n) {
    auto* p = static_cast<char*>(buf);
    std::size_t got = 0;
    while (got < n) {
        ssize_t r = ::recv(fd, p + got, n - got, 0);
        if (r <= 0) return false;
        got += static_cast<std::size_t>(r);
    }
    return true;
}

inline bool write_all(int fd, const std::string& bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        ssize_t r = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (r <= 0) return false;
        sent += static_cast<std::size_t>(r);
    }
    return true;
}

}  // namespace net_detail

class Server {
public:
    Server(VectorStore& store, bool curious) : store_(store) {
        if (curious) log_ = std::make_unique<CuriousLog>();
    }

    ~Server() { stop(); }

    // bind and start serving; port 0 picks an ephemeral port
    void start(std::uint16_t port = 0) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw TransportError("socket() failed");
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
            ::close(listen_fd_);
            throw TransportError("bind() failed");
        }
        if (::listen(listen_fd_, 64) < 0) {
            ::close(listen_fd_);
            throw TransportError("listen() failed");
        }
        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    void stop() {
        if (!running_.exchange(false)) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        if (accept_thread_.joinable()) accept_thread_.join();
        {
            // wake workers blocked on reads from still-open connections
            std::lock_guard lock(conn_mutex_);
            for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
        }
        std::lock_guard lock(workers_mutex_);
        for (auto& t : workers_)
            if (t.joinable()) t.join();
        workers_.clear();
    }

    std::uint16_t port() const { return port_; }
    CuriousLog* curious_log() { return log_.get(); }

private:
    void accept_loop() {
        while (running_) {
            int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) break;
            {
                std::lock_guard lock(conn_mutex_);
                conn_fds_.push_back(fd);
            }
            std::lock_guard lock(workers_mutex_);
            workers_.emplace_back([this, fd] { serve_connection(fd); });
        }
    }

    void serve_connection(int fd) {
        while (true) {
            unsigned char header[4];
            if (!net_detail::read_exact(fd, header, 4)) break;
            const std::uint32_t n = parse_frame_length(header);
            if (n > kMaxFrameBytes) {
                net_detail::write_all(fd, frame(make_error("oversize frame")));
                break;
            }
            std::string payload(n, '\0');
            if (n > 0 && !net_detail::read_exact(fd, payload.data(), n)) break;
            HandlerResult result = handle_request(store_, payload, log_.get());
            if (!net_detail::write_all(fd, frame(result.response))) break;
            if (result.close) break;  // malformed frame closes the connection
        }
        {
            std::lock_guard lock(conn_mutex_);
            conn_fds_.erase(std::remove(conn_fds_.begin(), conn_fds_.end(), fd),
                            conn_fds_.end());
        }
        ::close(fd);
    }

    VectorStore& store_;
    std::unique_ptr<CuriousLog> log_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::mutex workers_mutex_;
    std::vector<std::thread> workers_;
    std::mutex conn_mutex_;
    std::vector<int> conn_fds_;
};

}  // namespace entroguard
