#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <sstream>
#include <vector>

#include "entroguard/client.hpp"
#include "entroguard/config.hpp"
#include "entroguard/server.hpp"
#include "entroguard/wire.hpp"

using namespace entroguard;

namespace {

std::vector<float> unit_random(Rng& rng, int d) {
    std::vector<float> v(d);
    for (float& x : v) x = static_cast<float>(rng.normal(0.0, 1.0));
    unit_normalize(v);
    return v;
}

}  // namespace

TEST_CASE("frame layout") {
    std::string f = frame("abc");
    REQUIRE(f.size() == 7);
    // 4-byte big-endian length prefix
    CHECK(static_cast<unsigned char>(f[0]) == 0);
    CHECK(static_cast<unsigned char>(f[1]) == 0);
    CHECK(static_cast<unsigned char>(f[2]) == 0);
    CHECK(static_cast<unsigned char>(f[3]) == 3);
    CHECK(f.substr(4) == "abc");

    unsigned char header[4] = {0, 0, 1, 2};
    CHECK(parse_frame_length(header) == 258);

    CHECK_THROWS_AS(frame(std::string(kMaxFrameBytes + 1, 'x')), TransportError);
}

TEST_CASE("payload constructors") {
    auto ping = nlohmann::json::parse(make_ping());
    CHECK(ping.at("op") == "ping");

    auto ins = nlohmann::json::parse(make_insert(3, "hello there", {1.0f, 2.0f}));
    CHECK(ins.at("op") == "insert");
    CHECK(ins.at("id") == 3);
    CHECK(ins.at("text") == "hello there");
    CHECK(ins.at("embedding").get<std::vector<float>>() == std::vector<float>{1.0f, 2.0f});

    auto q = nlohmann::json::parse(make_query({0.5f}, 5));
    CHECK(q.at("op") == "query");
    CHECK(q.at("k") == 5);

    CHECK(nlohmann::json::parse(make_ok()).at("ok") == true);
    auto err = nlohmann::json::parse(make_error("boom"));
    CHECK(err.at("ok") == false);
    CHECK(err.at("error") == "boom");
}

TEST_CASE("request handler branches") {
    VectorStore store(2);
    CuriousLog log;

    // ping
    HandlerResult r = handle_request(store, make_ping(), nullptr);
    CHECK_FALSE(r.close);
    CHECK(nlohmann::json::parse(r.response).at("ok") == true);

    // insert then query
    r = handle_request(store, make_insert(1, "north", {1.0f, 0.0f}), nullptr);
    CHECK(nlohmann::json::parse(r.response).at("ok") == true);
    r = handle_request(store, make_insert(2, "east", {0.0f, 1.0f}), nullptr);
    CHECK(nlohmann::json::parse(r.response).at("ok") == true);

    r = handle_request(store, make_query({1.0f, 0.1f}, 2), &log);
    CHECK_FALSE(r.close);
    auto hits = nlohmann::json::parse(r.response).at("hits");
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].at("id") == 1);
    CHECK(hits[0].at("text") == "north");
    CHECK(log.size() == 1);  // curious server captured the embedding
    CHECK(log.embeddings()[0] == std::vector<float>{1.0f, 0.1f});

    // honest mode records nothing
    handle_request(store, make_query({1.0f, 0.0f}, 1), nullptr);
    CHECK(log.size() == 1);

    // semantic errors answer but keep the connection open
    r = handle_request(store, make_query({1.0f, 0.0f, 0.0f}, 1), nullptr);
    CHECK_FALSE(r.close);
    CHECK(nlohmann::json::parse(r.response).at("error") == "dimension mismatch");

    r = handle_request(store, nlohmann::json{{"op", "reboot"}}.dump(), nullptr);
    CHECK_FALSE(r.close);
    CHECK(nlohmann::json::parse(r.response).at("error") == "unknown op");

    // missing fields are reported as malformed and close the connection
    r = handle_request(store, nlohmann::json{{"op", "insert"}}.dump(), nullptr);
    CHECK(r.close);

    // non-JSON payloads close the connection
    r = handle_request(store, "this is not json", nullptr);
    CHECK(r.close);
    CHECK(nlohmann::json::parse(r.response).at("error") == "malformed payload");
}

TEST_CASE("server round trip over loopback") {
    VectorStore store(4);
    Server server(store, true);
    server.start();
    REQUIRE(server.port() != 0);

    Client client(server.port());
    CHECK(nlohmann::json::parse(client.request(make_ping())).at("ok") == true);

    Rng rng(3);
    std::vector<std::vector<float>> docs;
    for (int i = 0; i < 6; ++i) {
        docs.push_back(unit_random(rng, 4));
        expect_ok(client.request(make_insert(i, "doc " + std::to_string(i), docs.back())));
    }

    // differential check against a local shadow store
    VectorStore shadow(4);
    for (int i = 0; i < 6; ++i) shadow.insert(i, "doc " + std::to_string(i), docs[i]);
    for (int t = 0; t < 20; ++t) {
        std::vector<float> q = unit_random(rng, 4);
        std::vector<QueryHit> remote = parse_hits(client.request(make_query(q, 3)));
        std::vector<VectorStore::Hit> local = shadow.topk(q, 3);
        REQUIRE(remote.size() == local.size());
        for (std::size_t i = 0; i < local.size(); ++i) {
            CHECK(remote[i].id == local[i].id);
            CHECK(remote[i].text == local[i].text);
            CHECK(remote[i].score == doctest::Approx(local[i].score).epsilon(1e-6));
        }
    }

    // a malformed frame gets an error response and drops the connection;
    // the client transparently reconnects on the next request
    std::string garbage = frame("{{{not json");
    std::string err = client.request_raw(garbage);
    CHECK(nlohmann::json::parse(err).at("error") == "malformed payload");
    CHECK(nlohmann::json::parse(client.request(make_ping())).at("ok") == true);

    // semantic error keeps the connection alive without reconnecting
    std::string dim_err = client.request(make_query({1.0f}, 1));
    CHECK(nlohmann::json::parse(dim_err).at("ok") == false);
    CHECK(nlohmann::json::parse(client.request(make_ping())).at("ok") == true);

    // only the well-formed, dimension-correct queries were captured
    CHECK(server.curious_log()->size() == 20);

    server.stop();
}

TEST_CASE("curious log csv round trip") {
    CuriousLog log;
    log.append({1.0f, -0.5f, 0.25f});
    log.append({0.0f, 0.125f, 2.0f});
    std::string path = "curious_roundtrip_test.csv";
    log.write_csv(path);
    std::vector<std::vector<float>> back = CuriousLog::read_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == std::vector<float>{1.0f, -0.5f, 0.25f});
    CHECK(back[1] == std::vector<float>{0.0f, 0.125f, 2.0f});
    std::remove(path.c_str());

    CHECK_THROWS_AS(CuriousLog::read_csv("no_such_file.csv"), ConfigError);
}

TEST_CASE("config defaults from an empty file") {
    std::istringstream empty("");
    ExperimentConfig cfg = parse_config(empty);
    ExperimentConfig defaults;
    CHECK(cfg == defaults);
    CHECK(cfg.seed == 7);
    CHECK(cfg.model.dim == 32);
    CHECK(cfg.adapt.epsilon == doctest::Approx(0.036f));
    CHECK(cfg.adapt.rho == doctest::Approx(0.95f));
}

TEST_CASE("config parsing") {
    std::istringstream in(
        "# comment line\n"
        "seed = 123\n"
        "\n"
        "adapt.epsilon = 0.05   # trailing comment\n"
        "model.dim = 16\n");
    ExperimentConfig cfg = parse_config(in);
    CHECK(cfg.seed == 123);
    CHECK(cfg.adapt.epsilon == doctest::Approx(0.05f));
    CHECK(cfg.model.dim == 16);

    // out-of-range values rejected by validation
    std::istringstream bad_rho("adapt.rho = 1.5\n");
    CHECK_THROWS_AS(parse_config(bad_rho), ConfigError);

    // unknown keys carry the line number
    std::istringstream unknown("seed = 1\nno.such.key = 2\n");
    try {
        parse_config(unknown);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("no.such.key") != std::string::npos);
    }

    // unparseable numbers carry the line number too
    std::istringstream junk("model.dim = banana\n");
    CHECK_THROWS_AS(parse_config(junk), ConfigError);
}

TEST_CASE("config serialization round trip") {
    ExperimentConfig cfg;
    cfg.seed = 99;
    cfg.adapt.epsilon = 0.042f;
    cfg.guard.alpha_start = 900.0f;
    cfg.out_dir = "elsewhere";
    std::istringstream back(save_config(cfg));
    ExperimentConfig cfg2 = parse_config(back);
    CHECK(cfg == cfg2);
    CHECK(cfg2.adapt.epsilon == doctest::Approx(0.042f));
    CHECK(cfg2.out_dir == "elsewhere");

    // the hash tracks content
    CHECK(config_hash(cfg) == config_hash(cfg2));
    cfg2.seed = 100;
    CHECK(config_hash(cfg) != config_hash(cfg2));
    CHECK(config_hash(cfg).size() == 16);
}
