#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <sstream>

#include "entroguard/corpus.hpp"
#include "entroguard/rng.hpp"
#include "entroguard/vocab.hpp"

using namespace entroguard;

TEST_CASE("vocab reserved ids and round trip") {
    Vocab v = build_vocab(256);
    CHECK(v.size() == 256);
    CHECK(v.token(Vocab::kPad) == "<pad>");
    CHECK(v.token(Vocab::kUnk) == "<unk>");
    CHECK(v.token(Vocab::kBos) == "<bos>");
    CHECK(v.token(Vocab::kEos) == "<eos>");
    CHECK(v.contains("hiking"));
    CHECK(v.token(v.id_of("hiking")) == "hiking");
    CHECK(v.id_of("zzz-not-a-word") == Vocab::kUnk);
    CHECK_THROWS_AS(v.token(256), IndexError);
    CHECK_THROWS_AS(Vocab({"a", "b"}), ConfigError);  // V < 8
}

TEST_CASE("token sequence invariants") {
    TokenSequence ok{{Vocab::kBos, 10, 11, Vocab::kEos}};
    CHECK_NOTHROW(ok.validate(256, 24));

    TokenSequence after_eos{{Vocab::kBos, Vocab::kEos, 10}};
    CHECK_THROWS_AS(after_eos.validate(256, 24), ContractError);

    TokenSequence too_long{std::vector<int>(25, 5)};
    CHECK_THROWS_AS(too_long.validate(256, 24), ContractError);

    TokenSequence bad_id{{300}};
    CHECK_THROWS_AS(bad_id.validate(256, 24), IndexError);
}

TEST_CASE("encode and decode") {
    Vocab v = build_vocab(256);

    TokenSequence seq = encode({"i", "like", "hiking"}, v);
    CHECK(seq.ids.front() == Vocab::kBos);
    CHECK(seq.ids.back() == Vocab::kEos);
    CHECK(decode(seq, v) == std::vector<std::string>{"i", "like", "hiking"});

    // out-of-vocabulary word becomes UNK at that position
    TokenSequence unk = encode({"i", "zzz"}, v);
    CHECK(unk.ids[2] == Vocab::kUnk);

    // empty text
    TokenSequence empty = encode({}, v);
    CHECK(empty.ids == std::vector<int>{Vocab::kBos, Vocab::kEos});
    CHECK(decode(empty, v).empty());

    // truncation keeps EOS and respects max_len
    std::vector<std::string> longtext(40, "hiking");
    TokenSequence trunc = encode(longtext, v, 10);
    CHECK(trunc.length() == 10);
    CHECK(trunc.ids.back() == Vocab::kEos);
    CHECK_NOTHROW(trunc.validate(v.size(), 10));
}

TEST_CASE("gen_corpus determinism and shape") {
    auto [s1, c1] = gen_corpus(7, 10, 2);
    auto [s2, c2] = gen_corpus(7, 10, 2);
    CHECK(s1.size() == 10);
    for (std::size_t i = 0; i < s1.size(); ++i) {
        CHECK(s1[i].words == s2[i].words);
        CHECK(s1[i].facts == s2[i].facts);
        CHECK(!s1[i].facts.empty());
    }
    CHECK(c1.queries.size() == 2);
    CHECK(c1.documents.size() == c2.documents.size());

    // different seed differs
    auto [s3, c3] = gen_corpus(8, 10, 2);
    bool same = true;
    for (std::size_t i = 0; i < s1.size() && same; ++i) same = s1[i].words == s3[i].words;
    CHECK(!same);

    CHECK_THROWS_AS(gen_corpus(7, 5, 2), ConfigError);
    CHECK_THROWS_AS(gen_corpus(7, 10, 0), ConfigError);
}

TEST_CASE("corpus relevance ground truth") {
    auto [sentences, corpus] = gen_corpus(21, 50, 12);
    (void)sentences;
    CHECK(!corpus.qrels.empty());
    for (const auto& [q, docs] : corpus.qrels) {
        CHECK(q >= 0);
        CHECK(q < static_cast<int>(corpus.queries.size()));
        CHECK(!docs.empty());
        for (int d : docs) {
            REQUIRE(d >= 0);
            REQUIRE(d < static_cast<int>(corpus.documents.size()));
            // relevant documents share >= 2 fact values with their query
            int overlap = 0;
            for (const auto& f : corpus.queries[q].facts)
                if (corpus.documents[d].facts.count(f)) ++overlap;
            CHECK(overlap >= 2);
        }
    }
    // every query has at least one relevant document
    for (std::size_t q = 0; q < corpus.queries.size(); ++q)
        CHECK(corpus.qrels.count(static_cast<int>(q)) == 1);
}

TEST_CASE("fact-set uniqueness at scale") {
    auto [sentences, corpus] = gen_corpus(7, 1000, 1);
    (void)corpus;
    std::set<std::set<std::pair<std::string, std::string>>> seen;
    for (const auto& s : sentences) seen.insert(s.facts);
    const double unique_fraction = double(seen.size()) / sentences.size();
    CHECK(unique_fraction >= 0.9);
}

TEST_CASE("sentence export import round trip") {
    auto [sentences, corpus] = gen_corpus(3, 25, 3);
    (void)corpus;
    std::stringstream buf;
    export_sentences(sentences, buf);
    auto back = import_sentences(buf);
    REQUIRE(back.size() == sentences.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].words == sentences[i].words);
        CHECK(back[i].facts == sentences[i].facts);
    }

    std::stringstream bad("hello world\tnot-a-fact\n");
    CHECK_THROWS_AS(import_sentences(bad), ConfigError);
}

TEST_CASE("rng substreams") {
    CHECK(substream_seed(7, "corpus") == substream_seed(7, "corpus"));
    CHECK(substream_seed(7, "corpus") != substream_seed(7, "encoder"));
    CHECK(substream_seed(7, "corpus") != substream_seed(8, "corpus"));

    // normal sampler moments
    Rng rng(5);
    double mean = 0.0, var = 0.0;
    const int n = 20000;
    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) {
        xs[i] = rng.normal();
        mean += xs[i];
    }
    mean /= n;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n;
    CHECK(std::fabs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}
