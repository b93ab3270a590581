#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "entroguard/corpus.hpp"
#include "entroguard/errors.hpp"
#include "entroguard/report.hpp"

namespace entroguard {

using WordList = std::vector<std::string>;

struct TextPair {
    WordList reference;
    WordList candidate;
};

namespace metrics_detail {

using Bigram = std::pair<std::string, std::string>;

inline std::map<Bigram, int> bigram_counts(const WordList& words) {
    std::map<Bigram, int> counts;
    for (std::size_t i = 0; i + 1 < words.size(); ++i) ++counts[{words[i], words[i + 1]}];
    return counts;
}

inline std::map<std::string, int> unigram_counts(const WordList& words) {
    std::map<std::string, int> counts;
    for (const auto& w : words) ++counts[w];
    return counts;
}

template <class Counts>
inline int clipped_overlap(const Counts& cand, const Counts& ref) {
    int n = 0;
    for (const auto& [k, c] : cand) {
        auto it = ref.find(k);
        if (it != ref.end()) n += std::min(c, it->second);
    }
    return n;
}

inline std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline bool reserved_word(const std::string& w) {
    return w == "<pad>" || w == "<unk>" || w == "<bos>" || w == "<eos>";
}

inline WordList normalize(const WordList& words) {
    WordList out;
    for (const auto& w : words) {
        if (w.empty() || reserved_word(w)) continue;
        out.push_back(lower(w));
    }
    return out;
}

}  // namespace metrics_detail

// ROUGE-2 reported as bigram F1 with clipped counts.
inline double rouge2(const TextPair& pair) {
    using namespace metrics_detail;
    if (pair.reference == pair.candidate) return pair.reference.empty() ? 0.0 : 1.0;
    auto ref = bigram_counts(pair.reference);
    auto cand = bigram_counts(pair.candidate);
    int ref_total = 0, cand_total = 0;
    for (const auto& [k, c] : ref) ref_total += c;
    for (const auto& [k, c] : cand) cand_total += c;
    if (ref_total == 0 || cand_total == 0) return 0.0;
    const int overlap = clipped_overlap(cand, ref);
    if (overlap == 0) return 0.0;
    const double p = double(overlap) / cand_total;
    const double r = double(overlap) / ref_total;
    return 2.0 * p * r / (p + r);
}

// BLEU-2 with brevity penalty and a 1e-9 floor on zero precisions.
inline double bleu2(const TextPair& pair) {
    using namespace metrics_detail;
    if (pair.candidate.empty()) return 0.0;
    auto ref1 = unigram_counts(pair.reference);
    auto cand1 = unigram_counts(pair.candidate);
    auto ref2 = bigram_counts(pair.reference);
    auto cand2 = bigram_counts(pair.candidate);
    const int c1 = static_cast<int>(pair.candidate.size());
    const int c2 = std::max(0, c1 - 1);
    double p1 = c1 > 0 ? double(clipped_overlap(cand1, ref1)) / c1 : 0.0;
    double p2 = c2 > 0 ? double(clipped_overlap(cand2, ref2)) / c2 : 0.0;
    constexpr double kFloor = 1e-9;
    p1 = std::max(p1, kFloor);
    p2 = std::max(p2, kFloor);
    const double r = static_cast<double>(pair.reference.size());
    const double c = static_cast<double>(c1);
    const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(0.5 * (std::log(p1) + std::log(p2)));
}

// exact-match rate after normalization (lowercase, reserved tokens stripped)
inline double emr(const std::vector<TextPair>& pairs) {
    using namespace metrics_detail;
    if (pairs.empty()) throw ContractError("emr of empty pair list");
    int matches = 0;
    for (const auto& p : pairs)
        if (normalize(p.reference) == normalize(p.candidate)) ++matches;
    return double(matches) / pairs.size();
}

// ---------------------------------------------------------------------------
// entailment oracle + BiNLI

// Pluggable binary entailment judge. The default judges entail(a, b) = 1 iff
// every fact extractable from b appears among a's facts, with facts read off
// the template slot vocabulary.
struct EntailmentOracle {
    std::function<bool(const Sentence&, const Sentence&)> judge;

    bool entail(const Sentence& a, const Sentence& b) const { return judge(a, b); }
};

// facts recovered from raw words by matching the slot filler vocabulary
inline std::set<std::pair<std::string, std::string>> extract_facts(const WordList& words) {
    std::set<std::pair<std::string, std::string>> facts;
    for (const auto& w : words)
        for (const auto& [slot, values] : corpus_detail::slot_fillers())
            if (std::find(values.begin(), values.end(), w) != values.end())
                facts.insert({slot, w});
    return facts;
}

inline Sentence sentence_from_words(const WordList& words) {
    Sentence s;
    s.words = words;
    s.facts = extract_facts(words);
    return s;
}

inline EntailmentOracle fact_containment_oracle() {
    EntailmentOracle oracle;
    oracle.judge = [](const Sentence& a, const Sentence& b) {
        auto facts_b = b.facts.empty() ? extract_facts(b.words) : b.facts;
        if (facts_b.empty()) return false;
        auto facts_a = a.facts.empty() ? extract_facts(a.words) : a.facts;
        for (const auto& f : facts_b)
            if (!facts_a.count(f)) return false;
        return true;
    };
    return oracle;
}

// bidirectional entailment rate over aligned pairs; denominator is the
// 2n directional checks
inline double binli(const std::vector<Sentence>& a, const std::vector<Sentence>& b,
                    const EntailmentOracle& oracle) {
    if (a.size() != b.size() || a.empty()) throw ContractError("binli needs aligned non-empty lists");
    int hits = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (oracle.entail(a[i], b[i])) ++hits;
        if (oracle.entail(b[i], a[i])) ++hits;
    }
    return double(hits) / (2.0 * a.size());
}

// ---------------------------------------------------------------------------
// ranked retrieval metrics at cutoff k

struct RankedResult {
    std::vector<int> retrieved;      // document ids in rank order
    std::vector<double> scores;      // non-increasing
    std::set<int> relevant;          // qrels for this query
};

inline double ndcg_at_k(const RankedResult& result, int k = 5) {
    if (result.relevant.empty()) throw ContractError("ndcg with empty qrels");
    double dcg = 0.0;
    const int n = std::min<int>(k, static_cast<int>(result.retrieved.size()));
    for (int i = 0; i < n; ++i)
        if (result.relevant.count(result.retrieved[i]))
            dcg += 1.0 / std::log2(i + 2.0);
    double idcg = 0.0;
    const int ideal = std::min<int>(k, static_cast<int>(result.relevant.size()));
    for (int i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(i + 2.0);
    return dcg / idcg;
}

inline double map_at_k(const RankedResult& result, int k = 5) {
    if (result.relevant.empty()) throw ContractError("map with empty qrels");
    double sum = 0.0;
    int hits = 0;
    const int n = std::min<int>(k, static_cast<int>(result.retrieved.size()));
    for (int i = 0; i < n; ++i)
        if (result.relevant.count(result.retrieved[i])) {
            ++hits;
            sum += double(hits) / (i + 1);
        }
    const int denom = std::min<int>(k, static_cast<int>(result.relevant.size()));
    return sum / denom;
}

inline double precision_at_k(const RankedResult& result, int k = 5) {
    if (result.relevant.empty()) throw ContractError("precision with empty qrels");
    int hits = 0;
    const int n = std::min<int>(k, static_cast<int>(result.retrieved.size()));
    for (int i = 0; i < n; ++i)
        if (result.relevant.count(result.retrieved[i])) ++hits;
    return double(hits) / k;
}

// ---------------------------------------------------------------------------
// aggregate reports

inline MetricsReport privacy_report(const std::vector<WordList>& originals,
                                    const std::vector<WordList>& recovered,
                                    const EntailmentOracle& oracle,
                                    const std::string& condition = "default") {
    if (originals.size() != recovered.size() || originals.empty())
        throw ContractError("privacy_report needs aligned non-empty lists");
    double r2 = 0.0, b2 = 0.0;
    std::vector<TextPair> pairs;
    std::vector<Sentence> a, b;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        TextPair p{originals[i], recovered[i]};
        r2 += rouge2(p);
        b2 += bleu2(p);
        pairs.push_back(p);
        a.push_back(sentence_from_words(originals[i]));
        b.push_back(sentence_from_words(recovered[i]));
    }
    MetricsReport report;
    report.experiment_id = "privacy";
    report.add("rouge2", condition, r2 / originals.size());
    report.add("bleu2", condition, b2 / originals.size());
    report.add("emr", condition, emr(pairs));
    report.add("binli", condition, binli(a, b, oracle));
    return report;
}

}  // namespace entroguard
