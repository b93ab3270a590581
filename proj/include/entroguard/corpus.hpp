#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "entroguard/errors.hpp"
#include "entroguard/rng.hpp"
#include "entroguard/vocab.hpp"

namespace entroguard {

// A persona-style sentence together with the (slot, value) facts its template
// filled in. Facts drive relevance labels and the entailment oracle.
struct Sentence {
    std::vector<std::string> words;
    std::set<std::pair<std::string, std::string>> facts;

    std::string text() const {
        std::string s;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (i) s += ' ';
            s += words[i];
        }
        return s;
    }
};

struct RetrievalCorpus {
    std::vector<Sentence> queries;
    std::vector<Sentence> documents;
    std::map<int, std::set<int>> qrels;  // query index -> relevant document ids
};

namespace corpus_detail {

struct Template {
    // literal words, with slot names in braces
    std::vector<std::string> pieces;
    std::vector<std::string> slots;  // slot names in order of appearance
};

inline const std::vector<std::pair<std::string, std::vector<std::string>>>& slot_fillers() {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> fillers = {
        {"subject",
         {"brother", "sister", "friend", "neighbor", "teacher", "cousin", "uncle", "aunt",
          "colleague", "roommate", "mother", "father", "mentor", "grandpa"}},
        {"activity",
         {"hiking", "swimming", "painting", "reading", "cooking", "fishing", "dancing", "singing",
          "running", "gaming", "baking", "climbing", "skating", "gardening"}},
        {"object",
         {"dogs", "cats", "books", "guitars", "bikes", "plants", "coins", "hats", "shoes", "drums",
          "kites", "maps", "lamps", "mugs"}},
        {"place",
         {"mountains", "park", "beach", "city", "forest", "garden", "lake", "library", "market",
          "gym", "harbor", "valley", "museum", "cafe"}},
        {"quantity",
         {"two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
          "twelve", "thirteen", "fourteen", "fifteen"}},
    };
    return fillers;
}

inline const std::vector<std::string>& fillers_for(const std::string& slot) {
    for (const auto& [name, values] : slot_fillers())
        if (name == slot) return values;
    throw ConfigError("unknown slot " + slot);
}

inline Template parse_template(const std::string& text) {
    Template t;
    std::istringstream in(text);
    std::string w;
    while (in >> w) {
        t.pieces.push_back(w);
        if (w.front() == '{') t.slots.push_back(w.substr(1, w.size() - 2));
    }
    return t;
}

inline const std::vector<Template>& templates() {
    static const std::vector<Template> tpls = [] {
        const char* raw[] = {
            "my {subject} loves {activity} near the {place}",
            "my {subject} enjoys {activity} at the {place}",
            "i go {activity} with my {subject} in the {place}",
            "my {subject} keeps {quantity} {object} at home",
            "i bought {quantity} {object} at the {place}",
            "we found {quantity} {object} near the {place}",
            "my {subject} takes the {object} to the {place}",
            "i like {activity} in the {place} with my {subject}",
            "my {subject} practices {activity} at the {place} every day",
            "there are {quantity} {object} in the {place}",
            "i saw {quantity} {object} at the {place}",
            "my {subject} sold {quantity} {object} last week",
            "we tried {activity} by the {place} with my {subject}",
            "my {subject} collects {object} from the {place}",
            "i took my {subject} to the {place} for {activity}",
            "my {subject} teaches {activity} at the {place}",
            "i enjoy {activity} and keep {quantity} {object}",
            "my {subject} hates {activity} in the {place}",
            "we store {quantity} {object} in the {place}",
            "my {subject} carries {quantity} {object} to work",
            "my {subject} met my {subject2} at the {place}",
            "i practice {activity} with my {subject} after work",
        };
        std::vector<Template> result;
        for (const char* r : raw) result.push_back(parse_template(r));
        return result;
    }();
    return tpls;
}

inline Sentence instantiate(const Template& tpl, Rng& rng,
                            const std::map<std::string, std::string>& fixed = {}) {
    Sentence s;
    for (const auto& piece : tpl.pieces) {
        if (piece.front() != '{') {
            s.words.push_back(piece);
            continue;
        }
        std::string slot = piece.substr(1, piece.size() - 2);
        // {subject2} draws from the subject pool but is its own fact slot
        std::string pool = slot == "subject2" ? "subject" : slot;
        std::string value;
        auto it = fixed.find(slot);
        if (it != fixed.end()) {
            value = it->second;
        } else {
            const auto& values = fillers_for(pool);
            value = values[rng.below(values.size())];
        }
        s.words.push_back(value);
        s.facts.insert({slot, value});
    }
    return s;
}

inline int fact_overlap(const Sentence& a, const Sentence& b) {
    int n = 0;
    for (const auto& f : a.facts)
        if (b.facts.count(f)) ++n;
    return n;
}

}  // namespace corpus_detail

// Vocabulary covering every template word and slot filler, padded to `size`.
inline Vocab build_vocab(int size = 256) {
    std::vector<std::string> words;
    for (const auto& tpl : corpus_detail::templates())
        for (const auto& piece : tpl.pieces)
            if (piece.front() != '{') words.push_back(piece);
    for (const auto& [slot, values] : corpus_detail::slot_fillers())
        for (const auto& v : values) words.push_back(v);
    return Vocab(std::move(words), size);
}

// Deterministic synthetic corpus: free sentences for recovery-model training
// plus a query/document set with fact-overlap relevance labels. Relevant
// documents share >= 2 fact values with their query; distractors share <= 1.
inline std::pair<std::vector<Sentence>, RetrievalCorpus> gen_corpus(std::uint64_t seed,
                                                                    int n_sentences,
                                                                    int n_queries) {
    using namespace corpus_detail;
    if (n_sentences < 10) throw ConfigError("n_sentences must be >= 10");
    if (n_queries < 1) throw ConfigError("n_queries must be >= 1");
    Rng rng(seed);
    const auto& tpls = templates();

    std::vector<Sentence> sentences;
    sentences.reserve(n_sentences);
    for (int i = 0; i < n_sentences; ++i)
        sentences.push_back(instantiate(tpls[rng.below(tpls.size())], rng));

    RetrievalCorpus corpus;
    for (int q = 0; q < n_queries; ++q)
        corpus.queries.push_back(instantiate(tpls[rng.below(tpls.size())], rng));

    // relevant documents: a different template sharing >= 2 slots, with the
    // shared slots pinned to the query's values
    for (int q = 0; q < n_queries; ++q) {
        const Sentence& query = corpus.queries[q];
        std::vector<int> candidates;
        for (std::size_t t = 0; t < tpls.size(); ++t) {
            int shared = 0;
            for (const auto& slot : tpls[t].slots)
                for (const auto& [fslot, fval] : query.facts)
                    if (fslot == slot) ++shared;
            if (shared >= 2) candidates.push_back(static_cast<int>(t));
        }
        if (candidates.empty()) throw ContractError("no relevant template for query");
        const int n_rel = 1 + static_cast<int>(rng.below(2));
        for (int r = 0; r < n_rel; ++r) {
            std::map<std::string, std::string> fixed;
            for (const auto& [fslot, fval] : query.facts) fixed[fslot] = fval;
            Sentence doc = instantiate(tpls[candidates[rng.below(candidates.size())]], rng, fixed);
            if (fact_overlap(query, doc) < 2) {
                --r;  // shared slots landed under 2 (subject2 aliasing), retry
                continue;
            }
            corpus.documents.push_back(doc);
            corpus.qrels[q].insert(static_cast<int>(corpus.documents.size()) - 1);
        }
    }

    // distractors, rejected if they overlap >= 2 facts with any query
    const int n_distractors = std::max(20, 3 * n_queries);
    for (int i = 0; i < n_distractors; ++i) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            Sentence doc = instantiate(tpls[rng.below(tpls.size())], rng);
            bool clean = true;
            for (const auto& query : corpus.queries)
                if (fact_overlap(query, doc) >= 2) {
                    clean = false;
                    break;
                }
            if (clean) {
                corpus.documents.push_back(doc);
                break;
            }
        }
    }
    return {std::move(sentences), std::move(corpus)};
}

// one sentence per line: words, then TAB, then `slot=value` pairs joined by `;`
inline void export_sentences(const std::vector<Sentence>& sentences, std::ostream& out) {
    for (const auto& s : sentences) {
        out << s.text() << '\t';
        bool first = true;
        for (const auto& [slot, value] : s.facts) {
            if (!first) out << ';';
            out << slot << '=' << value;
            first = false;
        }
        out << '\n';
    }
}

inline std::vector<Sentence> import_sentences(std::istream& in) {
    std::vector<Sentence> sentences;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Sentence s;
        auto tab = line.find('\t');
        std::string text = line.substr(0, tab);
        std::istringstream words(text);
        std::string w;
        while (words >> w) s.words.push_back(w);
        if (tab != std::string::npos) {
            std::istringstream facts(line.substr(tab + 1));
            std::string pair;
            while (std::getline(facts, pair, ';')) {
                auto eq = pair.find('=');
                if (eq == std::string::npos) throw ConfigError("malformed fact: " + pair);
                s.facts.insert({pair.substr(0, eq), pair.substr(eq + 1)});
            }
        }
        sentences.push_back(std::move(s));
    }
    return sentences;
}

}  // namespace entroguard
