#pragma once

#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "entroguard/errors.hpp"

namespace entroguard {

// Closed whitespace vocabulary with reserved ids 0..3.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    explicit Vocab(std::vector<std::string> words, int target_size = 0) {
        tokens_ = {"<pad>", "<unk>", "<bos>", "<eos>"};
        for (auto& w : words) {
            if (index_.count(w) || w == "<pad>" || w == "<unk>" || w == "<bos>" || w == "<eos>")
                continue;
            index_[w] = static_cast<int>(tokens_.size());
            tokens_.push_back(w);
        }
        // pad with unused filler tokens up to the requested size
        int extra = 0;
        while (target_size > 0 && static_cast<int>(tokens_.size()) < target_size) {
            std::string w = "<extra" + std::to_string(extra++) + ">";
            index_[w] = static_cast<int>(tokens_.size());
            tokens_.push_back(w);
        }
        if (size() < 8) throw ConfigError("vocabulary too small");
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    int id_of(const std::string& word) const {
        auto it = index_.find(word);
        return it == index_.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw IndexError("token id out of range");
        return tokens_[id];
    }

    bool contains(const std::string& word) const { return index_.count(word) != 0; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Token ids over a Vocab; at most one EOS and nothing after it.
struct TokenSequence {
    std::vector<int> ids;

    void validate(int vocab_size, int max_len) const {
        if (static_cast<int>(ids.size()) > max_len) throw ContractError("sequence exceeds max_len");
        bool seen_eos = false;
        for (int id : ids) {
            if (id < 0 || id >= vocab_size) throw IndexError("token id out of range");
            if (seen_eos) throw ContractError("tokens after EOS");
            if (id == Vocab::kEos) seen_eos = true;
        }
    }

    int length() const { return static_cast<int>(ids.size()); }
    bool operator==(const TokenSequence& other) const { return ids == other.ids; }
};

inline constexpr int kDefaultMaxLen = 24;

// BOS + per-word ids (UNK for OOV) + EOS, truncated to max_len with EOS kept.
inline TokenSequence encode(const std::vector<std::string>& words, const Vocab& vocab,
                            int max_len = kDefaultMaxLen) {
    TokenSequence seq;
    seq.ids.push_back(Vocab::kBos);
    const int budget = max_len - 2;
    for (std::size_t i = 0; i < words.size() && static_cast<int>(i) < budget; ++i)
        seq.ids.push_back(vocab.id_of(words[i]));
    seq.ids.push_back(Vocab::kEos);
    return seq;
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

// Reserved tokens stripped; stops at the first EOS.
inline std::vector<std::string> decode(const TokenSequence& seq, const Vocab& vocab) {
    std::vector<std::string> words;
    for (int id : seq.ids) {
        if (id < 0 || id >= vocab.size()) throw IndexError("token id out of range");
        if (id == Vocab::kEos) break;
        if (id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kUnk) continue;
        words.push_back(vocab.token(id));
    }
    return words;
}

}  // namespace entroguard
