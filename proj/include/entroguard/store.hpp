#pragma once

#include <algorithm>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "entroguard/errors.hpp"
#include "entroguard/guard.hpp"
#include "entroguard/metrics.hpp"

namespace entroguard {

// In-memory exact-search vector store. Cosine top-k with ties broken by
// ascending id; no approximation, so retrieval differences come from the
// embeddings alone. Many concurrent readers, exclusive writers.
class VectorStore {
public:
    explicit VectorStore(int dim) : dim_(dim) {
        if (dim < 1) throw DimensionError("store dimension must be positive");
    }

    int dim() const { return dim_; }

    void insert(int id, const std::string& text, const std::vector<float>& embedding) {
        if (static_cast<int>(embedding.size()) != dim_)
            throw DimensionError("insert dimension mismatch");
        std::unique_lock lock(mutex_);
        if (docs_.count(id)) throw ContractError("duplicate document id");
        std::vector<float> e = embedding;
        unit_normalize(e);
        docs_[id] = {text, std::move(e)};
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return docs_.size();
    }

    struct Hit {
        int id;
        double score;
        std::string text;
    };

    // exact cosine top-k over all documents
    std::vector<Hit> topk(const std::vector<float>& query, int k) const {
        if (static_cast<int>(query.size()) != dim_) throw DimensionError("query dimension mismatch");
        if (k < 1) throw ContractError("k must be >= 1");
        std::shared_lock lock(mutex_);
        std::vector<Hit> hits;
        hits.reserve(docs_.size());
        for (const auto& [id, doc] : docs_)
            hits.push_back({id, cosine_of(query, doc.embedding), doc.text});
        std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.id < b.id;
        });
        if (static_cast<int>(hits.size()) > k) hits.resize(k);
        return hits;
    }

    RankedResult ranked(const std::vector<float>& query, int k, const std::set<int>& relevant) const {
        RankedResult result;
        result.relevant = relevant;
        for (const auto& hit : topk(query, k)) {
            result.retrieved.push_back(hit.id);
            result.scores.push_back(hit.score);
        }
        return result;
    }

private:
    struct Doc {
        std::string text;
        std::vector<float> embedding;
    };
    int dim_;
    std::map<int, Doc> docs_;
    mutable std::shared_mutex mutex_;
};

}  // namespace entroguard
