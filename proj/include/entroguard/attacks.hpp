#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "entroguard/errors.hpp"
#include "entroguard/guard.hpp"
#include "entroguard/metrics.hpp"
#include "entroguard/model.hpp"
#include "entroguard/rng.hpp"
#include "entroguard/store.hpp"

namespace entroguard {

// ---------------------------------------------------------------------------
// learning-based EIA

// Attacker Phi trained on (x, f(x)) pairs, seeded differently from the
// defender's surrogate to model attacker/defender asymmetry.
inline RecoveryModel train_attacker(const EncoderModel& encoder,
                                    const std::vector<Sentence>& sentences, const Vocab& vocab,
                                    const DecoderConfig& dec_cfg, const RecoveryTrainConfig& cfg) {
    std::vector<std::pair<TokenSequence, std::vector<float>>> pairs;
    for (const auto& s : sentences) {
        TokenSequence seq = encode(s.words, vocab);
        pairs.push_back({seq, embed(encoder, seq)});
    }
    Rng init_rng(substream_seed(cfg.seed, "attacker-init"));
    RecoveryModel attacker(dec_cfg, init_rng);
    train_recovery(attacker, pairs, cfg);
    return attacker;
}

inline WordList invert_learning(const RecoveryModel& attacker, const std::vector<float>& e,
                                const Vocab& vocab, int max_len = kDefaultMaxLen) {
    return decode(attacker.decode_greedy(e, max_len), vocab);
}

// ---------------------------------------------------------------------------
// optimization-based EIA: greedy hill climb over single-token substitutions.
// At this model scale the cosine objective admits many near-optimal word
// bags far from the source text, so the climb reliably maximizes cosine yet
// recovers little text.

struct OptimizationAttackConfig {
    int max_iters = 200;
    int candidates_per_position = 16;
    int min_len = 5;
    int max_len = 10;
    std::uint64_t seed = 5;
};

struct OptimizationAttackResult {
    WordList words;
    std::vector<double> objective_trace;  // non-decreasing by construction
};

inline OptimizationAttackResult invert_optimization(const EncoderModel& encoder,
                                                    const std::vector<float>& target,
                                                    const Vocab& vocab,
                                                    const OptimizationAttackConfig& cfg) {
    if (cfg.max_iters < 1) throw ConfigError("max_iters must be >= 1");
    Rng rng(cfg.seed);
    // candidate pool: real words only — reserved and padding tokens are
    // marked by angle brackets and carry no signal for the search
    std::vector<int> pool;
    for (int id = 4; id < vocab.size(); ++id)
        if (vocab.token(id).front() != '<') pool.push_back(id);
    if (pool.empty()) throw ConfigError("vocabulary has no content words");
    const int u = cfg.min_len + static_cast<int>(rng.below(cfg.max_len - cfg.min_len + 1));

    std::vector<int> ids(u);
    for (int i = 0; i < u; ++i) ids[i] = pool[rng.below(pool.size())];

    auto score = [&](const std::vector<int>& candidate) {
        TokenSequence seq;
        seq.ids.push_back(Vocab::kBos);
        seq.ids.insert(seq.ids.end(), candidate.begin(), candidate.end());
        seq.ids.push_back(Vocab::kEos);
        return cosine_of(embed(encoder, seq), target);
    };

    double best = score(ids);
    OptimizationAttackResult result;
    result.objective_trace.push_back(best);
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        double round_best = best;
        int best_pos = -1, best_tok = -1;
        for (int pos = 0; pos < static_cast<int>(ids.size()); ++pos) {
            for (int c = 0; c < cfg.candidates_per_position; ++c) {
                const int tok = pool[rng.below(pool.size())];
                if (tok == ids[pos]) continue;
                std::vector<int> candidate = ids;
                candidate[pos] = tok;
                const double s = score(candidate);
                if (s > round_best) {
                    round_best = s;
                    best_pos = pos;
                    best_tok = tok;
                }
            }
        }
        if (best_pos < 0) break;  // no strictly-improving substitution
        ids[best_pos] = best_tok;
        best = round_best;
        result.objective_trace.push_back(best);
    }
    for (int id : ids) result.words.push_back(vocab.token(id));
    return result;
}

// ---------------------------------------------------------------------------
// baseline defenses

inline std::vector<float> gaussian_perturb(const std::vector<float>& e, float sigma,
                                           std::uint64_t seed) {
    if (sigma < 0.0f) throw ConfigError("sigma must be >= 0");
    if (sigma == 0.0f) return e;
    Rng rng(seed);
    std::vector<float> out(e.size());
    for (std::size_t i = 0; i < e.size(); ++i)
        out[i] = e[i] + sigma * static_cast<float>(rng.normal());
    unit_normalize(out);
    return out;
}

struct PgdConfig {
    float step_size = 0.02f;
    int steps = 40;
    // cosine-distance bound; <0 selects the intensity of sigma Gaussian
    // noise at the embedding dimension, (sigma^2 d)/2
    float bound = -1.0f;
    float sigma_equivalent = 0.01f;
    float rho = 0.95f;

    float effective_bound(int dim) const {
        if (bound >= 0.0f) return bound;
        return 0.5f * sigma_equivalent * sigma_equivalent * static_cast<float>(dim);
    }
};

// Projected gradient ascent on the surrogate's recovery cross-entropy w.r.t.
// the embedding, projected onto a cosine-distance ball around the original.
inline std::vector<float> pgd_perturb(const std::vector<float>& e0, RecoveryModel& surrogate,
                                      const TokenSequence& x, const PgdConfig& cfg) {
    surrogate.set_trainable(false);
    const int d = static_cast<int>(e0.size());
    const float bound = cfg.effective_bound(d);
    std::vector<float> e = e0;
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor et = Tensor::from({1, d}, e, true);
        Tensor ce = recovery_ce(surrogate, et, x);
        backward(ce);
        const auto& g = et.grad();
        double gn = 0.0;
        for (float v : g) gn += double(v) * double(v);
        gn = std::sqrt(gn);
        if (gn <= 1e-12) break;
        for (int i = 0; i < d; ++i) e[i] += cfg.step_size * g[i] / static_cast<float>(gn);
        // project back into the cosine-distance ball
        int iter = 0;
        while (1.0 - cosine_of(e0, e) > bound) {
            for (int i = 0; i < d; ++i) e[i] = e0[i] + cfg.rho * (e[i] - e0[i]);
            if (++iter > 500) throw AdaptationError("pgd projection failed to converge");
        }
        unit_normalize(e);
    }
    return e;
}

// ---------------------------------------------------------------------------
// Gaussian noise sweep

struct SweepThresholds {
    double attack_bleu2 = 0.2;       // attack succeeds at or above this
    double opt_attack_bleu2 = -1.0;  // <0: use attack_bleu2
    double retrieval_relative = 0.9; // retrieval ok at or above this fraction of baseline
};

struct SweepHarness {
    const EncoderModel* encoder = nullptr;
    const RecoveryModel* attacker = nullptr;
    const Vocab* vocab = nullptr;
    std::vector<Sentence> eval_sentences;  // privacy eval set
    const RetrievalCorpus* corpus = nullptr;
    OptimizationAttackConfig opt_cfg;
    int opt_eval_count = 8;  // hill climbing is the expensive part
    SweepThresholds thresholds;
    std::uint64_t seed = 6;
};

struct SweepRow {
    double sigma;
    double opt_attack_bleu2;
    double learn_attack_bleu2;
    double ndcg5;
    bool opt_ok, learn_ok, retrieval_ok;
};

// Retrieval quality under the noise defense. Every embedding shipped to the
// cloud is noised — the stored document vectors as well as the queries — so
// degradation compounds on both sides of the similarity.
inline double mean_ndcg5(const EncoderModel& encoder, const RetrievalCorpus& corpus,
                         const Vocab& vocab, float sigma, std::uint64_t seed) {
    VectorStore store(encoder.config().dim);
    for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
        std::vector<float> d = embed(encoder, encode(corpus.documents[i].words, vocab));
        if (sigma > 0.0f) d = gaussian_perturb(d, sigma, substream_seed(seed, "d" + std::to_string(i)));
        store.insert(static_cast<int>(i), corpus.documents[i].text(), d);
    }
    double total = 0.0;
    int n = 0;
    for (const auto& [q, relevant] : corpus.qrels) {
        std::vector<float> e = embed(encoder, encode(corpus.queries[q].words, vocab));
        if (sigma > 0.0f) e = gaussian_perturb(e, sigma, substream_seed(seed, "q" + std::to_string(q)));
        total += ndcg_at_k(store.ranked(e, 5, relevant), 5);
        ++n;
    }
    return n ? total / n : 0.0;
}

inline std::vector<SweepRow> noise_sweep(const std::vector<double>& levels,
                                         const SweepHarness& harness) {
    const auto& encoder = *harness.encoder;
    const auto& attacker = *harness.attacker;
    const auto& vocab = *harness.vocab;
    const double baseline_ndcg =
        mean_ndcg5(encoder, *harness.corpus, vocab, 0.0f, harness.seed);

    std::vector<SweepRow> rows;
    for (double sigma : levels) {
        SweepRow row{};
        row.sigma = sigma;

        double learn_total = 0.0;
        for (std::size_t i = 0; i < harness.eval_sentences.size(); ++i) {
            const auto& s = harness.eval_sentences[i];
            std::vector<float> e = embed(encoder, encode(s.words, vocab));
            if (sigma > 0.0)
                e = gaussian_perturb(e, static_cast<float>(sigma),
                                     substream_seed(harness.seed, "l" + std::to_string(i)));
            WordList recovered = invert_learning(attacker, e, vocab);
            learn_total += bleu2({s.words, recovered});
        }
        row.learn_attack_bleu2 = learn_total / harness.eval_sentences.size();

        double opt_total = 0.0;
        const int n_opt = std::min<int>(harness.opt_eval_count,
                                        static_cast<int>(harness.eval_sentences.size()));
        for (int i = 0; i < n_opt; ++i) {
            const auto& s = harness.eval_sentences[i];
            std::vector<float> e = embed(encoder, encode(s.words, vocab));
            if (sigma > 0.0)
                e = gaussian_perturb(e, static_cast<float>(sigma),
                                     substream_seed(harness.seed, "o" + std::to_string(i)));
            OptimizationAttackConfig cfg = harness.opt_cfg;
            cfg.seed = substream_seed(harness.seed, "opt" + std::to_string(i));
            opt_total += bleu2({s.words, invert_optimization(encoder, e, vocab, cfg).words});
        }
        row.opt_attack_bleu2 = n_opt ? opt_total / n_opt : 0.0;

        row.ndcg5 = mean_ndcg5(encoder, *harness.corpus, vocab, static_cast<float>(sigma),
                               harness.seed);
        const double opt_thr = harness.thresholds.opt_attack_bleu2 >= 0.0
                                   ? harness.thresholds.opt_attack_bleu2
                                   : harness.thresholds.attack_bleu2;
        row.opt_ok = row.opt_attack_bleu2 >= opt_thr;
        row.learn_ok = row.learn_attack_bleu2 >= harness.thresholds.attack_bleu2;
        row.retrieval_ok = row.ndcg5 >= harness.thresholds.retrieval_relative * baseline_ndcg;
        rows.push_back(row);
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "sigma,opt_attack_bleu2,learn_attack_bleu2,ndcg5,opt_ok,learn_ok,retrieval_ok\n";
    for (const auto& r : rows) {
        out += format_number(r.sigma) + ',' + format_number(r.opt_attack_bleu2) + ',' +
               format_number(r.learn_attack_bleu2) + ',' + format_number(r.ndcg5) + ',' +
               (r.opt_ok ? "1" : "0") + ',' + (r.learn_ok ? "1" : "0") + ',' +
               (r.retrieval_ok ? "1" : "0") + '\n';
    }
    return out;
}

}  // namespace entroguard
