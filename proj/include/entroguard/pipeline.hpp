#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "entroguard/attacks.hpp"
#include "entroguard/checkpoint.hpp"
#include "entroguard/config.hpp"
#include "entroguard/corpus.hpp"
#include "entroguard/guard.hpp"
#include "entroguard/metrics.hpp"
#include "entroguard/model.hpp"
#include "entroguard/report.hpp"
#include "entroguard/store.hpp"

namespace entroguard {

namespace pipeline_detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << content;
}

inline bool stamp_matches(const std::string& stamp_path, const std::string& hash) {
    std::ifstream in(stamp_path);
    if (!in) return false;
    std::string stored;
    std::getline(in, stored);
    return stored == hash;
}

}  // namespace pipeline_detail

// Sequential experiment pipeline. Each stage persists its artifacts under the
// output directory together with a stamp carrying the config hash; re-running
// a completed stage with an unchanged config reloads instead of recomputing.
class Pipeline {
public:
    Pipeline(const ExperimentConfig& cfg, const std::string& out_dir)
        : cfg_(cfg), out_(out_dir), vocab_(build_vocab(cfg.model.vocab_size)) {
        cfg_.validate();
        std::filesystem::create_directories(out_);
        hash_ = config_hash(cfg_);
    }

    const ExperimentConfig& config() const { return cfg_; }
    const Vocab& vocab() const { return vocab_; }
    const std::string& out_dir() const { return out_; }

    // ---- stage: corpus -----------------------------------------------------

    void ensure_corpus() {
        if (have_corpus_) return;
        const std::string stamp = path("corpus.stamp");
        if (pipeline_detail::stamp_matches(stamp, hash_)) {
            load_corpus();
        } else {
            auto [sentences, corpus] = gen_corpus(substream_seed(cfg_.seed, "corpus"),
                                                  cfg_.corpus.n_sentences, cfg_.corpus.n_queries);
            sentences_ = std::move(sentences);
            corpus_ = std::move(corpus);
            const int n_eval = std::max(cfg_.eval.privacy_count + cfg_.eval.opt_attack_count, 10);
            auto [eval_sentences, eval_corpus] =
                gen_corpus(substream_seed(cfg_.seed, "corpus-eval"), n_eval, cfg_.corpus.n_queries);
            eval_sentences_ = std::move(eval_sentences);
            eval_corpus_ = std::move(eval_corpus);
            save_corpus();
            pipeline_detail::write_file(stamp, hash_ + "\n");
        }
        have_corpus_ = true;
    }

    const std::vector<Sentence>& sentences() { ensure_corpus(); return sentences_; }
    const std::vector<Sentence>& eval_sentences() { ensure_corpus(); return eval_sentences_; }
    const RetrievalCorpus& corpus() { ensure_corpus(); return corpus_; }
    const RetrievalCorpus& eval_corpus() { ensure_corpus(); return eval_corpus_; }

    // ---- stage: models -----------------------------------------------------

    EncoderModel& encoder() {
        if (!encoder_) {
            ensure_corpus();
            Rng init(substream_seed(cfg_.seed, "encoder-init"));
            encoder_.emplace(cfg_.model, init);
            Params params = encoder_->params();
            if (!restore("encoder", params)) {
                EncoderTrainConfig tc = cfg_.encoder;
                tc.seed = substream_seed(cfg_.seed, "encoder");
                train_encoder(*encoder_, corpus_, vocab_, tc);
                persist("encoder", params);
            }
        }
        return *encoder_;
    }

    RecoveryModel& attacker() { return recovery_model(attacker_, "attacker"); }
    RecoveryModel& surrogate() { return recovery_model(surrogate_, "surrogate"); }

    PerturbGenerator& guard() {
        if (!guard_) {
            EncoderModel& enc = encoder();
            RecoveryModel& sur = surrogate();
            Rng init(substream_seed(cfg_.seed, "guard-init"));
            guard_.emplace(cfg_.model.dim, init);
            Params params = guard_->params();
            if (!restore("guard", params)) {
                GuardTrainConfig gc = cfg_.guard;
                gc.seed = substream_seed(cfg_.seed, "guard");
                train_guard(*guard_, training_pairs(enc), sur, gc);
                persist("guard", params);
            }
        }
        return *guard_;
    }

    AdaptConfig adapt_config() const {
        AdaptConfig a = cfg_.adapt;
        a.seed = cfg_.seed;  // protect() derives its own "adapt" sub-stream
        return a;
    }

    // ---- protected / baseline embeddings ------------------------------------

    enum class Condition { Raw, Guard, Gaussian, Pgd };

    static const char* condition_name(Condition c) {
        switch (c) {
            case Condition::Raw: return "raw";
            case Condition::Guard: return "guard";
            case Condition::Gaussian: return "gaussian";
            case Condition::Pgd: return "pgd";
        }
        throw ContractError("unreachable");
    }

    // embedding of `words` under a defense condition; `tag` seeds per-item
    // noise sub-streams
    std::vector<float> conditioned_embedding(const std::vector<std::string>& words,
                                             Condition cond, const std::string& tag) {
        TokenSequence seq = encode(words, vocab_, cfg_.model.max_len);
        std::vector<float> e = embed(encoder(), seq);
        switch (cond) {
            case Condition::Raw:
                return e;
            case Condition::Guard:
                return protect(e, guard(), adapt_config());
            case Condition::Gaussian:
                return gaussian_perturb(e, cfg_.baseline.gaussian_sigma,
                                        substream_seed(cfg_.seed, "gauss-" + tag));
            case Condition::Pgd:
                return pgd_perturb(e, surrogate(), seq, cfg_.baseline.pgd);
        }
        throw ContractError("unreachable");
    }

    // ---- stage: privacy evaluation ------------------------------------------

    // learning attack against each condition, plus logit-lens entropy rows
    MetricsReport eval_privacy() {
        ensure_corpus();
        RecoveryModel& phi = attacker();
        const int n = std::min<int>(cfg_.eval.privacy_count,
                                    static_cast<int>(eval_sentences_.size()));
        if (n < 1) throw ConfigError("eval.privacy_count must be >= 1");
        MetricsReport report = make_report("privacy");
        EntailmentOracle oracle = fact_containment_oracle();
        for (Condition cond : {Condition::Raw, Condition::Guard, Condition::Gaussian,
                               Condition::Pgd}) {
            std::vector<WordList> originals, recovered;
            double entropy = 0.0;
            for (int i = 0; i < n; ++i) {
                const auto& s = eval_sentences_[i];
                std::vector<float> e =
                    conditioned_embedding(s.words, cond, "p" + std::to_string(i));
                originals.push_back(s.words);
                recovered.push_back(invert_learning(phi, e, vocab_, cfg_.model.max_len));
                entropy += trace_entropy_bits(
                    logit_lens(surrogate(), e, encode(s.words, vocab_, cfg_.model.max_len)));
            }
            MetricsReport part = privacy_report(originals, recovered, oracle,
                                                condition_name(cond));
            for (const auto& r : part.rows) report.add(r.metric, r.condition, r.value);
            report.add("lens_entropy_bits", condition_name(cond), entropy / n);
        }
        report.write(path("privacy.csv"), path("privacy.md"));
        return report;
    }

    // ---- stage: retrieval evaluation ----------------------------------------

    MetricsReport eval_retrieval() {
        ensure_corpus();
        EncoderModel& enc = encoder();
        VectorStore store(cfg_.model.dim);
        for (std::size_t i = 0; i < eval_corpus_.documents.size(); ++i)
            store.insert(static_cast<int>(i), eval_corpus_.documents[i].text(),
                         embed(enc, encode(eval_corpus_.documents[i].words, vocab_,
                                           cfg_.model.max_len)));
        MetricsReport report = make_report("retrieval");
        const int k = cfg_.eval.k;
        for (Condition cond : {Condition::Raw, Condition::Guard, Condition::Gaussian,
                               Condition::Pgd}) {
            double ndcg = 0.0, map = 0.0, prec = 0.0;
            int n = 0;
            for (const auto& [q, relevant] : eval_corpus_.qrels) {
                std::vector<float> e = conditioned_embedding(
                    eval_corpus_.queries[q].words, cond, "r" + std::to_string(q));
                RankedResult r = store.ranked(e, k, relevant);
                ndcg += ndcg_at_k(r, k);
                map += map_at_k(r, k);
                prec += precision_at_k(r, k);
                ++n;
            }
            if (n == 0) throw ContractError("no evaluation queries");
            report.add("ndcg5", condition_name(cond), ndcg / n);
            report.add("map5", condition_name(cond), map / n);
            report.add("p5", condition_name(cond), prec / n);
        }
        report.write(path("retrieval.csv"), path("retrieval.md"));
        return report;
    }

    // ---- stage: attack demo --------------------------------------------------

    // both attack families against raw embeddings of held-out sentences
    MetricsReport run_attacks() {
        ensure_corpus();
        EncoderModel& enc = encoder();
        RecoveryModel& phi = attacker();
        const int n_learn = std::min<int>(cfg_.eval.privacy_count,
                                          static_cast<int>(eval_sentences_.size()));
        const int n_opt = std::min<int>(cfg_.eval.opt_attack_count, n_learn);
        MetricsReport report = make_report("attack");
        double learn_b2 = 0.0, opt_b2 = 0.0;
        std::ostringstream transcript;
        for (int i = 0; i < n_learn; ++i) {
            const auto& s = eval_sentences_[i];
            std::vector<float> e = embed(enc, encode(s.words, vocab_, cfg_.model.max_len));
            WordList rec = invert_learning(phi, e, vocab_, cfg_.model.max_len);
            learn_b2 += bleu2({s.words, rec});
            transcript << "learning\t" << s.text() << '\t' << join_words(rec) << '\n';
        }
        for (int i = 0; i < n_opt; ++i) {
            const auto& s = eval_sentences_[i];
            std::vector<float> e = embed(enc, encode(s.words, vocab_, cfg_.model.max_len));
            OptimizationAttackConfig oc = cfg_.attack;
            oc.seed = substream_seed(cfg_.seed, "opt" + std::to_string(i));
            OptimizationAttackResult res = invert_optimization(enc, e, vocab_, oc);
            opt_b2 += bleu2({s.words, res.words});
            transcript << "optimization\t" << s.text() << '\t' << join_words(res.words) << '\n';
        }
        report.add("learn_bleu2", "raw", learn_b2 / std::max(1, n_learn));
        report.add("opt_bleu2", "raw", n_opt ? opt_b2 / n_opt : 0.0);
        pipeline_detail::write_file(path("attack_transcript.tsv"), transcript.str());
        report.write(path("attack.csv"), path("attack.md"));
        return report;
    }

    // ---- stage: noise sweep --------------------------------------------------

    std::vector<SweepRow> noise_sweep_stage(
        const std::vector<double>& levels = {0.0, 1e-3, 1e-2, 1e-1}) {
        ensure_corpus();
        SweepHarness h;
        h.encoder = &encoder();
        h.attacker = &attacker();
        h.vocab = &vocab_;
        h.eval_sentences.assign(
            eval_sentences_.begin(),
            eval_sentences_.begin() + std::min<std::size_t>(eval_sentences_.size(),
                                                            cfg_.eval.privacy_count));
        h.corpus = &eval_corpus_;
        h.opt_cfg = cfg_.attack;
        h.opt_eval_count = cfg_.eval.opt_attack_count;
        h.thresholds = cfg_.thresholds;
        h.seed = substream_seed(cfg_.seed, "sweep");
        std::vector<SweepRow> rows = noise_sweep(levels, h);
        pipeline_detail::write_file(path("noise_sweep.csv"), sweep_csv(rows));
        return rows;
    }

    // ---- stage: lens trace ---------------------------------------------------

    // per-block top-1 readout for the first held-out sentence, raw vs guarded
    void lens_trace_stage() {
        ensure_corpus();
        if (eval_sentences_.empty()) throw ContractError("no sentences for lens trace");
        const auto& s = eval_sentences_.front();
        TokenSequence seq = encode(s.words, vocab_, cfg_.model.max_len);
        std::vector<float> raw = embed(encoder(), seq);
        std::vector<float> prot = protect(raw, guard(), adapt_config());
        write_trace(path("lens_raw.csv"), logit_lens(surrogate(), raw, seq));
        write_trace(path("lens_guard.csv"), logit_lens(surrogate(), prot, seq));
    }

    // ---- stage: micro-benchmark ----------------------------------------------

    struct BenchResult {
        double embed_us;    // mean per sentence
        double protect_us;  // mean per embedding (generator + adaptation)
        double overhead;    // protect_us / embed_us
    };

    BenchResult bench(int repetitions = 50) {
        ensure_corpus();
        EncoderModel& enc = encoder();
        PerturbGenerator& g = guard();
        AdaptConfig ac = adapt_config();
        std::vector<TokenSequence> seqs;
        std::vector<std::vector<float>> embs;
        const int n = std::min<int>(16, static_cast<int>(eval_sentences_.size()));
        for (int i = 0; i < n; ++i) {
            seqs.push_back(encode(eval_sentences_[i].words, vocab_, cfg_.model.max_len));
            embs.push_back(embed(enc, seqs.back()));
        }
        using clock = std::chrono::steady_clock;
        auto t0 = clock::now();
        for (int r = 0; r < repetitions; ++r)
            for (const auto& seq : seqs) (void)embed(enc, seq);
        auto t1 = clock::now();
        for (int r = 0; r < repetitions; ++r)
            for (const auto& e : embs) (void)protect(e, g, ac);
        auto t2 = clock::now();
        const double total = double(repetitions) * n;
        BenchResult res;
        res.embed_us = std::chrono::duration<double, std::micro>(t1 - t0).count() / total;
        res.protect_us = std::chrono::duration<double, std::micro>(t2 - t1).count() / total;
        res.overhead = res.protect_us / res.embed_us;
        std::ostringstream out;
        out << "embed_us," << format_number(res.embed_us) << "\n"
            << "protect_us," << format_number(res.protect_us) << "\n"
            << "overhead," << format_number(res.overhead) << "\n";
        pipeline_detail::write_file(path("bench.csv"), out.str());
        return res;
    }

    std::string path(const std::string& name) const {
        return (std::filesystem::path(out_) / name).string();
    }

    std::vector<std::pair<TokenSequence, std::vector<float>>> training_pairs(EncoderModel& enc) {
        ensure_corpus();
        std::vector<std::pair<TokenSequence, std::vector<float>>> pairs;
        for (const auto& s : sentences_) {
            TokenSequence seq = encode(s.words, vocab_, cfg_.model.max_len);
            pairs.push_back({seq, embed(enc, seq)});
        }
        return pairs;
    }

    MetricsReport make_report(const std::string& id) const {
        MetricsReport r;
        r.experiment_id = id;
        r.config_hash = hash_;
        r.seed = cfg_.seed;
        return r;
    }

private:
    RecoveryModel& recovery_model(std::optional<RecoveryModel>& slot, const std::string& role) {
        if (!slot) {
            EncoderModel& enc = encoder();
            RecoveryTrainConfig rc = cfg_.recovery;
            rc.seed = substream_seed(cfg_.seed, role);
            Rng model_init(substream_seed(rc.seed, "attacker-init"));
            slot.emplace(cfg_.decoder_config(), model_init);
            Params params = slot->params();
            if (!restore(role, params)) {
                train_recovery(*slot, training_pairs(enc), rc);
                persist(role, params);
            }
        }
        return *slot;
    }

    bool restore(const std::string& name, Params& params) {
        const std::string ckpt = path(name + ".egck");
        if (!pipeline_detail::stamp_matches(path(name + ".stamp"), hash_)) return false;
        if (!std::filesystem::exists(ckpt)) return false;
        load_checkpoint(ckpt, params);
        return true;
    }

    void persist(const std::string& name, const Params& params) {
        save_checkpoint(path(name + ".egck"), params);
        pipeline_detail::write_file(path(name + ".stamp"), hash_ + "\n");
    }

    void save_corpus() const {
        auto dump_sentences = [&](const std::string& p, const std::vector<Sentence>& v) {
            std::ofstream out(this->path(p));
            export_sentences(v, out);
        };
        dump_sentences("sentences.tsv", sentences_);
        dump_sentences("queries.tsv", corpus_.queries);
        dump_sentences("documents.tsv", corpus_.documents);
        dump_sentences("eval_sentences.tsv", eval_sentences_);
        dump_sentences("eval_queries.tsv", eval_corpus_.queries);
        dump_sentences("eval_documents.tsv", eval_corpus_.documents);
        save_qrels(path("qrels.tsv"), corpus_.qrels);
        save_qrels(path("eval_qrels.tsv"), eval_corpus_.qrels);
    }

    void load_corpus() {
        auto slurp = [&](const std::string& p) {
            std::ifstream in(this->path(p));
            if (!in) throw ConfigError("missing corpus artifact: " + p);
            return import_sentences(in);
        };
        sentences_ = slurp("sentences.tsv");
        corpus_.queries = slurp("queries.tsv");
        corpus_.documents = slurp("documents.tsv");
        eval_sentences_ = slurp("eval_sentences.tsv");
        eval_corpus_.queries = slurp("eval_queries.tsv");
        eval_corpus_.documents = slurp("eval_documents.tsv");
        corpus_.qrels = load_qrels(path("qrels.tsv"));
        eval_corpus_.qrels = load_qrels(path("eval_qrels.tsv"));
    }

    static void save_qrels(const std::string& p, const std::map<int, std::set<int>>& qrels) {
        std::ofstream out(p);
        for (const auto& [q, docs] : qrels)
            for (int d : docs) out << q << '\t' << d << '\n';
    }

    static std::map<int, std::set<int>> load_qrels(const std::string& p) {
        std::ifstream in(p);
        if (!in) throw ConfigError("missing corpus artifact: " + p);
        std::map<int, std::set<int>> qrels;
        int q, d;
        while (in >> q >> d) qrels[q].insert(d);
        return qrels;
    }

    void write_trace(const std::string& p, const RecoveryTrace& trace) const {
        std::ostringstream out;
        out << "layer,position,top1_token,confidence\n";
        for (int k = 0; k < trace.n_blocks; ++k)
            for (int j = 0; j < trace.length; ++j)
                out << (k + 1) << ',' << j << ',' << vocab_.token(trace.top1[k][j]) << ','
                    << format_number(trace.confidence[k][j]) << '\n';
        pipeline_detail::write_file(p, out.str());
    }

    ExperimentConfig cfg_;
    std::string out_;
    std::string hash_;
    Vocab vocab_;
    bool have_corpus_ = false;
    std::vector<Sentence> sentences_, eval_sentences_;
    RetrievalCorpus corpus_, eval_corpus_;
    std::optional<EncoderModel> encoder_;
    std::optional<RecoveryModel> attacker_, surrogate_;
    std::optional<PerturbGenerator> guard_;
};

}  // namespace entroguard
