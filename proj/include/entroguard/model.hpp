#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "entroguard/adam.hpp"
#include "entroguard/corpus.hpp"
#include "entroguard/errors.hpp"
#include "entroguard/rng.hpp"
#include "entroguard/tensor.hpp"
#include "entroguard/vocab.hpp"

namespace entroguard {

// ---------------------------------------------------------------------------
// shared transformer block (pre-norm, multi-head self-attention + feed-forward)

struct BlockWeights {
    Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b, w1, b1, w2, b2;
};

namespace model_detail {

inline BlockWeights init_block(Rng& rng, int d, int ff) {
    BlockWeights b;
    auto ones = [](int n) {
        Tensor t = Tensor::zeros({n}, true);
        std::fill(t.data().begin(), t.data().end(), 1.0f);
        return t;
    };
    b.ln1_g = ones(d);
    b.ln1_b = Tensor::zeros({d}, true);
    b.wq = Tensor::randn(rng, {d, d}, 0.02f, true);
    b.bq = Tensor::zeros({d}, true);
    b.wk = Tensor::randn(rng, {d, d}, 0.02f, true);
    b.bk = Tensor::zeros({d}, true);
    b.wv = Tensor::randn(rng, {d, d}, 0.02f, true);
    b.bv = Tensor::zeros({d}, true);
    b.wo = Tensor::randn(rng, {d, d}, 0.02f, true);
    b.bo = Tensor::zeros({d}, true);
    b.ln2_g = ones(d);
    b.ln2_b = Tensor::zeros({d}, true);
    b.w1 = Tensor::randn(rng, {d, ff}, 0.02f, true);
    b.b1 = Tensor::zeros({ff}, true);
    b.w2 = Tensor::randn(rng, {ff, d}, 0.02f, true);
    b.b2 = Tensor::zeros({d}, true);
    return b;
}

inline void collect_block(Params& out, const std::string& prefix, BlockWeights& b) {
    out.push_back({prefix + ".ln1_g", b.ln1_g, true});
    out.push_back({prefix + ".ln1_b", b.ln1_b, true});
    out.push_back({prefix + ".wq", b.wq, false});
    out.push_back({prefix + ".bq", b.bq, true});
    out.push_back({prefix + ".wk", b.wk, false});
    out.push_back({prefix + ".bk", b.bk, true});
    out.push_back({prefix + ".wv", b.wv, false});
    out.push_back({prefix + ".bv", b.bv, true});
    out.push_back({prefix + ".wo", b.wo, false});
    out.push_back({prefix + ".bo", b.bo, true});
    out.push_back({prefix + ".ln2_g", b.ln2_g, true});
    out.push_back({prefix + ".ln2_b", b.ln2_b, true});
    out.push_back({prefix + ".w1", b.w1, false});
    out.push_back({prefix + ".b1", b.b1, true});
    out.push_back({prefix + ".w2", b.w2, false});
    out.push_back({prefix + ".b2", b.b2, true});
}

// causal mask constant: position j attends to positions <= j
inline Tensor causal_mask(int u) {
    Tensor m = Tensor::zeros({u, u});
    for (int i = 0; i < u; ++i)
        for (int j = i + 1; j < u; ++j) m.data()[std::size_t(i) * u + j] = -1e9f;
    return m;
}

inline Tensor block_forward(const BlockWeights& w, Tensor x, int heads, bool causal) {
    const int u = x.shape()[0], d = x.shape()[1];
    const int dh = d / heads;
    Tensor h = layernorm(x, w.ln1_g, w.ln1_b);
    Tensor Q = add_row(matmul(h, w.wq), w.bq);
    Tensor K = add_row(matmul(h, w.wk), w.bk);
    Tensor V = add_row(matmul(h, w.wv), w.bv);
    Tensor mask;
    if (causal) mask = causal_mask(u);
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (int i = 0; i < heads; ++i) {
        Tensor qh = slice_cols(Q, i * dh, (i + 1) * dh);
        Tensor kh = slice_cols(K, i * dh, (i + 1) * dh);
        Tensor vh = slice_cols(V, i * dh, (i + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0f / std::sqrt(float(dh)));
        if (causal) scores = add(scores, mask);
        head_outs.push_back(matmul(softmax_rows(scores), vh));
    }
    x = add(x, add_row(matmul(concat_cols(head_outs), w.wo), w.bo));
    Tensor h2 = layernorm(x, w.ln2_g, w.ln2_b);
    Tensor f = add_row(matmul(relu(add_row(matmul(h2, w.w1), w.b1)), w.w2), w.b2);
    return add(x, f);
}

}  // namespace model_detail

// ---------------------------------------------------------------------------
// encoder f: token + position tables, L_e pre-norm blocks, mean-pool over
// non-PAD positions, L2 normalization

struct EncoderConfig {
    int vocab_size = 256;
    int dim = 32;
    int heads = 4;
    int blocks = 2;
    int ff = 64;
    int max_len = kDefaultMaxLen;
};

class EncoderModel {
public:
    EncoderModel(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        tok_emb_ = Tensor::randn(rng, {cfg.vocab_size, cfg.dim}, 0.02f, true);
        pos_emb_ = Tensor::randn(rng, {cfg.max_len, cfg.dim}, 0.02f, true);
        for (int i = 0; i < cfg.blocks; ++i)
            blocks_.push_back(model_detail::init_block(rng, cfg.dim, cfg.ff));
    }

    const EncoderConfig& config() const { return cfg_; }

    Params params() {
        Params out;
        out.push_back({"enc.tok_emb", tok_emb_, false});
        out.push_back({"enc.pos_emb", pos_emb_, false});
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            model_detail::collect_block(out, "enc.block" + std::to_string(i), blocks_[i]);
        return out;
    }

    // graph-building forward; output {1, dim}, unit L2 norm
    Tensor forward(const TokenSequence& seq) const {
        seq.validate(cfg_.vocab_size, cfg_.max_len);
        const int u = seq.length();
        std::vector<int> positions(u);
        for (int i = 0; i < u; ++i) positions[i] = i;
        Tensor x = add(embed_rows(tok_emb_, seq.ids), embed_rows(pos_emb_, positions));
        for (const auto& b : blocks_) x = model_detail::block_forward(b, x, cfg_.heads, false);
        // mean-pool over non-PAD positions
        Tensor pool = Tensor::zeros({1, u});
        int n = 0;
        for (int i = 0; i < u; ++i)
            if (seq.ids[i] != Vocab::kPad) ++n;
        if (n == 0) throw ContractError("sequence with only PAD tokens");
        for (int i = 0; i < u; ++i)
            if (seq.ids[i] != Vocab::kPad) pool.data()[i] = 1.0f / n;
        return l2_normalize_rows(matmul(pool, x));
    }

private:
    EncoderConfig cfg_;
    Tensor tok_emb_, pos_emb_;
    std::vector<BlockWeights> blocks_;
};

// inference-time embedding (no graph)
inline std::vector<float> embed(const EncoderModel& model, const TokenSequence& seq) {
    NoGrad ng;
    return model.forward(seq).data();
}

// ---------------------------------------------------------------------------
// recovery model (surrogate S / attacker Phi): causal decoder conditioned on
// the embedding as a single projected prefix position, with per-block outputs
// exposed for the logit lens; decoding matrix tied to the token table

struct DecoderConfig {
    int vocab_size = 256;
    int embed_dim = 32;  // incoming embedding dimension
    int dim = 32;
    int heads = 4;
    int blocks = 4;
    int ff = 64;
    int max_len = kDefaultMaxLen;
};

// per-block teacher-forced vocabulary distributions, graph-connected
struct LensActivations {
    std::vector<Tensor> distr;  // one {u, V} tensor per block, rows sum to 1
    Tensor final_logits;        // {u, V}, pre-softmax output head
};

// plain-data recovery trace for analysis and CSV emission
struct RecoveryTrace {
    int n_blocks = 0;
    int length = 0;
    int vocab_size = 0;
    // [block][position] -> full distribution row
    std::vector<std::vector<std::vector<float>>> rows;
    std::vector<std::vector<int>> top1;
    std::vector<std::vector<float>> confidence;
};

class RecoveryModel {
public:
    RecoveryModel(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        in_proj_ = Tensor::randn(rng, {cfg.embed_dim, cfg.dim}, 0.02f, true);
        in_bias_ = Tensor::zeros({cfg.dim}, true);
        tok_emb_ = Tensor::randn(rng, {cfg.vocab_size, cfg.dim}, 0.02f, true);
        pos_emb_ = Tensor::randn(rng, {cfg.max_len + 1, cfg.dim}, 0.02f, true);
        for (int i = 0; i < cfg.blocks; ++i)
            blocks_.push_back(model_detail::init_block(rng, cfg.dim, cfg.ff));
        lns_g_ = Tensor::zeros({cfg.dim}, true);
        std::fill(lns_g_.data().begin(), lns_g_.data().end(), 1.0f);
        lns_b_ = Tensor::zeros({cfg.dim}, true);
    }

    const DecoderConfig& config() const { return cfg_; }

    Params params() {
        Params out;
        out.push_back({"dec.in_proj", in_proj_, false});
        out.push_back({"dec.in_bias", in_bias_, true});
        out.push_back({"dec.tok_emb", tok_emb_, false});
        out.push_back({"dec.pos_emb", pos_emb_, false});
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            model_detail::collect_block(out, "dec.block" + std::to_string(i), blocks_[i]);
        out.push_back({"dec.lns_g", lns_g_, true});
        out.push_back({"dec.lns_b", lns_b_, true});
        return out;
    }

    void set_trainable(bool trainable) {
        for (auto& p : params()) p.tensor.set_requires_grad(trainable);
    }

    // Teacher-forced forward. Row j of the stream predicts target token
    // x.ids[j]; row 0 is the projected embedding prefix. Returns the
    // per-block vocabulary distributions (logit lens) and the output logits.
    LensActivations forward_teacher(const Tensor& embedding, const TokenSequence& x) const {
        if (static_cast<int>(embedding.size()) != cfg_.embed_dim)
            throw DimensionError("embedding dimension mismatch");
        const int u = x.length();
        if (u < 1) throw ContractError("empty target sequence");
        Tensor e = embedding;
        if (e.shape().size() != 2)
            e = Tensor::from({1, cfg_.embed_dim}, e.data(), e.requires_grad());
        Tensor prefix = add_row(matmul(e, in_proj_), in_bias_);
        std::vector<Tensor> rows = {prefix};
        if (u > 1) {
            std::vector<int> input_ids(x.ids.begin(), x.ids.end() - 1);
            rows.push_back(embed_rows(tok_emb_, input_ids));
        }
        std::vector<int> positions(u);
        for (int i = 0; i < u; ++i) positions[i] = i;
        Tensor stream = add(concat_rows(rows), embed_rows(pos_emb_, positions));

        LensActivations acts;
        Tensor decode = transpose(tok_emb_);  // tied output head
        for (const auto& b : blocks_) {
            stream = model_detail::block_forward(b, stream, cfg_.heads, true);
            Tensor logits = matmul(layernorm(stream, lns_g_, lns_b_), decode);
            if (&b == &blocks_.back()) acts.final_logits = logits;
            acts.distr.push_back(softmax_rows(logits));
        }
        return acts;
    }

    // greedy argmax autoregressive decoding from the projected prefix
    TokenSequence decode_greedy(const std::vector<float>& embedding, int max_len) const {
        NoGrad ng;
        if (max_len > cfg_.max_len) max_len = cfg_.max_len;
        TokenSequence out;
        for (int step = 0; step < max_len; ++step) {
            TokenSequence draft = out;
            draft.ids.push_back(Vocab::kPad);  // placeholder target, values unused
            Tensor e = Tensor::from({1, cfg_.embed_dim}, embedding);
            LensActivations acts = forward_teacher(e, draft);
            const int u = draft.length();
            const float* row = acts.final_logits.data().data() + std::size_t(u - 1) * cfg_.vocab_size;
            int best = 0;
            for (int j = 1; j < cfg_.vocab_size; ++j)
                if (row[j] > row[best]) best = j;
            out.ids.push_back(best);
            if (best == Vocab::kEos) break;
        }
        return out;
    }

private:
    DecoderConfig cfg_;
    Tensor in_proj_, in_bias_, tok_emb_, pos_emb_, lns_g_, lns_b_;
    std::vector<BlockWeights> blocks_;
};

// cross-entropy of x under the model conditioned on the embedding (Eq-style
// teacher forcing); PAD positions masked out
inline Tensor recovery_ce(const RecoveryModel& model, const Tensor& embedding,
                          const TokenSequence& x) {
    LensActivations acts = model.forward_teacher(embedding, x);
    std::vector<bool> mask(x.ids.size());
    for (std::size_t i = 0; i < x.ids.size(); ++i) mask[i] = x.ids[i] != Vocab::kPad;
    return cross_entropy(acts.final_logits, x.ids, mask);
}

inline RecoveryTrace to_trace(const LensActivations& acts) {
    RecoveryTrace trace;
    trace.n_blocks = static_cast<int>(acts.distr.size());
    if (trace.n_blocks == 0) return trace;
    trace.length = acts.distr[0].shape()[0];
    trace.vocab_size = acts.distr[0].shape()[1];
    for (const auto& d : acts.distr) {
        std::vector<std::vector<float>> block_rows;
        std::vector<int> block_top1;
        std::vector<float> block_conf;
        for (int i = 0; i < trace.length; ++i) {
            const float* row = d.data().data() + std::size_t(i) * trace.vocab_size;
            block_rows.emplace_back(row, row + trace.vocab_size);
            int best = 0;
            for (int j = 1; j < trace.vocab_size; ++j)
                if (row[j] > row[best]) best = j;
            block_top1.push_back(best);
            block_conf.push_back(row[best]);
        }
        trace.rows.push_back(std::move(block_rows));
        trace.top1.push_back(std::move(block_top1));
        trace.confidence.push_back(std::move(block_conf));
    }
    return trace;
}

// logit-lens readout without gradients
inline RecoveryTrace logit_lens(const RecoveryModel& model, const std::vector<float>& embedding,
                                const TokenSequence& x) {
    NoGrad ng;
    Tensor e = Tensor::from({1, model.config().embed_dim}, embedding);
    return to_trace(model.forward_teacher(e, x));
}

// ---------------------------------------------------------------------------
// training

// InfoNCE over in-batch negatives: mean_i -log softmax_j(cos(q_i, p_j)/tau)[i]
inline Tensor contrastive_loss(const std::vector<Tensor>& query_embs,
                               const std::vector<Tensor>& doc_embs, float tau) {
    if (query_embs.size() != doc_embs.size()) throw ContractError("batch size mismatch");
    const int b = static_cast<int>(query_embs.size());
    if (b < 2) throw ConfigError("contrastive batch needs >= 2 examples");
    std::vector<Tensor> losses;
    for (int i = 0; i < b; ++i) {
        std::vector<Tensor> row;
        row.reserve(b);
        for (int j = 0; j < b; ++j)
            row.push_back(scale(cosine(query_embs[i], doc_embs[j]), 1.0f / tau));
        losses.push_back(cross_entropy(concat_scalars(row), {i}));
    }
    Tensor total = losses[0];
    for (int i = 1; i < b; ++i) total = add(total, losses[i]);
    return scale(total, 1.0f / b);
}

struct EncoderTrainConfig {
    int steps = 2500;
    int batch = 8;
    float lr = 2e-3f;
    float tau = 0.05f;
    float weight_decay = 0.01f;
    std::uint64_t seed = 1;
};

inline std::vector<float> train_encoder(EncoderModel& model, const RetrievalCorpus& corpus,
                                        const Vocab& vocab, const EncoderTrainConfig& cfg) {
    std::vector<std::pair<TokenSequence, TokenSequence>> pairs;
    for (const auto& [q, rel] : corpus.qrels)
        for (int doc : rel)
            pairs.push_back({encode(corpus.queries[q].words, vocab),
                             encode(corpus.documents[doc].words, vocab)});
    if (static_cast<int>(pairs.size()) < cfg.batch)
        throw ConfigError("not enough training pairs for the batch size");
    Rng rng(cfg.seed);
    Params params = model.params();
    AdamState opt({cfg.lr, 0.9f, 0.999f, 1e-8f, cfg.weight_decay, cfg.steps});
    std::vector<float> curve;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor> q_embs, d_embs;
        for (int i = 0; i < cfg.batch; ++i) {
            const auto& [q, d] = pairs[rng.below(pairs.size())];
            q_embs.push_back(model.forward(q));
            d_embs.push_back(model.forward(d));
        }
        Tensor loss = contrastive_loss(q_embs, d_embs, cfg.tau);
        if (!std::isfinite(loss.item()))
            throw TrainingError("encoder loss diverged at step " + std::to_string(step));
        curve.push_back(loss.item());
        backward(loss);
        adam_step(params, opt);
    }
    return curve;
}

struct RecoveryTrainConfig {
    int steps = 5000;
    int batch = 8;
    float lr = 2e-3f;
    float weight_decay = 0.01f;
    std::uint64_t seed = 2;
};

// (x, f(x)) pairs with fixed embeddings; trains surrogate or attacker alike
inline std::vector<float> train_recovery(RecoveryModel& model,
                                         const std::vector<std::pair<TokenSequence, std::vector<float>>>& pairs,
                                         const RecoveryTrainConfig& cfg) {
    if (pairs.size() < 100) throw ConfigError("recovery training needs >= 100 pairs");
    Rng rng(cfg.seed);
    Params params = model.params();
    AdamState opt({cfg.lr, 0.9f, 0.999f, 1e-8f, cfg.weight_decay, cfg.steps});
    const int d = model.config().embed_dim;
    std::vector<float> curve;
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor loss;
        for (int i = 0; i < cfg.batch; ++i) {
            const auto& [x, e] = pairs[rng.below(pairs.size())];
            Tensor et = Tensor::from({1, d}, e);
            Tensor ce = recovery_ce(model, et, x);
            loss = loss.defined() ? add(loss, ce) : ce;
        }
        loss = scale(loss, 1.0f / cfg.batch);
        if (!std::isfinite(loss.item()))
            throw TrainingError("recovery loss diverged at step " + std::to_string(step));
        curve.push_back(loss.item());
        backward(loss);
        adam_step(params, opt);
    }
    return curve;
}

}  // namespace entroguard
