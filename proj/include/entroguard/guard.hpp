#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "entroguard/adam.hpp"
#include "entroguard/errors.hpp"
#include "entroguard/model.hpp"
#include "entroguard/rng.hpp"
#include "entroguard/tensor.hpp"

namespace entroguard {

inline double cosine_of(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw DimensionError("cosine size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    if (na <= 0.0 || nb <= 0.0) throw NumericError("cosine of zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline void unit_normalize(std::vector<float>& v) {
    double nn = 0.0;
    for (float x : v) nn += double(x) * double(x);
    nn = std::sqrt(nn);
    if (nn <= 0.0) throw NumericError("normalize of zero vector");
    for (float& x : v) x = static_cast<float>(x / nn);
}

// ---------------------------------------------------------------------------
// perturbation generator G: 3 fully-connected blocks of width 2d with dense
// connectivity (every block sees the raw embedding and all previous block
// outputs), a final linear map back to d, and a residual unit-norm output.
// The final layer starts at zero, so the untrained generator is the identity.

class PerturbGenerator {
public:
    PerturbGenerator(int dim, Rng& rng) : dim_(dim) {
        const int h = 2 * dim;
        int in = dim;
        for (int i = 0; i < 3; ++i) {
            w_.push_back(Tensor::randn(rng, {in, h}, 0.05f, true));
            b_.push_back(Tensor::zeros({h}, true));
            in += h;
        }
        w_out_ = Tensor::zeros({in, dim}, true);
        b_out_ = Tensor::zeros({dim}, true);
    }

    int dim() const { return dim_; }

    Params params() {
        Params out;
        for (std::size_t i = 0; i < w_.size(); ++i) {
            out.push_back({"guard.w" + std::to_string(i), w_[i], false});
            out.push_back({"guard.b" + std::to_string(i), b_[i], true});
        }
        out.push_back({"guard.w_out", w_out_, false});
        out.push_back({"guard.b_out", b_out_, true});
        return out;
    }

    // graph-building forward; e {1,d} -> unit-norm {1,d}
    Tensor forward(const Tensor& e) const {
        if (static_cast<int>(e.size()) != dim_) throw DimensionError("perturb dimension mismatch");
        Tensor x = e;
        if (x.shape().size() != 2) x = Tensor::from({1, dim_}, x.data(), x.requires_grad());
        std::vector<Tensor> features = {x};
        for (std::size_t i = 0; i < w_.size(); ++i) {
            Tensor in = features.size() == 1 ? features[0] : concat_cols(features);
            features.push_back(relu(add_row(matmul(in, w_[i]), b_[i])));
        }
        Tensor delta = add_row(matmul(concat_cols(features), w_out_), b_out_);
        return l2_normalize_rows(add(x, delta));
    }

private:
    int dim_;
    std::vector<Tensor> w_, b_;
    Tensor w_out_, b_out_;
};

// inference-time protected embedding before bound adaptation
inline std::vector<float> perturb(const PerturbGenerator& g, const std::vector<float>& e) {
    NoGrad ng;
    Tensor et = Tensor::from({1, g.dim()}, e);
    return g.forward(et).data();
}

// ---------------------------------------------------------------------------
// losses

// Sum over supervised blocks of the per-position mean base-2 entropy of the
// lens distributions. Bounded by n_blocks * log2(V).
inline Tensor entropy_loss(const std::vector<Tensor>& distr, int n_blocks) {
    if (distr.empty() || n_blocks < 1 || n_blocks > static_cast<int>(distr.size()))
        throw ContractError("entropy_loss: bad block count");
    const int u = distr[0].shape()[0];
    Tensor total;
    for (int k = 0; k < n_blocks; ++k) {
        Tensor s = sum(xlogx(distr[k]));
        total = total.defined() ? add(total, s) : s;
    }
    constexpr float kLn2 = 0.69314718055994530942f;
    return scale(total, -1.0f / (kLn2 * u));
}

// same normalization on a plain trace, for measurement
inline double trace_entropy_bits(const RecoveryTrace& trace, int n_blocks = 0) {
    if (trace.n_blocks == 0) throw ContractError("entropy of empty trace");
    if (n_blocks <= 0 || n_blocks > trace.n_blocks) n_blocks = trace.n_blocks;
    double total = 0.0;
    for (int k = 0; k < n_blocks; ++k)
        for (int j = 0; j < trace.length; ++j)
            for (float p : trace.rows[k][j])
                if (p > 1e-12f) total -= double(p) * std::log2(double(p));
    return total / trace.length;
}

// 1 - cos(a, b), in [0, 2]
inline Tensor similarity_loss(const Tensor& a, const Tensor& b) {
    return sub(Tensor::scalar(1.0f), cosine(a, b));
}

struct GuardTrainConfig {
    // alpha:beta:gamma interpolates linearly across training between the two
    // printed ratios
    float alpha_start = 1200.0f, beta_start = 4.0f, gamma_start = 6.0f;
    float alpha_end = 200.0f, beta_end = 12.0f, gamma_end = 6.0f;
    int n_supervised_blocks = 0;  // 0 = all decoder blocks
    int steps = 3500;
    int batch = 8;
    float lr = 1e-3f;
    float weight_decay = 0.01f;
    std::uint64_t seed = 3;

    struct Weights {
        float alpha, beta, gamma;
    };
    Weights at(int step) const {
        float t = steps <= 1 ? 0.0f : float(step) / float(steps - 1);
        return {alpha_start + t * (alpha_end - alpha_start),
                beta_start + t * (beta_end - beta_start),
                gamma_start + t * (gamma_end - gamma_start)};
    }
};

// alpha*L_sim - beta*L_entropy - gamma*L_ce against a frozen surrogate;
// gradients flow only into G
inline Tensor guard_loss(const Tensor& raw_embedding, const PerturbGenerator& g,
                         RecoveryModel& surrogate, const TokenSequence& x,
                         const GuardTrainConfig::Weights& w, int n_supervised_blocks = 0) {
    for (auto& p : surrogate.params())
        if (p.tensor.requires_grad())
            throw ContractError("guard_loss requires a frozen surrogate");
    Tensor protected_e = g.forward(raw_embedding);
    LensActivations acts = surrogate.forward_teacher(protected_e, x);
    const int n = n_supervised_blocks > 0 ? n_supervised_blocks
                                          : static_cast<int>(acts.distr.size());
    std::vector<bool> mask(x.ids.size());
    for (std::size_t i = 0; i < x.ids.size(); ++i) mask[i] = x.ids[i] != Vocab::kPad;
    Tensor l_sim = similarity_loss(raw_embedding, protected_e);
    Tensor l_ent = entropy_loss(acts.distr, n);
    Tensor l_ce = cross_entropy(acts.final_logits, x.ids, mask);
    return add(scale(l_sim, w.alpha), add(scale(l_ent, -w.beta), scale(l_ce, -w.gamma)));
}

inline std::vector<float> train_guard(PerturbGenerator& g,
                                      const std::vector<std::pair<TokenSequence, std::vector<float>>>& items,
                                      RecoveryModel& surrogate, const GuardTrainConfig& cfg) {
    if (items.empty()) throw ConfigError("train_guard needs examples");
    surrogate.set_trainable(false);
    Rng rng(cfg.seed);
    Params params = g.params();
    AdamState opt({cfg.lr, 0.9f, 0.999f, 1e-8f, cfg.weight_decay, cfg.steps});
    const int d = g.dim();
    std::vector<float> curve;
    for (int step = 0; step < cfg.steps; ++step) {
        const auto w = cfg.at(step);
        Tensor loss;
        for (int i = 0; i < cfg.batch; ++i) {
            const auto& [x, e] = items[rng.below(items.size())];
            Tensor et = Tensor::from({1, d}, e);
            Tensor l = guard_loss(et, g, surrogate, x, w, cfg.n_supervised_blocks);
            loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, 1.0f / cfg.batch);
        if (!std::isfinite(loss.item()))
            throw TrainingError("guard loss diverged at step " + std::to_string(step));
        curve.push_back(loss.item());
        backward(loss);
        adam_step(params, opt);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// bound-aware perturbation adaptation

struct AdaptConfig {
    float epsilon = 0.036f;        // perturbation bound, as cosine distance
    float rho = 0.95f;             // geometric decay factor
    float subset_fraction = 0.10f; // fraction of dimensions receiving noise
    int max_iter = 500;
    std::uint64_t seed = 4;

    void validate() const {
        if (!(rho > 0.0f && rho < 1.0f)) throw ConfigError("rho must be in (0,1)");
        if (!(epsilon > 0.0f && epsilon < 1.0f)) throw ConfigError("epsilon must be in (0,1)");
        if (!(subset_fraction > 0.0f && subset_fraction <= 1.0f))
            throw ConfigError("subset_fraction must be in (0,1]");
        if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
    }
};

// Scales the perturbation into the cosine-distance bound epsilon: noise is
// injected on a random dimension subset when the perturbation is below the
// bound, and the displacement decays geometrically (factor rho) when above
// it. Output is re-normalized to unit length.
inline std::vector<float> adapt(const std::vector<float>& e0, const std::vector<float>& e_prime,
                                const AdaptConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t d = e0.size();
    if (e_prime.size() != d) throw DimensionError("adapt dimension mismatch");
    const double dist = 1.0 - cosine_of(e0, e_prime);
    std::vector<float> out;
    if (dist < cfg.epsilon) {
        // below the bound: inject seeded noise on a dimension subset, then
        // shrink it until the bound holds again
        int subset = static_cast<int>(std::lround(cfg.subset_fraction * double(d)));
        if (subset < 1) subset = 1;
        if (subset > static_cast<int>(d)) subset = static_cast<int>(d);
        std::vector<int> dims(d);
        for (std::size_t i = 0; i < d; ++i) dims[i] = static_cast<int>(i);
        for (std::size_t i = 0; i < d; ++i) std::swap(dims[i], dims[rng.below(d)]);
        std::vector<float> noise(d, 0.0f);
        for (int i = 0; i < subset; ++i) {
            const double mean = rng.coin() ? 1.0 : -1.0;
            noise[dims[i]] = static_cast<float>(rng.normal(mean, 1.0));
        }
        out.resize(d);
        for (std::size_t i = 0; i < d; ++i) out[i] = e_prime[i] + noise[i];
        int iter = 0;
        while (1.0 - cosine_of(e0, out) > cfg.epsilon) {
            if (++iter > cfg.max_iter) throw AdaptationError("adapt: increase branch exceeded max_iter");
            for (std::size_t i = 0; i < d; ++i) {
                noise[i] *= cfg.rho;
                out[i] = e_prime[i] + noise[i];
            }
        }
    } else if (dist > cfg.epsilon) {
        // above the bound: geometric decay of the displacement
        std::vector<float> delta(d);
        for (std::size_t i = 0; i < d; ++i) delta[i] = e_prime[i] - e0[i];
        out.resize(d);
        for (std::size_t i = 0; i < d; ++i) out[i] = e0[i] + delta[i];
        int iter = 0;
        while (1.0 - cosine_of(e0, out) > cfg.epsilon) {
            if (++iter > cfg.max_iter) throw AdaptationError("adapt: decrease branch exceeded max_iter");
            for (std::size_t i = 0; i < d; ++i) {
                delta[i] *= cfg.rho;
                out[i] = e0[i] + delta[i];
            }
        }
    } else {
        out = e_prime;
    }
    unit_normalize(out);
    return out;
}

// full inference-time pipeline: generator then bound adaptation; the noise
// stream is derived from (cfg.seed, e) so the result is a pure function
inline std::vector<float> protect(const std::vector<float>& e, const PerturbGenerator& g,
                                  const AdaptConfig& cfg) {
    std::vector<float> e_prime = perturb(g, e);
    std::uint64_t h = fnv1a(std::string_view(reinterpret_cast<const char*>(e.data()),
                                             e.size() * sizeof(float)));
    Rng rng(substream_seed(cfg.seed, "adapt") ^ h);
    return adapt(e, e_prime, cfg, rng);
}

}  // namespace entroguard
