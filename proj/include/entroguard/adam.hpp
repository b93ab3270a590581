#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "entroguard/errors.hpp"
#include "entroguard/tensor.hpp"

namespace entroguard {

// Named trainable tensor. Normalization gains/biases and bias vectors are
// tagged no_decay and skip weight decay.
struct Param {
    std::string name;
    Tensor tensor;
    bool no_decay = false;
};

using Params = std::vector<Param>;

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
    // linear decay of lr to 0 over total_steps; 0 disables the schedule
    int total_steps = 0;
};

struct AdamState {
    AdamConfig cfg;
    int step = 0;
    std::vector<std::vector<float>> m, v;

    explicit AdamState(AdamConfig c = {}) : cfg(c) {}
};

inline float effective_lr(const AdamState& state, int step) {
    if (state.cfg.total_steps <= 0) return state.cfg.lr;
    float frac = 1.0f - static_cast<float>(step) / static_cast<float>(state.cfg.total_steps);
    if (frac < 0.0f) frac = 0.0f;
    return state.cfg.lr * frac;
}

// Decoupled-weight-decay Adam. Grads must be populated; they are zeroed after
// the update and the step counter is incremented by exactly one.
inline void adam_step(Params& params, AdamState& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].tensor.size(), 0.0f);
            state.v[i].assign(params[i].tensor.size(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam state/param count mismatch");

    const float lr = effective_lr(state, state.step);
    const int t = state.step + 1;
    const double bc1 = 1.0 - std::pow(double(state.cfg.beta1), t);
    const double bc2 = 1.0 - std::pow(double(state.cfg.beta2), t);

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].tensor;
        auto impl = p.impl();
        if (impl->grad.size() != impl->value.size())
            throw ContractError("adam_step: missing grad for " + params[i].name);
        if (state.m[i].size() != p.size()) throw ContractError("adam moment shape mismatch");
        for (std::size_t j = 0; j < p.size(); ++j) {
            const float g = impl->grad[j];
            state.m[i][j] = state.cfg.beta1 * state.m[i][j] + (1.0f - state.cfg.beta1) * g;
            state.v[i][j] = state.cfg.beta2 * state.v[i][j] + (1.0f - state.cfg.beta2) * g * g;
            const double mhat = state.m[i][j] / bc1;
            const double vhat = state.v[i][j] / bc2;
            double upd = lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
            if (!params[i].no_decay)
                upd += double(lr) * double(state.cfg.weight_decay) * double(impl->value[j]);
            impl->value[j] = static_cast<float>(impl->value[j] - upd);
        }
        p.zero_grad();
    }
    ++state.step;
}

inline void zero_grads(Params& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace entroguard
