#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "entroguard/errors.hpp"
#include "entroguard/rng.hpp"

namespace entroguard {

// Dense float32 tensor with reverse-mode autodiff over a per-thread tape.
// Reductions accumulate in double to bound drift; storage stays float32.
//
// A Tensor is a shared handle; ops record their backward rule on the tape
// when gradients are enabled and any input requires grad. backward() replays
// the tape in reverse execution order and clears it.

struct TensorImpl {
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;  // allocated lazily, same length as value
    bool requires_grad = false;

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImpl>();
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw DimensionError("tensor extent must be positive");
            n *= static_cast<std::size_t>(d);
        }
        impl->shape = std::move(shape);
        impl->value.assign(n, 0.0f);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor from(std::vector<int> shape, std::vector<float> data, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        if (data.size() != t.size()) throw DimensionError("data length does not match shape");
        t.impl_->value = std::move(data);
        return t;
    }

    static Tensor scalar(float v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static Tensor randn(Rng& rng, std::vector<int> shape, float stddev, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (float& x : t.impl_->value) x = static_cast<float>(rng.normal(0.0, stddev));
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    std::size_t size() const { return impl_->value.size(); }
    std::vector<float>& data() { return impl_->value; }
    const std::vector<float>& data() const { return impl_->value; }
    std::vector<float>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) { impl_->requires_grad = b; }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }

    float item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor");
        return impl_->value[0];
    }

    int rows() const { return impl_->shape.size() >= 1 ? impl_->shape[0] : 1; }
    int cols() const {
        if (impl_->shape.size() == 1) return impl_->shape[0];
        if (impl_->shape.size() == 2) return impl_->shape[1];
        throw DimensionError("rows/cols only defined for rank <= 2");
    }

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

struct Tape {
    std::vector<std::function<void()>> nodes;
    bool enabled = true;
};

inline Tape& tape() {
    thread_local Tape t;
    return t;
}

inline bool tracking(const Tensor& a) {
    return tape().enabled && a.requires_grad();
}

inline void record(std::function<void()> fn) { tape().nodes.push_back(std::move(fn)); }

}  // namespace detail

// Disables tape recording within a scope (inference paths).
struct NoGrad {
    NoGrad() : prev_(detail::tape().enabled) { detail::tape().enabled = false; }
    ~NoGrad() { detail::tape().enabled = prev_; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    bool prev_;
};

inline std::size_t tape_size() { return detail::tape().nodes.size(); }
inline void clear_tape() { detail::tape().nodes.clear(); }

// grad of `loss` w.r.t. every requires_grad leaf; tape is cleared afterward.
inline void backward(Tensor loss) {
    if (loss.size() != 1) throw ContractError("backward() requires a scalar loss");
    loss.grad()[0] += 1.0f;
    auto& nodes = detail::tape().nodes;
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) (*it)();
    nodes.clear();
}

// ---------------------------------------------------------------------------
// ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw DimensionError("matmul expects rank-2 tensors");
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) throw DimensionError("matmul inner extents differ");
    Tensor out = Tensor::zeros({m, n});
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += double(pa[i * k + t]) * double(pb[t * n + j]);
            po[i * n + j] = static_cast<float>(acc);
        }
    }
    if (detail::tracking(a) || detail::tracking(b)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record([ai, bi, oi, m, k, n] {
            const float* go = oi->grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j)
                            acc += double(go[i * n + j]) * double(bi->value[t * n + j]);
                        ai->grad[i * k + t] += static_cast<float>(acc);
                    }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int t = 0; t < k; ++t)
                    for (int j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i)
                            acc += double(ai->value[i * k + t]) * double(go[i * n + j]);
                        bi->grad[t * n + j] += static_cast<float>(acc);
                    }
            }
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) throw DimensionError("transpose expects rank-2");
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
    if (detail::tracking(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        detail::record([ai, oi, m, n] {
            ai->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ai->grad[i * n + j] += oi->grad[j * m + i];
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("add shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (detail::tracking(a) || detail::tracking(b)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record([ai, bi, oi] {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
            }
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("sub shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (detail::tracking(a) || detail::tracking(b)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record([ai, bi, oi] {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] -= oi->grad[i];
            }
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("mul shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (detail::tracking(a) || detail::tracking(b)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record([ai, bi, oi] {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i)
                    ai->grad[i] += oi->grad[i] * bi->value[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i)
                    bi->grad[i] += oi->grad[i] * ai->value[i];
            }
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor scale(const Tensor& a, float c) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
    if (detail::tracking(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        detail::record([ai, oi, c] {
            ai->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * c;
        });
        oi->ensure_grad();
    }
    return out;
}

// a{m,n} + row{n} broadcast over rows
inline Tensor add_row(const Tensor& a, const Tensor& row) {
    if (a.shape().size() != 2) throw DimensionError("add_row expects rank-2 lhs");
    const int m = a.shape()[0], n = a.shape()[1];
    if (static_cast<int>(row.size()) != n) throw DimensionError("add_row width mismatch");
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data()[i * n + j] = a.data()[i * n + j] + row.data()[j];
    if (detail::tracking(a) || detail::tracking(row)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), ri = row.impl(), oi = out.impl();
        detail::record([ai, ri, oi, m, n] {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
            }
            if (ri->requires_grad) {
                ri->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) ri->grad[j] += oi->grad[i * n + j];
            }
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] > 0 ? a.data()[i] : 0.0f;
    if (detail::tracking(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        detail::record([ai, oi] {
            ai->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                if (ai->value[i] > 0) ai->grad[i] += oi->grad[i];
        });
        oi->ensure_grad();
    }
    return out;
}

// natural log, elementwise; caller guarantees positive inputs
inline Tensor log(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a.data()[i] > 0.0f)) throw NumericError("log of non-positive value");
        out.data()[i] = std::log(a.data()[i]);
    }
    if (detail::tracking(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        detail::record([ai, oi] {
            ai->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                ai->grad[i] += oi->grad[i] / ai->value[i];
        });
        oi->ensure_grad();
    }
    return out;
}

// elementwise x*ln(x) with x*ln(x) -> 0 as x -> 0; used by entropy terms on
// probability rows where float underflow can produce exact zeros
inline Tensor xlogx(const Tensor& a) {
    constexpr float kEps = 1e-12f;
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const float x = a.data()[i];
        out.data()[i] = x <= kEps ? 0.0f : x * std::log(x);
    }
    if (detail::tracking(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        detail::record([ai, oi] {
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                const float x = ai->value[i];
                if (x > kEps) {
                    ai->ensure_grad();
                    ai->grad[i] += oi->grad[i] * (std::log(x) + 1.0f);
                }
            }
        });
        oi->ensure_grad();
    }
    return out;
}

// row-wise softmax with max-subtraction; rows sum to 1 within 1e-6
inline Tensor softmax_rows(const Tensor& a) {
    if (a.shape().size() != 2) throw DimensionError("softmax_rows expects rank-2");
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < m; ++i) {
        const float* x = a.data().data() + std::size_t(i) * n;
        float* y = out.data().data() + std::size_t(i) * n;
        float mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        if (!std::isfinite(mx)) throw NumericError("softmax on non-finite input");
        double denom = 0.0;
        for (int j = 0; j < n; ++j) denom += std::exp(double(x[j]) - double(mx));
        for (int j = 0; j < n; ++j)
            y[j] = static_cast<float>(std::exp(double(x[j]) - double(mx)) / denom);
    }
    if (detail::tracking(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        detail::record([ai, oi, m, n] {
            ai->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const float* y = oi->value.data() + std::size_t(i) * n;
                const float* g = oi->grad.data() + std::size_t(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += double(g[j]) * double(y[j]);
                for (int j = 0; j < n; ++j)
                    ai->grad[std::size_t(i) * n + j] +=
                        static_cast<float>((double(g[j]) - dot) * double(y[j]));
            }
        });
        oi->ensure_grad();
    }
    return out;
}

// per-row zero-mean unit-variance then affine; epsilon 1e-5 inside the sqrt
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (x.shape().size() != 2) throw DimensionError("layernorm expects rank-2");
    const int m = x.shape()[0], n = x.shape()[1];
    if (n == 0) throw DimensionError("layernorm over empty row");
    if (static_cast<int>(gain.size()) != n || static_cast<int>(bias.size()) != n)
        throw DimensionError("layernorm affine size mismatch");
    constexpr double kEps = 1e-5;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<float> inv_std(m), means(m);
    for (int i = 0; i < m; ++i) {
        const float* row = x.data().data() + std::size_t(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= n;
        double is = 1.0 / std::sqrt(var + kEps);
        means[i] = static_cast<float>(mean);
        inv_std[i] = static_cast<float>(is);
        for (int j = 0; j < n; ++j)
            out.data()[std::size_t(i) * n + j] =
                static_cast<float>((row[j] - mean) * is * gain.data()[j] + bias.data()[j]);
    }
    if (detail::tracking(x) || detail::tracking(gain) || detail::tracking(bias)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
        detail::record([xi, gi, bi, oi, m, n, inv_std, means] {
            for (int i = 0; i < m; ++i) {
                const float* row = xi->value.data() + std::size_t(i) * n;
                const float* g = oi->grad.data() + std::size_t(i) * n;
                const double is = inv_std[i], mean = means[i];
                if (bi->requires_grad) {
                    bi->ensure_grad();
                    for (int j = 0; j < n; ++j) bi->grad[j] += g[j];
                }
                if (gi->requires_grad) {
                    gi->ensure_grad();
                    for (int j = 0; j < n; ++j)
                        gi->grad[j] += static_cast<float>(g[j] * (row[j] - mean) * is);
                }
                if (xi->requires_grad) {
                    xi->ensure_grad();
                    // d/dx of (x - mean)*inv_std through mean and var
                    double sum_gy = 0.0, sum_gyx = 0.0;
                    for (int j = 0; j < n; ++j) {
                        double gy = double(g[j]) * double(gi->value[j]);
                        sum_gy += gy;
                        sum_gyx += gy * (row[j] - mean) * is;
                    }
                    for (int j = 0; j < n; ++j) {
                        double gy = double(g[j]) * double(gi->value[j]);
                        double xhat = (row[j] - mean) * is;
                        xi->grad[std::size_t(i) * n + j] += static_cast<float>(
                            is * (gy - sum_gy / n - xhat * sum_gyx / n));
                    }
                }
            }
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (detail::tracking(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        detail::record([ai, oi] {
            ai->ensure_grad();
            for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[0];
        });
        oi->ensure_grad();
    }
    return out;
}

// scalar = a . b / (|a| |b|), both treated as flat vectors
inline Tensor cosine(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DimensionError("cosine size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a.data()[i]) * double(b.data()[i]);
        na += double(a.data()[i]) * double(a.data()[i]);
        nb += double(b.data()[i]) * double(b.data()[i]);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na <= 0.0 || nb <= 0.0) throw NumericError("cosine of zero vector");
    const double c = dot / (na * nb);
    Tensor out = Tensor::scalar(static_cast<float>(c));
    if (detail::tracking(a) || detail::tracking(b)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record([ai, bi, oi, na, nb, c] {
            const double g = oi->grad[0];
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < ai->grad.size(); ++i)
                    ai->grad[i] += static_cast<float>(
                        g * (double(bi->value[i]) / (na * nb) - c * double(ai->value[i]) / (na * na)));
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < bi->grad.size(); ++i)
                    bi->grad[i] += static_cast<float>(
                        g * (double(ai->value[i]) / (na * nb) - c * double(bi->value[i]) / (nb * nb)));
            }
        });
        oi->ensure_grad();
    }
    return out;
}

// L2-normalize each row of a{m,n}
inline Tensor l2_normalize_rows(const Tensor& a) {
    if (a.shape().size() != 2) throw DimensionError("l2_normalize_rows expects rank-2");
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor out = Tensor::zeros(a.shape());
    std::vector<double> norms(m);
    for (int i = 0; i < m; ++i) {
        const float* row = a.data().data() + std::size_t(i) * n;
        double nn = 0.0;
        for (int j = 0; j < n; ++j) nn += double(row[j]) * double(row[j]);
        nn = std::sqrt(nn);
        if (nn <= 0.0) throw NumericError("normalize of zero row");
        norms[i] = nn;
        for (int j = 0; j < n; ++j)
            out.data()[std::size_t(i) * n + j] = static_cast<float>(row[j] / nn);
    }
    if (detail::tracking(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        detail::record([ai, oi, m, n, norms] {
            ai->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const float* y = oi->value.data() + std::size_t(i) * n;
                const float* g = oi->grad.data() + std::size_t(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += double(g[j]) * double(y[j]);
                for (int j = 0; j < n; ++j)
                    ai->grad[std::size_t(i) * n + j] +=
                        static_cast<float>((double(g[j]) - dot * double(y[j])) / norms[i]);
            }
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    if (a.shape().size() != 2) throw DimensionError("slice_cols expects rank-2");
    const int m = a.shape()[0], n = a.shape()[1];
    if (c0 < 0 || c1 > n || c0 >= c1) throw DimensionError("bad column range");
    const int w = c1 - c0;
    Tensor out = Tensor::zeros({m, w});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            out.data()[std::size_t(i) * w + j] = a.data()[std::size_t(i) * n + c0 + j];
    if (detail::tracking(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        detail::record([ai, oi, m, n, w, c0] {
            ai->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    ai->grad[std::size_t(i) * n + c0 + j] += oi->grad[std::size_t(i) * w + j];
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols of nothing");
    const int m = parts[0].shape()[0];
    int n = 0;
    bool track = false;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.shape()[0] != m)
            throw DimensionError("concat_cols row mismatch");
        n += p.shape()[1];
        track = track || detail::tracking(p);
    }
    Tensor out = Tensor::zeros({m, n});
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.shape()[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                out.data()[std::size_t(i) * n + off + j] = p.data()[std::size_t(i) * w + j];
        off += w;
    }
    if (track) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl>> impls;
        impls.reserve(parts.size());
        for (const auto& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        detail::record([impls, oi, m, n] {
            int off = 0;
            for (auto& pi : impls) {
                const int w = pi->shape[1];
                if (pi->requires_grad) {
                    pi->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            pi->grad[std::size_t(i) * w + j] += oi->grad[std::size_t(i) * n + off + j];
                }
                off += w;
            }
        });
        oi->ensure_grad();
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows of nothing");
    const int n = parts[0].shape()[1];
    int m = 0;
    bool track = false;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.shape()[1] != n)
            throw DimensionError("concat_rows width mismatch");
        m += p.shape()[0];
        track = track || detail::tracking(p);
    }
    Tensor out = Tensor::zeros({m, n});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
        off += p.size();
    }
    if (track) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl>> impls;
        for (const auto& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        detail::record([impls, oi] {
            std::size_t off = 0;
            for (auto& pi : impls) {
                if (pi->requires_grad) {
                    pi->ensure_grad();
                    for (std::size_t i = 0; i < pi->grad.size(); ++i)
                        pi->grad[i] += oi->grad[off + i];
                }
                off += pi->value.size();
            }
        });
        oi->ensure_grad();
    }
    return out;
}

// stack scalar tensors into a {1,n} row
inline Tensor concat_scalars(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_scalars of nothing");
    Tensor out = Tensor::zeros({1, static_cast<int>(parts.size())});
    bool track = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (parts[i].size() != 1) throw DimensionError("concat_scalars expects scalars");
        out.data()[i] = parts[i].data()[0];
        track = track || detail::tracking(parts[i]);
    }
    if (track) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl>> impls;
        for (const auto& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        detail::record([impls, oi] {
            for (std::size_t i = 0; i < impls.size(); ++i)
                if (impls[i]->requires_grad) {
                    impls[i]->ensure_grad();
                    impls[i]->grad[0] += oi->grad[i];
                }
        });
        oi->ensure_grad();
    }
    return out;
}

// rows of `table` gathered by id; gradient scatter-adds into the table
inline Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.shape().size() != 2) throw DimensionError("embed_rows expects rank-2 table");
    const int v = table.shape()[0], d = table.shape()[1];
    const int u = static_cast<int>(ids.size());
    if (u == 0) throw DimensionError("embed_rows of empty id list");
    Tensor out = Tensor::zeros({u, d});
    for (int i = 0; i < u; ++i) {
        if (ids[i] < 0 || ids[i] >= v) throw IndexError("token id out of range");
        for (int j = 0; j < d; ++j)
            out.data()[std::size_t(i) * d + j] = table.data()[std::size_t(ids[i]) * d + j];
    }
    if (detail::tracking(table)) {
        out.set_requires_grad(true);
        auto ti = table.impl(), oi = out.impl();
        detail::record([ti, oi, ids, u, d] {
            ti->ensure_grad();
            for (int i = 0; i < u; ++i)
                for (int j = 0; j < d; ++j)
                    ti->grad[std::size_t(ids[i]) * d + j] += oi->grad[std::size_t(i) * d + j];
        });
        oi->ensure_grad();
    }
    return out;
}

// mean over unmasked positions of -log softmax(logits)[target]; natural log
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<bool>& mask = {}) {
    if (logits.shape().size() != 2) throw DimensionError("cross_entropy expects rank-2 logits");
    const int u = logits.shape()[0], v = logits.shape()[1];
    if (static_cast<int>(targets.size()) != u) throw DimensionError("targets length mismatch");
    if (!mask.empty() && static_cast<int>(mask.size()) != u)
        throw DimensionError("mask length mismatch");
    // cache row softmax for the backward pass
    std::vector<float> probs(std::size_t(u) * v);
    double total = 0.0;
    int count = 0;
    for (int i = 0; i < u; ++i) {
        if (targets[i] < 0 || targets[i] >= v) throw IndexError("target id out of range");
        const float* x = logits.data().data() + std::size_t(i) * v;
        float mx = x[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (int j = 0; j < v; ++j) denom += std::exp(double(x[j]) - double(mx));
        for (int j = 0; j < v; ++j)
            probs[std::size_t(i) * v + j] =
                static_cast<float>(std::exp(double(x[j]) - double(mx)) / denom);
        if (mask.empty() || mask[i]) {
            total += -(double(x[targets[i]]) - double(mx) - std::log(denom));
            ++count;
        }
    }
    if (count == 0) throw ContractError("cross_entropy with all positions masked");
    Tensor out = Tensor::scalar(static_cast<float>(total / count));
    if (detail::tracking(logits)) {
        out.set_requires_grad(true);
        auto li = logits.impl(), oi = out.impl();
        detail::record([li, oi, probs = std::move(probs), targets, mask, u, v, count] {
            li->ensure_grad();
            const float g = oi->grad[0] / count;
            for (int i = 0; i < u; ++i) {
                if (!mask.empty() && !mask[i]) continue;
                for (int j = 0; j < v; ++j)
                    li->grad[std::size_t(i) * v + j] += g * probs[std::size_t(i) * v + j];
                li->grad[std::size_t(i) * v + targets[i]] -= g;
            }
        });
        oi->ensure_grad();
    }
    return out;
}

}  // namespace entroguard
