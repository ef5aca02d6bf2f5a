// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "gptlab/common.hpp"

namespace gptlab {

// Dense row-major tensor. Default precision is 64-bit; the model stack is
// instantiated for float as well and selected per config.
template <class S>
struct Tens {
    std::vector<std::int64_t> shape;
    std::vector<S> data;

    Tens() = default;
    Tens(std::initializer_list<std::int64_t> dims, S fill = S(0)) {
        shape.assign(dims);
        data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    }
    explicit Tens(std::vector<std::int64_t> dims, S fill = S(0)) : shape(std::move(dims)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& dims) {
        std::int64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    S& operator()(std::int64_t i, std::int64_t j) { return data[std::size_t(i * cols() + j)]; }
    const S& operator()(std::int64_t i, std::int64_t j) const {
        return data[std::size_t(i * cols() + j)];
    }
    S& operator[](std::int64_t i) { return data[std::size_t(i)]; }
    const S& operator[](std::int64_t i) const { return data[std::size_t(i)]; }

    void zero() { std::fill(data.begin(), data.end(), S(0)); }

    bool same_shape(const Tens& other) const { return shape == other.shape; }
};

using Tensor = Tens<double>;

template <class S>
void assert_all_finite(const Tens<S>& t, const std::string& name) {
    for (const S v : t.data) {
        if (!std::isfinite(double(v))) {
            throw NumericError("non-finite value in tensor '" + name + "'");
        }
    }
}

enum class ActKind { Gelu, Swish };

inline ActKind act_kind_from_string(const std::string& s) {
    if (s == "gelu") return ActKind::Gelu;
    if (s == "swish") return ActKind::Swish;
    throw ConfigError("unknown activation kind: '" + s + "'");
}

namespace ops {

// ----------------------------- matmul / affine ----------------------------

template <class S>
void matmul_into(const S* x, const S* w, S* y, std::int64_t n, std::int64_t d_in,
                 std::int64_t d_out) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        S* yr = y + i * d_out;
        for (std::int64_t j = 0; j < d_out; ++j) yr[j] = S(0);
        const S* xr = x + i * d_in;
        for (std::int64_t k = 0; k < d_in; ++k) {
            const S a = xr[k];
            const S* wr = w + k * d_out;
            for (std::int64_t j = 0; j < d_out; ++j) yr[j] += a * wr[j];
        }
    }
}

template <class S>
Tens<S> matmul(const Tens<S>& x, const Tens<S>& w) {
    if (x.shape.size() != 2 || w.shape.size() != 2 || x.shape[1] != w.shape[0]) {
        throw DimensionError("matmul: inner dimensions do not match");
    }
    Tens<S> y({x.shape[0], w.shape[1]});
    matmul_into(x.data.data(), w.data.data(), y.data.data(), x.shape[0], x.shape[1], w.shape[1]);
    return y;
}

// Accumulates dL/dx and dL/dw. Either output may be null.
template <class S>
void matmul_bwd(const S* x, const S* w, const S* dy, S* dx, S* dw, std::int64_t n,
                std::int64_t d_in, std::int64_t d_out) {
    if (dx != nullptr) {
        // dx[i,k] = dot(dy[i,:], w[k,:]); simd reduction keeps the lane
        // order fixed per build, so results stay run-to-run deterministic
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) {
            const S* dyr = dy + i * d_out;
            S* dxr = dx + i * d_in;
            for (std::int64_t k = 0; k < d_in; ++k) {
                const S* wr = w + k * d_out;
                S acc = S(0);
#pragma omp simd reduction(+ : acc)
                for (std::int64_t j = 0; j < d_out; ++j) acc += dyr[j] * wr[j];
                dxr[k] += acc;
            }
        }
    }
    if (dw != nullptr) {
        // dw[k,:] += sum_i x[i,k] * dy[i,:]
#pragma omp parallel for schedule(static)
        for (std::int64_t k = 0; k < d_in; ++k) {
            S* dwr = dw + k * d_out;
            for (std::int64_t i = 0; i < n; ++i) {
                const S a = x[i * d_in + k];
                const S* dyr = dy + i * d_out;
                for (std::int64_t j = 0; j < d_out; ++j) dwr[j] += a * dyr[j];
            }
        }
    }
}

template <class S>
Tens<S> affine(const Tens<S>& x, const Tens<S>& w, const Tens<S>* b = nullptr) {
    Tens<S> y = matmul(x, w);
    if (b != nullptr) {
        if (b->numel() != w.shape[1]) throw DimensionError("affine: bias width mismatch");
        const std::int64_t n = y.shape[0], d = y.shape[1];
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < d; ++j) y(i, j) += b->data[std::size_t(j)];
        }
    }
    return y;
}

template <class S>
void affine_bwd(const Tens<S>& x, const Tens<S>& w, const Tens<S>& dy, Tens<S>* dx, Tens<S>* dw,
                Tens<S>* db = nullptr) {
    if (dy.shape[0] != x.shape[0] || dy.shape[1] != w.shape[1]) {
        throw DimensionError("affine_bwd: dy shape mismatch");
    }
    matmul_bwd(x.data.data(), w.data.data(), dy.data.data(),
               dx != nullptr ? dx->data.data() : nullptr,
               dw != nullptr ? dw->data.data() : nullptr, x.shape[0], x.shape[1], w.shape[1]);
    if (db != nullptr) {
        const std::int64_t n = dy.shape[0], d = dy.shape[1];
        for (std::int64_t j = 0; j < d; ++j) {
            S acc = S(0);
            for (std::int64_t i = 0; i < n; ++i) acc += dy(i, j);
            db->data[std::size_t(j)] += acc;
        }
    }
}

// ----------------------------- layer norm ---------------------------------

template <class S>
struct LayerNormCtx {
    std::vector<S> mean;
    std::vector<S> rstd;
};

template <class S>
Tens<S> layer_norm(const Tens<S>& x, const Tens<S>& gain, const Tens<S>& bias, S eps,
                   LayerNormCtx<S>* ctx = nullptr) {
    const std::int64_t n = x.rows(), d = x.cols();
    if (gain.numel() != d || bias.numel() != d) throw DimensionError("layer_norm: width mismatch");
    Tens<S> y({n, d});
    if (ctx != nullptr) {
        ctx->mean.assign(std::size_t(n), S(0));
        ctx->rstd.assign(std::size_t(n), S(0));
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const S* xr = x.data.data() + i * d;
        S* yr = y.data.data() + i * d;
        S mean = S(0);
        for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
        mean /= S(d);
        S var = S(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const S c = xr[j] - mean;
            var += c * c;
        }
        var /= S(d);
        const S rstd = S(1) / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < d; ++j) {
            yr[j] = (xr[j] - mean) * rstd * gain[j] + bias[j];
        }
        if (ctx != nullptr) {
            ctx->mean[std::size_t(i)] = mean;
            ctx->rstd[std::size_t(i)] = rstd;
        }
    }
    return y;
}

template <class S>
void layer_norm_bwd(const Tens<S>& x, const Tens<S>& gain, const LayerNormCtx<S>& ctx,
                    const Tens<S>& dy, Tens<S>* dx, Tens<S>* dgain, Tens<S>* dbias) {
    const std::int64_t n = x.rows(), d = x.cols();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const S* xr = x.data.data() + i * d;
        const S* dyr = dy.data.data() + i * d;
        const S mean = ctx.mean[std::size_t(i)];
        const S rstd = ctx.rstd[std::size_t(i)];
        S sum_dg = S(0), sum_dg_xhat = S(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const S xhat = (xr[j] - mean) * rstd;
            const S dg = dyr[j] * gain[j];
            sum_dg += dg;
            sum_dg_xhat += dg * xhat;
        }
        if (dx != nullptr) {
            S* dxr = dx->data.data() + i * d;
            for (std::int64_t j = 0; j < d; ++j) {
                const S xhat = (xr[j] - mean) * rstd;
                const S dg = dyr[j] * gain[j];
                dxr[j] += rstd * (dg - sum_dg / S(d) - xhat * sum_dg_xhat / S(d));
            }
        }
    }
    // Serial over rows for the vector grads: deterministic accumulation order.
    if (dgain != nullptr || dbias != nullptr) {
        for (std::int64_t i = 0; i < n; ++i) {
            const S* xr = x.data.data() + i * d;
            const S* dyr = dy.data.data() + i * d;
            const S mean = ctx.mean[std::size_t(i)];
            const S rstd = ctx.rstd[std::size_t(i)];
            for (std::int64_t j = 0; j < d; ++j) {
                const S xhat = (xr[j] - mean) * rstd;
                if (dgain != nullptr) (*dgain)[j] += dyr[j] * xhat;
                if (dbias != nullptr) (*dbias)[j] += dyr[j];
            }
        }
    }
}

// ----------------------------- softmax ------------------------------------

template <class S>
void softmax_row_into(const S* x, S* p, std::int64_t m) {
    S mx = x[0];
    for (std::int64_t j = 1; j < m; ++j) mx = x[j] > mx ? x[j] : mx;
    S denom = S(0);
    for (std::int64_t j = 0; j < m; ++j) {
        p[j] = std::exp(x[j] - mx);
        denom += p[j];
    }
    const S inv = S(1) / denom;
    for (std::int64_t j = 0; j < m; ++j) p[j] *= inv;
}

template <class S>
Tens<S> softmax_rows(const Tens<S>& x) {
    const std::int64_t n = x.rows(), m = x.cols();
    Tens<S> p({n, m});
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        softmax_row_into(x.data.data() + i * m, p.data.data() + i * m, m);
    }
    return p;
}

// dx = p * (dp - sum(dp * p)) per row, accumulated.
template <class S>
void softmax_rows_bwd(const Tens<S>& p, const Tens<S>& dp, Tens<S>* dx) {
    const std::int64_t n = p.rows(), m = p.cols();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const S* pr = p.data.data() + i * m;
        const S* dpr = dp.data.data() + i * m;
        S* dxr = dx->data.data() + i * m;
        S dot = S(0);
        for (std::int64_t j = 0; j < m; ++j) dot += dpr[j] * pr[j];
        for (std::int64_t j = 0; j < m; ++j) dxr[j] += pr[j] * (dpr[j] - dot);
    }
}

// ----------------------------- activations --------------------------------
// GELU uses the exact erf form.

template <class S>
S gelu_scalar(S x) {
    return S(0.5) * x * (S(1) + S(std::erf(double(x) * 0.70710678118654752440)));
}

template <class S>
S gelu_grad_scalar(S x) {
    const double xd = double(x);
    const double cdf = 0.5 * (1.0 + std::erf(xd * 0.70710678118654752440));
    const double pdf = std::exp(-0.5 * xd * xd) * 0.39894228040143267794;
    return S(cdf + xd * pdf);
}

template <class S>
S swish_scalar(S x) {
    const S sig = S(1) / (S(1) + std::exp(-x));
    return x * sig;
}

template <class S>
S swish_grad_scalar(S x) {
    const S sig = S(1) / (S(1) + std::exp(-x));
    return sig * (S(1) + x * (S(1) - sig));
}

template <class S>
Tens<S> activation(ActKind kind, const Tens<S>& x) {
    Tens<S> y(x.shape);
    const std::int64_t n = x.numel();
    if (kind == ActKind::Gelu) {
        for (std::int64_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
    } else {
        for (std::int64_t i = 0; i < n; ++i) y[i] = swish_scalar(x[i]);
    }
    return y;
}

template <class S>
void activation_bwd(ActKind kind, const Tens<S>& x, const Tens<S>& dy, Tens<S>* dx) {
    const std::int64_t n = x.numel();
    if (kind == ActKind::Gelu) {
        for (std::int64_t i = 0; i < n; ++i) (*dx)[i] += dy[i] * gelu_grad_scalar(x[i]);
    } else {
        for (std::int64_t i = 0; i < n; ++i) (*dx)[i] += dy[i] * swish_grad_scalar(x[i]);
    }
}

// ----------------------------- cross entropy ------------------------------

template <class S>
struct CrossEntropyOut {
    std::vector<S> losses;  // per position
    S mean = S(0);
};

template <class S>
CrossEntropyOut<S> cross_entropy(const Tens<S>& logits, const std::vector<std::int32_t>& targets) {
    const std::int64_t n = logits.rows(), v = logits.cols();
    if (std::int64_t(targets.size()) != n) throw DimensionError("cross_entropy: target count");
    CrossEntropyOut<S> out;
    out.losses.assign(std::size_t(n), S(0));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int32_t t = targets[std::size_t(i)];
        if (t < 0 || std::int64_t(t) >= v) {
            throw DataError("cross_entropy: target id " + std::to_string(t) +
                            " out of range [0," + std::to_string(v) + ")");
        }
        const S* lr = logits.data.data() + i * v;
        S mx = lr[0];
        for (std::int64_t j = 1; j < v; ++j) mx = lr[j] > mx ? lr[j] : mx;
        S denom = S(0);
        for (std::int64_t j = 0; j < v; ++j) denom += std::exp(lr[j] - mx);
        out.losses[std::size_t(i)] = std::log(denom) + mx - lr[t];
    }
    S acc = S(0);
    for (const S l : out.losses) acc += l;
    out.mean = n > 0 ? acc / S(n) : S(0);
    return out;
}

// dlogits += scale * (softmax(logits) - onehot(target)) per row.
template <class S>
void cross_entropy_bwd(const Tens<S>& logits, const std::vector<std::int32_t>& targets, S scale,
                       Tens<S>* dlogits) {
    const std::int64_t n = logits.rows(), v = logits.cols();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const S* lr = logits.data.data() + i * v;
        S* dr = dlogits->data.data() + i * v;
        S mx = lr[0];
        for (std::int64_t j = 1; j < v; ++j) mx = lr[j] > mx ? lr[j] : mx;
        S denom = S(0);
        for (std::int64_t j = 0; j < v; ++j) denom += std::exp(lr[j] - mx);
        const S inv = S(1) / denom;
        for (std::int64_t j = 0; j < v; ++j) dr[j] += scale * std::exp(lr[j] - mx) * inv;
        dr[targets[std::size_t(i)]] -= scale;
    }
}

}  // namespace ops
}  // namespace gptlab
