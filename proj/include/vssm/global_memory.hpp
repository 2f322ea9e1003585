#pragma once

// Compressed global memory: gates, evicted-block summaries, the gated delta-rule
// state update and gated retrieval.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <span>
#include <vector>

#include "vssm/kernels.hpp"
#include "vssm/matrix.hpp"
#include "vssm/rolling_cache.hpp"

namespace vssm {

inline constexpr float kMemoryNormEps = 1e-6f;
inline constexpr double kKeyNormFloor = 1e-8;

struct GateParams {
    Matrix w_beta;
    Matrix w_alpha;
    Vector a;
    Vector b;
};

struct Gates {
    Matrix alpha;  // decay, < 0
    Matrix beta;   // injection, in (0, 1)
};

inline Gates compute_gates(const Matrix& x, const GateParams& p) {
    require(x.cols == p.w_beta.rows && x.cols == p.w_alpha.rows, "compute_gates: input width mismatch");
    require(p.a.size() == p.w_alpha.cols && p.b.size() == p.w_alpha.cols, "compute_gates: A/B length mismatch");
    Gates g;
    // Float sigmoid/softplus saturate to exactly 1 or 0 for large inputs; the
    // clamps keep beta in (0, 1) and alpha < 0.
    constexpr float beta_hi = 1.0f - std::numeric_limits<float>::epsilon() / 2;
    constexpr float beta_lo = std::numeric_limits<float>::min();
    constexpr float alpha_hi = -std::numeric_limits<float>::min();
    g.beta = linear(x, p.w_beta);
    for (float& v : g.beta.data) v = std::clamp(sigmoid(v), beta_lo, beta_hi);
    g.alpha = linear(x, p.w_alpha, p.b);
    for (std::size_t r = 0; r < g.alpha.rows; ++r) {
        auto row = g.alpha.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] = std::min(static_cast<float>(-std::exp(static_cast<double>(p.a[j])) * softplus(row[j])), alpha_hi);
        }
    }
    return g;
}

struct EvictedSummary {
    Vector key;
    Vector value;
    Vector alpha;
    Vector beta;
};

namespace detail {
inline Vector column_mean(const Matrix& m) {
    Vector out(m.cols);
    for (std::size_t j = 0; j < m.cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m.rows; ++i) acc += m(i, j);
        out[j] = static_cast<float>(acc / static_cast<double>(m.rows));
    }
    return out;
}
}  // namespace detail

/// Token-average of an evicted block. Uses the pre-rotary keys: the memory has
/// no positional axis.
inline EvictedSummary summarize_evicted(const BlockEntry& block) {
    require(block.tokens() >= 1, "summarize_evicted: block has no tokens");
    return {detail::column_mean(block.raw_keys), detail::column_mean(block.values), detail::column_mean(block.alpha),
            detail::column_mean(block.beta)};
}

/// Per-head d_h x d_h state; rows index key dimensions, columns value dimensions.
class MemoryState {
public:
    MemoryState() = default;
    MemoryState(std::size_t heads, std::size_t head_dim)
        : heads_(heads), head_dim_(head_dim), state_(heads, Matrix(head_dim, head_dim)) {
        require(heads >= 1 && head_dim >= 1, "MemoryState: heads and head_dim must be >= 1");
    }

    std::size_t heads() const { return heads_; }
    std::size_t head_dim() const { return head_dim_; }
    std::size_t width() const { return heads_ * head_dim_; }
    std::size_t updates_applied() const { return updates_applied_; }

    const Matrix& head(std::size_t h) const { return state_.at(h); }
    Matrix& head(std::size_t h) { return state_.at(h); }

    bool all_finite() const {
        for (const auto& m : state_) {
            if (!m.all_finite()) return false;
        }
        return true;
    }

    bool is_zero() const {
        for (const auto& m : state_) {
            for (float v : m.data) {
                if (v != 0.0f) return false;
            }
        }
        return true;
    }

    double frobenius() const {
        double acc = 0.0;
        for (const auto& m : state_) {
            const double f = frobenius_norm(m);
            acc += f * f;
        }
        return std::sqrt(acc);
    }

    void clear() {
        for (auto& m : state_) std::fill(m.data.begin(), m.data.end(), 0.0f);
        updates_applied_ = 0;
    }

    /// Gated delta-rule step, per head:
    ///   k^ = k / max(|k|, 1e-8)
    ///   v_new = beta * (v - k^T M)
    ///   M <- diag(exp(alpha)) M + k^ v_new^T
    void update(const EvictedSummary& s) {
        const std::size_t d = width();
        require(s.key.size() == d && s.value.size() == d && s.alpha.size() == d && s.beta.size() == d,
                "MemoryState::update: summary width mismatch");
        const std::size_t dh = head_dim_;
        std::vector<double> khat(dh);
        std::vector<double> vnew(dh);
        for (std::size_t h = 0; h < heads_; ++h) {
            Matrix& m = state_[h];
            const std::size_t off = h * dh;
            double norm = 0.0;
            for (std::size_t i = 0; i < dh; ++i) norm += static_cast<double>(s.key[off + i]) * s.key[off + i];
            norm = std::max(std::sqrt(norm), kKeyNormFloor);
            for (std::size_t i = 0; i < dh; ++i) khat[i] = s.key[off + i] / norm;
            for (std::size_t j = 0; j < dh; ++j) {
                double pred = 0.0;
                for (std::size_t i = 0; i < dh; ++i) pred += khat[i] * m(i, j);
                vnew[j] = static_cast<double>(s.beta[off + j]) * (static_cast<double>(s.value[off + j]) - pred);
            }
            for (std::size_t i = 0; i < dh; ++i) {
                const double decay = std::exp(static_cast<double>(s.alpha[off + i]));
                for (std::size_t j = 0; j < dh; ++j) {
                    m(i, j) = static_cast<float>(decay * m(i, j) + khat[i] * vnew[j]);
                }
            }
        }
        ++updates_applied_;
    }

    /// r = q^T M per head, concatenated. `q` has length heads*head_dim.
    Vector read(std::span<const float> q) const {
        require(q.size() == width(), "MemoryState::read: query width mismatch");
        Vector r(width());
        const std::size_t dh = head_dim_;
        for (std::size_t h = 0; h < heads_; ++h) {
            const Matrix& m = state_[h];
            for (std::size_t j = 0; j < dh; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < dh; ++i) acc += static_cast<double>(q[h * dh + i]) * m(i, j);
                r[h * dh + j] = static_cast<float>(acc);
            }
        }
        return r;
    }

    friend bool operator==(const MemoryState&, const MemoryState&) = default;

    static MemoryState restore(std::size_t heads, std::size_t head_dim, std::vector<Matrix> state,
                               std::size_t updates_applied) {
        MemoryState m(heads, head_dim);
        require(state.size() == heads, "MemoryState::restore: head count mismatch");
        for (const auto& s : state) {
            require(s.rows == head_dim && s.cols == head_dim, "MemoryState::restore: head shape mismatch");
        }
        m.state_ = std::move(state);
        m.updates_applied_ = updates_applied;
        return m;
    }

private:
    std::size_t heads_ = 0;
    std::size_t head_dim_ = 0;
    std::vector<Matrix> state_;
    std::size_t updates_applied_ = 0;
};

inline MemoryState update_memory(MemoryState state, const EvictedSummary& s) {
    state.update(s);
    return state;
}

/// Rebuilds a state from M = 0 by folding every summary in order.
inline MemoryState fold_memory(std::size_t heads, std::size_t head_dim, std::span<const EvictedSummary> summaries) {
    MemoryState m(heads, head_dim);
    for (const auto& s : summaries) m.update(s);
    return m;
}

struct OutputGateParams {
    Matrix w;
    Vector bias;
    Vector rms_gain;
};

/// H_global = swish(g_out * rmsnorm(q^T M)), g_out = x W_g + b_g. `q_raw` is the
/// pre-rotary query.
inline Matrix retrieve(const MemoryState& state, const Matrix& q_raw, const Matrix& x, const OutputGateParams& p,
                       float eps = kMemoryNormEps) {
    require(q_raw.cols == state.width(), "retrieve: query width mismatch");
    require(q_raw.rows == x.rows, "retrieve: query/input row mismatch");
    const Matrix g = linear(x, p.w, p.bias);
    Matrix out(q_raw.rows, q_raw.cols);
    for (std::size_t r = 0; r < q_raw.rows; ++r) {
        const Vector response = rmsnorm(state.read(q_raw.row(r)), p.rms_gain, eps);
        auto orow = out.row(r);
        for (std::size_t j = 0; j < orow.size(); ++j) orow[j] = swish(g(r, j) * response[j]);
    }
    return out;
}

}  // namespace vssm
