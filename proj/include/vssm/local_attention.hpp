#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "vssm/kernels.hpp"
#include "vssm/matrix.hpp"
#include "vssm/rolling_cache.hpp"

namespace vssm {

struct AttentionWeights {
    Matrix wq;
    Matrix wk;
    Matrix wv;
    Matrix wo;
    std::size_t heads = 1;

    std::size_t width() const { return wq.rows; }
    std::size_t head_dim() const { return wq.rows / heads; }
};

/// Rotated Q/K for attention plus the pre-rotary copies the memory path uses.
struct Projections {
    Matrix q;
    Matrix k;
    Matrix v;
    Matrix q_raw;
    Matrix k_raw;
};

inline Projections project_qkv(const Matrix& x, const AttentionWeights& w, std::span<const std::size_t> positions,
                               float rope_base = kRopeBase) {
    require(w.heads > 0 && w.width() % w.heads == 0, "project_qkv: width must be divisible by head count");
    require(x.cols == w.width(), "project_qkv: input width mismatch");
    Projections p;
    p.q_raw = linear(x, w.wq);
    p.k_raw = linear(x, w.wk);
    p.v = linear(x, w.wv);
    p.q = p.q_raw;
    p.k = p.k_raw;
    rope_rows_inplace(p.q, w.heads, positions, rope_base);
    rope_rows_inplace(p.k, w.heads, positions, rope_base);
    return p;
}

struct AttentionCounters {
    std::size_t key_comparisons = 0;
};

/// Multi-head attention of `q` over a gathered key/value set. A key is visible
/// to a query when its position is <= the query's position, which gives full
/// visibility of cached blocks and a lower-triangular mask inside the chunk.
/// Returns the concatenated heads before output projection.
inline Matrix masked_attention_heads(const Matrix& q, std::span<const std::size_t> q_positions, const Matrix& keys,
                                     const Matrix& values, std::span<const std::size_t> key_positions,
                                     std::size_t heads, AttentionCounters* counters = nullptr) {
    require(q.cols == keys.cols && keys.cols == values.cols, "attention: width mismatch");
    require(keys.rows == values.rows && keys.rows == key_positions.size(), "attention: key/value count mismatch");
    require(q.rows == q_positions.size(), "attention: query position count mismatch");
    require(heads > 0 && q.cols % heads == 0, "attention: width must be divisible by head count");
    const std::size_t dh = q.cols / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix out(q.rows, q.cols);
    std::vector<double> scores(keys.rows);
    std::vector<double> acc(dh);
    for (std::size_t i = 0; i < q.rows; ++i) {
        bool any_visible = false;
        for (std::size_t j = 0; j < keys.rows; ++j) any_visible |= key_positions[j] <= q_positions[i];
        require(any_visible, "attention: query has no visible keys");
        for (std::size_t h = 0; h < heads; ++h) {
            const auto qh = q.row(i).subspan(h * dh, dh);
            double peak = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < keys.rows; ++j) {
                if (key_positions[j] > q_positions[i]) continue;
                scores[j] = dot(qh, keys.row(j).subspan(h * dh, dh)) * scale;
                peak = std::max(peak, scores[j]);
            }
            double total = 0.0;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t j = 0; j < keys.rows; ++j) {
                if (key_positions[j] > q_positions[i]) continue;
                const double e = std::exp(scores[j] - peak);
                total += e;
                const auto vh = values.row(j).subspan(h * dh, dh);
                for (std::size_t d = 0; d < dh; ++d) acc[d] += e * vh[d];
            }
            auto oh = out.row(i).subspan(h * dh, dh);
            for (std::size_t d = 0; d < dh; ++d) oh[d] = static_cast<float>(acc[d] / total);
        }
    }
    if (counters != nullptr) counters->key_comparisons += q.rows * keys.rows;
    return out;
}

/// Local-memory attention: `q` from the current chunk against the cache's sink
/// and window, which must already contain the current chunk.
inline Matrix window_attention(const Matrix& q, std::span<const std::size_t> q_positions, const LocalView& local,
                               std::size_t heads, const Matrix& wo, AttentionCounters* counters = nullptr) {
    return linear(masked_attention_heads(q, q_positions, local.keys, local.values, local.positions, heads, counters), wo);
}

inline Matrix window_attention(const Matrix& q, std::span<const std::size_t> q_positions, const RollingCache& cache,
                               std::size_t heads, const Matrix& wo, AttentionCounters* counters = nullptr) {
    return window_attention(q, q_positions, cache.gather_local(), heads, wo, counters);
}

/// Reference causal attention over a fully materialized sequence: builds the
/// whole masked score matrix per head and softmaxes each row. Row i attends to
/// rows 0..i.
inline Matrix full_causal_attention_oracle(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                                           const Matrix& wo) {
    require(q.rows == k.rows && k.rows == v.rows, "full_causal_attention_oracle: sequence length mismatch");
    require(q.cols == k.cols && k.cols == v.cols, "full_causal_attention_oracle: width mismatch");
    require(heads > 0 && q.cols % heads == 0, "full_causal_attention_oracle: width must be divisible by heads");
    const std::size_t n = q.rows;
    const std::size_t dh = q.cols / heads;
    const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
    Matrix heads_out(n, q.cols);
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix scores(n, n, -std::numeric_limits<float>::infinity());
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                scores(i, j) = static_cast<float>(dot(q.row(i).subspan(h * dh, dh), k.row(j).subspan(h * dh, dh))) * scale;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto weights = stable_softmax(scores.row(i));
            for (std::size_t d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j <= i; ++j) acc += static_cast<double>(weights[j]) * v(j, h * dh + d);
                heads_out(i, h * dh + d) = static_cast<float>(acc);
            }
        }
    }
    return linear(heads_out, wo);
}

}  // namespace vssm
