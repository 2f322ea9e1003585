#pragma once

// The hybrid memory block (local window attention + compressed global memory +
// position-aware router), the streaming engine that stacks it, and two
// non-incremental oracles used to check the engine.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "vssm/config.hpp"
#include "vssm/global_memory.hpp"
#include "vssm/kernels.hpp"
#include "vssm/local_attention.hpp"
#include "vssm/matrix.hpp"
#include "vssm/rolling_cache.hpp"
#include "vssm/router.hpp"
#include "vssm/weights.hpp"

namespace vssm {

inline constexpr float kNormEps = 1e-6f;

enum class MemoryMode {
    hybrid,      // local attention fused with global memory
    local_only,  // global path skipped entirely; sink + window attention only
};

struct EngineOptions {
    MemoryMode mode = MemoryMode::hybrid;
    std::optional<float> gamma_override;  // replaces the router output when set
};

struct LayerState {
    RollingCache cache;
    MemoryState memory;

    friend bool operator==(const LayerState&, const LayerState&) = default;
};

struct EngineState {
    ModelConfig config;
    std::vector<LayerState> layers;
    std::size_t chunks_consumed = 0;

    friend bool operator==(const EngineState&, const EngineState&) = default;
};

inline EngineState make_engine_state(const ModelConfig& config) {
    config.validate();
    EngineState s;
    s.config = config;
    s.layers.reserve(config.layers);
    for (std::size_t l = 0; l < config.layers; ++l) {
        s.layers.push_back({RollingCache(config.cache()), MemoryState(config.heads, config.head_dim())});
    }
    return s;
}

struct StepStats {
    std::size_t key_comparisons = 0;  // summed over layers
    std::size_t memory_updates = 0;   // summed over layers
    std::size_t cached_tokens = 0;    // max over layers, after the step
};

inline std::vector<std::size_t> chunk_positions(std::size_t chunk_index, std::size_t chunk_size) {
    std::vector<std::size_t> pos(chunk_size);
    for (std::size_t i = 0; i < chunk_size; ++i) pos[i] = chunk_index * chunk_size + i;
    return pos;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows && a.cols == b.cols, "add: shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Matrix feed_forward(const Matrix& x, const BlockWeights& w) {
    Matrix hidden = linear(x, w.ffn_w1);
    for (float& v : hidden.data) v = swish(v);
    return linear(hidden, w.ffn_w2);
}

inline Vector router_gamma(const BlockWeights& w, std::size_t t, const EngineOptions& options) {
    if (options.gamma_override) return Vector(w.router.w.size(), *options.gamma_override);
    return memory_gate(position_ratio(t, w.router.horizon), w.router);
}

/// Hybrid block for chunk `t`:
///   x = rmsnorm(H_in); Q, K, V, alpha, beta from x
///   H_global = retrieve(M, Q before rotary, x)      (M holds blocks evicted before t)
///   append chunk to cache, collect evictions
///   H_local = attention over sink + window incl. this chunk
///   H_mid = H_in + H_local + gamma_t * H_global
///   H_out = H_mid + FFN(rmsnorm(H_mid))
///   fold each evicted block into M
inline Matrix block_forward(const Matrix& h_in, const BlockWeights& w, LayerState& state, std::size_t t,
                            const EngineOptions& options = {}, StepStats* stats = nullptr) {
    const std::size_t c = state.cache.config().chunk_size;
    require(h_in.rows == c, "block_forward: chunk must have chunk_size rows");
    require(h_in.cols == w.attn.width(), "block_forward: input width mismatch");
    require(state.cache.next_block_index() == t, "block_forward: layer state is not at chunk t");

    const auto positions = chunk_positions(t, c);
    const Matrix x = rmsnorm_rows(h_in, w.attn_norm, kNormEps);
    Projections proj = project_qkv(x, w.attn, positions);
    Gates gates = compute_gates(x, w.gates);

    const bool hybrid = options.mode == MemoryMode::hybrid;
    Matrix global;
    if (hybrid) global = retrieve(state.memory, proj.q_raw, x, w.out_gate);

    auto evicted = state.cache.append(
        {t, proj.k, std::move(proj.k_raw), std::move(proj.v), std::move(gates.alpha), std::move(gates.beta)});

    AttentionCounters counters;
    Matrix fused = window_attention(proj.q, positions, state.cache, w.attn.heads, w.attn.wo, &counters);
    if (hybrid) fused = fuse(fused, global, router_gamma(w, t, options));

    const Matrix mid = add(h_in, fused);
    Matrix out = add(mid, feed_forward(rmsnorm_rows(mid, w.ffn_norm, kNormEps), w));

    std::size_t updates = 0;
    if (hybrid) {
        for (const auto& block : evicted) {
            state.memory.update(summarize_evicted(block));
            ++updates;
        }
    }
    if (stats != nullptr) {
        stats->key_comparisons += counters.key_comparisons;
        stats->memory_updates += updates;
        stats->cached_tokens = std::max(stats->cached_tokens, state.cache.stored_tokens());
    }
    return out;
}

/// Runs one chunk through every layer, advancing `state`.
inline Matrix stack_forward(const WeightsBundle& w, EngineState& state, const Matrix& chunk,
                            const EngineOptions& options = {}, StepStats* stats = nullptr,
                            std::vector<Matrix>* layer_outputs = nullptr) {
    require(state.layers.size() == w.layers.size(), "stack_forward: layer count mismatch");
    require(chunk.rows == w.config.chunk_size, "stack_forward: wrong chunk width");
    Matrix h = chunk;
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        h = block_forward(h, w.layers[l], state.layers[l], state.chunks_consumed, options, stats);
        if (layer_outputs != nullptr) layer_outputs->push_back(h);
    }
    ++state.chunks_consumed;
    return h;
}

/// Drops every layer's window (sinks stay). With keep_memory the compressed
/// state carries the pre-switch history forward; otherwise it is zeroed.
inline void switch_context(EngineState& state, bool keep_memory) {
    for (auto& layer : state.layers) {
        layer.cache.reset_window(true);
        if (!keep_memory) layer.memory.clear();
    }
}

/// Stateful single-stream engine. Weights are shared and immutable; each engine
/// owns its caches and memory.
class StreamingEngine {
public:
    explicit StreamingEngine(std::shared_ptr<const WeightsBundle> weights, EngineOptions options = {})
        : weights_(std::move(weights)), options_(options), state_(make_engine_state(weights_->config)) {}

    const WeightsBundle& weights() const { return *weights_; }
    const EngineOptions& options() const { return options_; }
    const EngineState& state() const { return state_; }
    const StepStats& last_stats() const { return last_stats_; }
    std::size_t peak_cached_tokens() const { return peak_cached_tokens_; }
    std::size_t total_memory_updates() const { return total_memory_updates_; }

    Matrix step(const Matrix& chunk, std::vector<Matrix>* layer_outputs = nullptr) {
        last_stats_ = {};
        Matrix out = stack_forward(*weights_, state_, chunk, options_, &last_stats_, layer_outputs);
        peak_cached_tokens_ = std::max(peak_cached_tokens_, last_stats_.cached_tokens);
        total_memory_updates_ += last_stats_.memory_updates;
        return out;
    }

    /// Output the next chunk would produce, without committing it.
    Matrix preview(const Matrix& chunk) const {
        EngineState scratch = state_;
        return stack_forward(*weights_, scratch, chunk, options_);
    }

    void switch_context(bool keep_memory) { vssm::switch_context(state_, keep_memory); }

    void restore(EngineState state) {
        require(state.config == weights_->config, "StreamingEngine::restore: config mismatch");
        state_ = std::move(state);
    }

private:
    std::shared_ptr<const WeightsBundle> weights_;
    EngineOptions options_;
    EngineState state_;
    StepStats last_stats_{};
    std::size_t peak_cached_tokens_ = 0;
    std::size_t total_memory_updates_ = 0;
};

struct StreamResult {
    std::vector<Matrix> outputs;
    EngineState final_state;
    std::size_t peak_cached_tokens = 0;
    std::size_t memory_updates = 0;
    std::vector<StepStats> steps;
};

inline StreamResult streaming_run(const WeightsBundle& w, std::span<const Matrix> chunks,
                                  const EngineOptions& options = {}) {
    StreamResult result;
    result.final_state = make_engine_state(w.config);
    result.outputs.reserve(chunks.size());
    for (const auto& chunk : chunks) {
        StepStats stats;
        result.outputs.push_back(stack_forward(w, result.final_state, chunk, options, &stats));
        result.peak_cached_tokens = std::max(result.peak_cached_tokens, stats.cached_tokens);
        result.memory_updates += stats.memory_updates;
        result.steps.push_back(stats);
    }
    return result;
}

namespace detail {

struct ReplayBlock {
    Matrix x;
    std::vector<std::size_t> positions;
    Projections proj;
    Gates gates;
};

}  // namespace detail

/// Non-incremental oracle. For every chunk t it re-derives, from block
/// indices alone, which blocks are visible (sink = first S blocks, window =
/// the last L blocks up to t) and which were evicted before t, rebuilds the
/// memory from M = 0 over those evictions, then evaluates the block. No
/// RollingCache or persistent MemoryState is used.
inline std::vector<Matrix> batch_replay_oracle(const WeightsBundle& w, std::span<const Matrix> chunks,
                                               const EngineOptions& options = {}) {
    const ModelConfig& cfg = w.config;
    const std::size_t s_blocks = cfg.sink_blocks;
    const std::size_t l_blocks = cfg.window_blocks;
    const std::size_t c = cfg.chunk_size;
    const std::size_t n = chunks.size();
    const bool hybrid = options.mode == MemoryMode::hybrid;

    std::vector<Matrix> h(chunks.begin(), chunks.end());
    for (const auto& chunk : h) require(chunk.rows == c && chunk.cols == cfg.d_model, "batch_replay_oracle: bad chunk");

    for (const auto& bw : w.layers) {
        std::vector<detail::ReplayBlock> blocks(n);
        std::vector<EvictedSummary> summaries(n);
        for (std::size_t t = 0; t < n; ++t) {
            auto& b = blocks[t];
            b.x = rmsnorm_rows(h[t], bw.attn_norm, kNormEps);
            b.positions = chunk_positions(t, c);
            b.proj = project_qkv(b.x, bw.attn, b.positions);
            b.gates = compute_gates(b.x, bw.gates);
            summaries[t] = summarize_evicted({t, b.proj.k, b.proj.k_raw, b.proj.v, b.gates.alpha, b.gates.beta});
        }

        std::vector<Matrix> next(n);
        for (std::size_t t = 0; t < n; ++t) {
            const auto& b = blocks[t];

            std::vector<std::size_t> visible;
            for (std::size_t i = 0; i < std::min(s_blocks, t + 1); ++i) visible.push_back(i);
            const std::size_t window_begin = std::max(s_blocks, t + 1 >= l_blocks ? t + 1 - l_blocks : 0);
            for (std::size_t i = window_begin; i <= t; ++i) visible.push_back(i);

            LocalView view;
            std::vector<Matrix> ks;
            std::vector<Matrix> vs;
            for (std::size_t i : visible) {
                ks.push_back(blocks[i].proj.k);
                vs.push_back(blocks[i].proj.v);
                view.positions.insert(view.positions.end(), blocks[i].positions.begin(), blocks[i].positions.end());
            }
            view.keys = vstack(ks);
            view.values = vstack(vs);
            Matrix fused = window_attention(b.proj.q, b.positions, view, bw.attn.heads, bw.attn.wo);

            if (hybrid) {
                // Block e is evicted while chunk e + L is appended and reaches
                // the memory from chunk e + L + 1 on.
                std::span<const EvictedSummary> seen;
                if (t >= l_blocks + 1 && t - l_blocks > s_blocks) {
                    seen = std::span<const EvictedSummary>(summaries).subspan(s_blocks, t - l_blocks - s_blocks);
                }
                const MemoryState memory = fold_memory(cfg.heads, cfg.head_dim(), seen);
                const Matrix global = retrieve(memory, b.proj.q_raw, b.x, bw.out_gate);
                fused = fuse(fused, global, router_gamma(bw, t, options));
            }
            const Matrix mid = add(h[t], fused);
            next[t] = add(mid, feed_forward(rmsnorm_rows(mid, bw.ffn_norm, kNormEps), bw));
        }
        h = std::move(next);
    }
    return h;
}

/// Reference model with unbounded causal attention and no global memory: the
/// whole sequence is materialized and each layer runs the full causal
/// attention oracle.
inline std::vector<Matrix> full_causal_model(const WeightsBundle& w, std::span<const Matrix> chunks) {
    const std::size_t c = w.config.chunk_size;
    if (chunks.empty()) return {};
    Matrix h = vstack(chunks);
    std::vector<std::size_t> positions(h.rows);
    for (std::size_t i = 0; i < h.rows; ++i) positions[i] = i;
    for (const auto& bw : w.layers) {
        const Matrix x = rmsnorm_rows(h, bw.attn_norm, kNormEps);
        const Projections p = project_qkv(x, bw.attn, positions);
        const Matrix local = full_causal_attention_oracle(p.q, p.k, p.v, bw.attn.heads, bw.attn.wo);
        const Matrix mid = add(h, local);
        h = add(mid, feed_forward(rmsnorm_rows(mid, bw.ffn_norm, kNormEps), bw));
    }
    std::vector<Matrix> out;
    for (std::size_t t = 0; t < chunks.size(); ++t) out.push_back(slice_rows(h, t * c, c));
    return out;
}

// Token and continuous-signal adapters around the block stack.

inline Matrix embed_tokens(const WeightsBundle& w, std::span<const std::int32_t> tokens) {
    require(w.config.vocab > 0, "embed_tokens: model has no vocabulary");
    Matrix out(tokens.size(), w.config.d_model);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        require(tokens[i] >= 0 && static_cast<std::size_t>(tokens[i]) < w.config.vocab,
                "embed_tokens: token id outside vocabulary");
        const auto src = w.embed.row(static_cast<std::size_t>(tokens[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

inline Matrix token_logits(const WeightsBundle& w, const Matrix& h) {
    require(w.config.vocab > 0, "token_logits: model has no vocabulary");
    return linear(rmsnorm_rows(h, w.final_norm, kNormEps), w.head);
}

inline Matrix project_in(const WeightsBundle& w, const Matrix& x) {
    require(w.config.io_dim > 0, "project_in: model has no io projections");
    return linear(x, w.in_proj);
}

inline Matrix project_out(const WeightsBundle& w, const Matrix& h) {
    require(w.config.io_dim > 0, "project_out: model has no io projections");
    return linear(rmsnorm_rows(h, w.final_norm, kNormEps), w.out_proj);
}

}  // namespace vssm
