#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "vssm/matrix.hpp"

namespace vssm {

struct CacheConfig {
    std::size_t sink_blocks = 1;
    std::size_t window_blocks = 8;
    std::size_t chunk_size = 4;

    void validate() const {
        require(window_blocks >= 1, "CacheConfig: window_blocks must be >= 1");
        require(chunk_size >= 1, "CacheConfig: chunk_size must be >= 1");
    }

    std::size_t capacity_tokens() const { return (sink_blocks + window_blocks) * chunk_size; }

    friend bool operator==(const CacheConfig&, const CacheConfig&) = default;
};

/// One committed chunk as seen by the cache. `keys` are rotary-encoded for
/// attention; `raw_keys` are the pre-rotary keys that feed the global memory.
/// `alpha` and `beta` are the per-token gates cached alongside K/V.
struct BlockEntry {
    std::size_t block_index = 0;
    Matrix keys;
    Matrix raw_keys;
    Matrix values;
    Matrix alpha;
    Matrix beta;

    std::size_t tokens() const { return keys.rows; }

    friend bool operator==(const BlockEntry&, const BlockEntry&) = default;
};

/// Keys/values visible to the current chunk, sink blocks first, then window
/// blocks, each token tagged with its absolute position.
struct LocalView {
    Matrix keys;
    Matrix values;
    std::vector<std::size_t> positions;
};

/// Sink region plus a block-granular FIFO window. Appending past capacity evicts
/// the oldest window block, which the caller folds into global memory.
class RollingCache {
public:
    RollingCache() = default;
    explicit RollingCache(CacheConfig config) : config_(config) { config_.validate(); }

    const CacheConfig& config() const { return config_; }
    std::size_t next_block_index() const { return next_block_index_; }
    const std::vector<BlockEntry>& sink() const { return sink_; }
    const std::deque<BlockEntry>& window() const { return window_; }

    std::size_t stored_blocks() const { return sink_.size() + window_.size(); }

    std::size_t stored_tokens() const {
        std::size_t n = 0;
        for (const auto& b : sink_) n += b.tokens();
        for (const auto& b : window_) n += b.tokens();
        return n;
    }

    /// Returns the evicted block, if any (at most one per append).
    std::vector<BlockEntry> append(BlockEntry entry) {
        require(entry.block_index == next_block_index_,
                "RollingCache::append: expected block " + std::to_string(next_block_index_) + ", got " +
                    std::to_string(entry.block_index));
        check_entry(entry);
        ++next_block_index_;
        std::vector<BlockEntry> evicted;
        if (sink_.size() < config_.sink_blocks) {
            sink_.push_back(std::move(entry));
            return evicted;
        }
        window_.push_back(std::move(entry));
        if (window_.size() > config_.window_blocks) {
            evicted.push_back(std::move(window_.front()));
            window_.pop_front();
        }
        return evicted;
    }

    LocalView gather_local() const {
        const std::size_t cols = width();
        LocalView view;
        const std::size_t n = stored_tokens();
        view.keys = Matrix(n, cols);
        view.values = Matrix(n, cols);
        view.positions.reserve(n);
        std::size_t row = 0;
        auto take = [&](const BlockEntry& b) {
            std::copy(b.keys.data.begin(), b.keys.data.end(), view.keys.data.begin() + static_cast<std::ptrdiff_t>(row * cols));
            std::copy(b.values.data.begin(), b.values.data.end(),
                      view.values.data.begin() + static_cast<std::ptrdiff_t>(row * cols));
            for (std::size_t i = 0; i < b.tokens(); ++i) view.positions.push_back(b.block_index * config_.chunk_size + i);
            row += b.tokens();
        };
        for (const auto& b : sink_) take(b);
        for (const auto& b : window_) take(b);
        return view;
    }

    /// Empties the window. Block numbering (and therefore positions) keeps
    /// advancing; a dropped sink is refilled by the next appends.
    void reset_window(bool keep_sink) {
        window_.clear();
        if (!keep_sink) sink_.clear();
    }

    friend bool operator==(const RollingCache&, const RollingCache&) = default;

    // Restores a snapshot; used by checkpoint loading.
    static RollingCache restore(CacheConfig config, std::size_t next_block_index, std::vector<BlockEntry> sink,
                                std::deque<BlockEntry> window) {
        RollingCache cache(config);
        require(sink.size() <= config.sink_blocks, "RollingCache::restore: sink over capacity");
        require(window.size() <= config.window_blocks, "RollingCache::restore: window over capacity");
        for (std::size_t i = 1; i < window.size(); ++i) {
            require(window[i].block_index == window[i - 1].block_index + 1,
                    "RollingCache::restore: window indices must be contiguous");
        }
        require(window.empty() || window.back().block_index < next_block_index,
                "RollingCache::restore: window index beyond counter");
        for (const auto& b : sink) cache.check_entry(b);
        for (const auto& b : window) cache.check_entry(b);
        cache.next_block_index_ = next_block_index;
        cache.sink_ = std::move(sink);
        cache.window_ = std::move(window);
        return cache;
    }

private:
    std::size_t width() const {
        if (!sink_.empty()) return sink_.front().keys.cols;
        if (!window_.empty()) return window_.front().keys.cols;
        return 0;
    }

    void check_entry(const BlockEntry& e) const {
        const std::size_t c = e.keys.rows;
        const std::size_t d = e.keys.cols;
        require(c == config_.chunk_size, "RollingCache: block must hold chunk_size tokens");
        auto same = [&](const Matrix& m) { return m.rows == c && m.cols == d; };
        require(same(e.raw_keys) && same(e.values) && same(e.alpha) && same(e.beta),
                "RollingCache: K/V and gate tensors must share one shape");
        const std::size_t w = width();
        require(w == 0 || w == d, "RollingCache: block width differs from cached blocks");
    }

    CacheConfig config_{};
    std::size_t next_block_index_ = 0;
    std::vector<BlockEntry> sink_;
    std::deque<BlockEntry> window_;
};

}  // namespace vssm
