#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"
#include "vssm/rolling_cache.hpp"

using namespace vssm;
using vssm::testkit::make_block;

namespace {

std::vector<std::size_t> indices(const RollingCache& c) {
    std::vector<std::size_t> out;
    for (const auto& b : c.sink()) out.push_back(b.block_index);
    for (const auto& b : c.window()) out.push_back(b.block_index);
    return out;
}

std::vector<std::size_t> append_range(RollingCache& cache, std::size_t count, std::size_t d = 2) {
    std::vector<std::size_t> evicted;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t idx = cache.next_block_index();
        for (const auto& e : cache.append(make_block(idx, cache.config().chunk_size, d, static_cast<float>(idx)))) {
            evicted.push_back(e.block_index);
        }
    }
    return evicted;
}

}  // namespace

TEST(RollingCache, WindowOfThreeWithOneSink) {
    RollingCache cache({1, 3, 2});
    const auto evicted = append_range(cache, 6);
    ASSERT_EQ(cache.sink().size(), 1u);
    EXPECT_EQ(cache.sink()[0].block_index, 0u);
    EXPECT_EQ(indices(cache), (std::vector<std::size_t>{0, 3, 4, 5}));
    EXPECT_EQ(evicted, (std::vector<std::size_t>{1, 2}));
}

TEST(RollingCache, NoEvictionWhileUnderCapacity) {
    RollingCache cache({1, 3, 2});
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_TRUE(cache.append(make_block(i, 2, 2, 0.0f)).empty());
    }
}

TEST(RollingCache, TotalEvictionsAfterTenAppends) {
    RollingCache cache({1, 3, 2});
    EXPECT_EQ(append_range(cache, 10).size(), 6u);  // max(0, 10 - 1 - 3)
}

TEST(RollingCache, OutOfOrderAppendRejected) {
    RollingCache cache({1, 3, 2});
    EXPECT_THROW(cache.append(make_block(1, 2, 2, 0.0f)), ContractViolation);
    cache.append(make_block(0, 2, 2, 0.0f));
    EXPECT_THROW(cache.append(make_block(0, 2, 2, 0.0f)), ContractViolation);
}

TEST(RollingCache, MismatchedGateShapeRejected) {
    RollingCache cache({1, 3, 2});
    auto b = make_block(0, 2, 2, 0.0f);
    b.alpha = Matrix(1, 2);
    EXPECT_THROW(cache.append(b), ContractViolation);
    auto wrong_chunk = make_block(0, 3, 2, 0.0f);
    EXPECT_THROW(cache.append(wrong_chunk), ContractViolation);
}

TEST(RollingCache, GatherOnEmptyCacheIsEmpty) {
    RollingCache cache({1, 3, 2});
    const auto view = cache.gather_local();
    EXPECT_EQ(view.keys.rows, 0u);
    EXPECT_EQ(view.values.rows, 0u);
    EXPECT_TRUE(view.positions.empty());
}

TEST(RollingCache, GatherBelowCapacityKeepsAppendOrder) {
    RollingCache cache({1, 3, 2});
    append_range(cache, 3);
    const auto view = cache.gather_local();
    EXPECT_EQ(view.positions, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
    for (std::size_t r = 0; r < view.keys.rows; ++r) EXPECT_EQ(view.keys(r, 0), static_cast<float>(r / 2));
}

TEST(RollingCache, GatherAfterEvictionSkipsEvictedBlocks) {
    RollingCache cache({1, 2, 2});
    append_range(cache, 4);
    const auto view = cache.gather_local();
    // blocks {0, 2, 3}
    EXPECT_EQ(view.positions, (std::vector<std::size_t>{0, 1, 4, 5, 6, 7}));
    EXPECT_EQ(view.values(2, 0), 2.0f);
    EXPECT_EQ(view.values(5, 1), 3.0f);
}

TEST(RollingCache, ResetKeepsSinkAndCounter) {
    RollingCache cache({1, 3, 2});
    append_range(cache, 5);
    cache.reset_window(true);
    EXPECT_EQ(indices(cache), (std::vector<std::size_t>{0}));
    EXPECT_EQ(cache.next_block_index(), 5u);
    EXPECT_EQ(cache.gather_local().positions, (std::vector<std::size_t>{0, 1}));
}

TEST(RollingCache, ResetOnEmptyCacheIsNoOp) {
    RollingCache cache({1, 3, 2});
    const RollingCache before = cache;
    cache.reset_window(true);
    EXPECT_EQ(cache, before);
    cache.reset_window(false);
    EXPECT_EQ(cache, before);
}

TEST(RollingCache, AppendsAfterResetRefillWindow) {
    RollingCache cache({1, 3, 2});
    append_range(cache, 6);
    cache.reset_window(true);
    EXPECT_TRUE(append_range(cache, 2).empty());
    EXPECT_EQ(indices(cache), (std::vector<std::size_t>{0, 6, 7}));
}

TEST(RollingCache, DroppedSinkIsRefilled) {
    RollingCache cache({1, 3, 2});
    append_range(cache, 6);
    cache.reset_window(false);
    append_range(cache, 2);
    EXPECT_EQ(cache.sink().size(), 1u);
    EXPECT_EQ(cache.sink()[0].block_index, 6u);
    EXPECT_EQ(indices(cache), (std::vector<std::size_t>{6, 7}));
}

TEST(RollingCache, ZeroSinkIsPureWindow) {
    RollingCache cache({0, 2, 1});
    const auto evicted = append_range(cache, 5);
    EXPECT_EQ(evicted, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(indices(cache), (std::vector<std::size_t>{3, 4}));
}

// Randomized: footprint bound, gate/KV synchronization, contiguous window, and
// the eviction schedule (block b >= S leaves exactly when block b + L arrives).
TEST(RollingCache, InvariantsUnderRandomAppendSequences) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<std::size_t> small(0, 4);
    for (int trial = 0; trial < 200; ++trial) {
        const CacheConfig cfg{small(rng), 1 + small(rng), 1 + small(rng)};
        RollingCache cache(cfg);
        const std::size_t n = 1 + small(rng) * 8;
        for (std::size_t i = 0; i < n; ++i) {
            const auto evicted = cache.append(make_block(i, cfg.chunk_size, 3, static_cast<float>(i)));
            ASSERT_LE(evicted.size(), 1u);
            if (i >= cfg.sink_blocks + cfg.window_blocks) {
                ASSERT_EQ(evicted.size(), 1u);
                ASSERT_EQ(evicted[0].block_index + cfg.window_blocks, i);
            } else {
                ASSERT_TRUE(evicted.empty());
            }
            ASSERT_LE(cache.stored_tokens(), cfg.capacity_tokens());
            ASSERT_LE(cache.window().size(), cfg.window_blocks);
            for (std::size_t w = 1; w < cache.window().size(); ++w) {
                ASSERT_EQ(cache.window()[w].block_index, cache.window()[w - 1].block_index + 1);
            }
            for (const auto* region : {&cache.window()}) {
                for (const auto& b : *region) {
                    ASSERT_EQ(b.alpha.rows, b.keys.rows);
                    ASSERT_EQ(b.beta.rows, b.values.rows);
                    ASSERT_EQ(b.keys(0, 0), static_cast<float>(b.block_index));
                }
            }
        }
    }
}
