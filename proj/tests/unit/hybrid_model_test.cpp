#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"
#include "vssm/hybrid_model.hpp"

using namespace vssm;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.d_model = 16;
    c.heads = 2;
    c.layers = 2;
    c.sink_blocks = 1;
    c.window_blocks = 3;
    c.chunk_size = 2;
    c.horizon = 16;
    c.vocab = 0;
    return c;
}

std::vector<float> flatten(const WeightsBundle& w) {
    std::vector<float> out;
    for_each_tensor(w, [&](const TensorView<const float>& t) { out.insert(out.end(), t.values.begin(), t.values.end()); });
    return out;
}

std::shared_ptr<const WeightsBundle> shared(WeightsBundle w) { return std::make_shared<const WeightsBundle>(std::move(w)); }

}  // namespace

TEST(InitWeights, DeterministicPerSeed) {
    const ModelConfig c;
    EXPECT_EQ(flatten(init_weights(c, 3)), flatten(init_weights(c, 3)));
    EXPECT_NE(flatten(init_weights(c, 3)), flatten(init_weights(c, 4)));
}

TEST(InitWeights, ParameterCountMatchesFormula) {
    ModelConfig c;
    c.d_model = 32;
    c.heads = 4;
    c.layers = 2;
    c.vocab = 64;
    c.io_dim = 0;
    const std::size_t d = c.d_model;
    // per layer: wq wk wv wo, w_beta w_alpha, out_gate.w (7 D^2), ffn (8 D^2),
    // attn_norm A B out_gate.b mem_norm router.w router.b ffn_norm (8 D)
    const std::size_t per_layer = 15 * d * d + 8 * d;
    const std::size_t expected = c.layers * per_layer + 2 * c.vocab * d + d;
    EXPECT_EQ(expected, 35360u);
    EXPECT_EQ(parameter_count(init_weights(c, 0)), expected);
}

TEST(InitWeights, DocumentedInitValues) {
    const auto w = init_weights(ModelConfig{}, 0);
    for (const auto& b : w.layers) {
        EXPECT_EQ(b.router.w, Vector(b.router.w.size(), 1.0f));
        EXPECT_EQ(b.router.b, Vector(b.router.b.size(), 0.0f));
        EXPECT_EQ(b.gates.a, Vector(b.gates.a.size(), 0.0f));
        EXPECT_EQ(b.gates.b, Vector(b.gates.b.size(), 0.0f));
        EXPECT_EQ(b.attn_norm, Vector(b.attn_norm.size(), 1.0f));
        for (float g : memory_gate(1.0, b.router)) EXPECT_EQ(g, 0.5f);
    }
    double sq = 0.0;
    for (float v : w.layers[0].attn.wq.data) sq += static_cast<double>(v) * v;
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(w.layers[0].attn.wq.data.size())), kInitStd, 0.003);
}

TEST(BlockForward, FirstChunkEqualsLocalOnlyBlock) {
    const ModelConfig c = small_config();
    const auto w = testkit::lively_weights(c, 1);
    const auto chunk = testkit::random_chunks(c, 1, 2)[0];
    LayerState a = make_engine_state(c).layers[0];
    LayerState b = a;
    const Matrix hybrid = block_forward(chunk, w.layers[0], a, 0);
    const Matrix local = block_forward(chunk, w.layers[0], b, 0, {MemoryMode::local_only, std::nullopt});
    EXPECT_EQ(hybrid, local);
}

TEST(BlockForward, ZeroNetworkIsIdentityResidual) {
    const ModelConfig c = small_config();
    WeightsBundle w = init_weights(c, 0);
    for (auto& b : w.layers) {
        for (Matrix* m : {&b.attn.wq, &b.attn.wk, &b.attn.wo, &b.gates.w_beta, &b.gates.w_alpha, &b.out_gate.w,
                          &b.ffn_w1, &b.ffn_w2}) {
            std::fill(m->data.begin(), m->data.end(), 0.0f);
        }
        b.attn.wv = Matrix::identity(c.d_model);
    }
    const auto chunks = testkit::random_chunks(c, 12, 3);
    const auto result = streaming_run(w, chunks);
    for (std::size_t t = 0; t < chunks.size(); ++t) EXPECT_EQ(result.outputs[t], chunks[t]);
}

TEST(BlockForward, StateChunkMismatchIsContractViolation) {
    const ModelConfig c = small_config();
    const auto w = init_weights(c, 0);
    LayerState s = make_engine_state(c).layers[0];
    const Matrix chunk(c.chunk_size, c.d_model);
    EXPECT_THROW(block_forward(chunk, w.layers[0], s, 1), ContractViolation);
    EXPECT_THROW(block_forward(Matrix(c.chunk_size + 1, c.d_model), w.layers[0], s, 0), ContractViolation);
}

TEST(StreamingRun, MatchesReplayOracle) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 6; ++trial) {
        ModelConfig c = small_config();
        c.sink_blocks = trial % 3;
        c.window_blocks = 1 + trial % 4;
        c.chunk_size = 1 + trial % 3;
        const auto w = testkit::lively_weights(c, 10 + trial);
        const auto chunks = testkit::random_chunks(c, 20, 20 + trial);
        const auto streamed = streaming_run(w, chunks).outputs;
        const auto replay = batch_replay_oracle(w, chunks);
        ASSERT_LE(testkit::max_diff(streamed, replay), 1e-5f) << "trial " << trial;
        EXPECT_GT(streaming_run(w, chunks).memory_updates, 0u);
    }
}

TEST(StreamingRun, ReplayOfEmptyAndSingleChunk) {
    const ModelConfig c = small_config();
    const auto w = testkit::lively_weights(c, 1);
    EXPECT_TRUE(batch_replay_oracle(w, std::vector<Matrix>{}).empty());
    const auto one = testkit::random_chunks(c, 1, 4);
    EngineState s = make_engine_state(c);
    EXPECT_EQ(batch_replay_oracle(w, one)[0], stack_forward(w, s, one[0]));
}

TEST(StreamingRun, ShortSequenceMatchesFullCausalModel) {
    ModelConfig c = small_config();
    const auto w = testkit::lively_weights(c, 6);
    const auto chunks = testkit::random_chunks(c, c.sink_blocks + c.window_blocks, 7);
    EXPECT_LE(testkit::max_diff(streaming_run(w, chunks).outputs, full_causal_model(w, chunks)), 1e-5f);
}

TEST(StreamingRun, IsCausal) {
    const ModelConfig c = small_config();
    const auto w = testkit::lively_weights(c, 8);
    auto chunks = testkit::random_chunks(c, 14, 9);
    const auto before = streaming_run(w, chunks).outputs;
    std::mt19937_64 rng(10);
    for (std::size_t t = 9; t < chunks.size(); ++t) chunks[t] = testkit::random_matrix(c.chunk_size, c.d_model, rng);
    const auto after = streaming_run(w, chunks).outputs;
    for (std::size_t t = 0; t < 9; ++t) EXPECT_EQ(before[t], after[t]);
    EXPECT_NE(before[9], after[9]);
}

TEST(StreamingRun, PeakCachedTokensIsCapacity) {
    ModelConfig c = small_config();
    c.window_blocks = 8;
    const auto w = init_weights(c, 0);
    const auto result = streaming_run(w, testkit::random_chunks(c, 128, 11));
    EXPECT_EQ(result.peak_cached_tokens, (c.sink_blocks + c.window_blocks) * c.chunk_size);
}

TEST(StreamingRun, PerStepWorkIsConstant) {
    const ModelConfig c = small_config();
    const auto w = init_weights(c, 0);
    const auto result = streaming_run(w, testkit::random_chunks(c, 30, 12));
    const std::size_t cc = c.chunk_size * c.chunk_size;
    for (std::size_t t = 0; t < result.steps.size(); ++t) {
        const auto& s = result.steps[t];
        // visible blocks after the append: sink + window, the window holding this chunk
        const std::size_t visible = std::min(t + 1, c.sink_blocks + c.window_blocks);
        EXPECT_EQ(s.key_comparisons, c.layers * visible * cc);
        EXPECT_LE(s.key_comparisons, c.layers * (c.sink_blocks + c.window_blocks + 1) * cc);
        EXPECT_EQ(s.memory_updates, t >= c.sink_blocks + c.window_blocks ? c.layers : 0u);
    }
}

TEST(Degeneration, ZeroGammaEqualsLocalOnlyBitExact) {
    const ModelConfig c = small_config();
    const auto w = testkit::lively_weights(c, 13);
    const auto chunks = testkit::random_chunks(c, 25, 14);
    const auto zero = streaming_run(w, chunks, {MemoryMode::hybrid, 0.0f}).outputs;
    const auto local = streaming_run(w, chunks, {MemoryMode::local_only, std::nullopt}).outputs;
    const auto hybrid = streaming_run(w, chunks).outputs;
    for (std::size_t t = 0; t < chunks.size(); ++t) EXPECT_EQ(zero[t], local[t]);
    EXPECT_GT(testkit::max_diff(hybrid, local), 0.0f);
}

TEST(Degeneration, ZeroSinkLocalOnlyIsPureSlidingWindow) {
    ModelConfig c = small_config();
    c.sink_blocks = 0;
    const auto w = testkit::lively_weights(c, 15);
    const auto chunks = testkit::random_chunks(c, 20, 16);
    const auto local = streaming_run(w, chunks, {MemoryMode::local_only, std::nullopt}).outputs;
    // Independent oracle: window blocks [t - L + 1, t] only, recomputed per chunk.
    std::vector<Matrix> h = chunks;
    for (const auto& bw : w.layers) {
        std::vector<Matrix> next;
        std::vector<Projections> proj;
        for (std::size_t t = 0; t < h.size(); ++t) {
            const Matrix x = rmsnorm_rows(h[t], bw.attn_norm, kNormEps);
            proj.push_back(project_qkv(x, bw.attn, chunk_positions(t, c.chunk_size)));
        }
        for (std::size_t t = 0; t < h.size(); ++t) {
            LocalView view;
            std::vector<Matrix> ks;
            std::vector<Matrix> vs;
            for (std::size_t i = t + 1 >= c.window_blocks ? t + 1 - c.window_blocks : 0; i <= t; ++i) {
                ks.push_back(proj[i].k);
                vs.push_back(proj[i].v);
                const auto p = chunk_positions(i, c.chunk_size);
                view.positions.insert(view.positions.end(), p.begin(), p.end());
            }
            view.keys = vstack(ks);
            view.values = vstack(vs);
            const Matrix mid =
                add(h[t], window_attention(proj[t].q, chunk_positions(t, c.chunk_size), view, bw.attn.heads, bw.attn.wo));
            next.push_back(add(mid, feed_forward(rmsnorm_rows(mid, bw.ffn_norm, kNormEps), bw)));
        }
        h = std::move(next);
    }
    EXPECT_LE(testkit::max_diff(local, h), 1e-6f);
}

TEST(StreamingEngine, InterleavedStreamsDoNotLeak) {
    const ModelConfig c = small_config();
    const auto w = shared(testkit::lively_weights(c, 17));
    const auto a = testkit::random_chunks(c, 15, 18);
    const auto b = testkit::random_chunks(c, 15, 19);
    StreamingEngine ea(w);
    StreamingEngine eb(w);
    std::vector<Matrix> oa;
    std::vector<Matrix> ob;
    for (std::size_t t = 0; t < a.size(); ++t) {
        oa.push_back(ea.step(a[t]));
        ob.push_back(eb.step(b[t]));
    }
    EXPECT_EQ(oa, streaming_run(*w, a).outputs);
    EXPECT_EQ(ob, streaming_run(*w, b).outputs);
}

TEST(StreamingEngine, PreviewDoesNotCommit) {
    const ModelConfig c = small_config();
    const auto w = shared(testkit::lively_weights(c, 20));
    const auto chunks = testkit::random_chunks(c, 10, 21);
    StreamingEngine e(w);
    for (std::size_t t = 0; t < 6; ++t) e.step(chunks[t]);
    const EngineState before = e.state();
    const Matrix p = e.preview(chunks[6]);
    EXPECT_EQ(e.state(), before);
    EXPECT_EQ(p, e.step(chunks[6]));
}

TEST(SwitchContext, DropsWindowAndOptionallyMemory) {
    const ModelConfig c = small_config();
    const auto w = shared(testkit::lively_weights(c, 22));
    const auto chunks = testkit::random_chunks(c, 12, 23);
    StreamingEngine keep(w);
    for (const auto& ch : chunks) keep.step(ch);
    StreamingEngine drop = keep;
    const EngineState before = keep.state();

    keep.switch_context(true);
    drop.switch_context(false);
    for (std::size_t l = 0; l < c.layers; ++l) {
        EXPECT_EQ(keep.state().layers[l].memory, before.layers[l].memory);
        EXPECT_FALSE(keep.state().layers[l].memory.is_zero());
        EXPECT_TRUE(drop.state().layers[l].memory.is_zero());
        EXPECT_TRUE(keep.state().layers[l].cache.window().empty());
        EXPECT_EQ(keep.state().layers[l].cache.sink().size(), c.sink_blocks);
    }

    const auto more = testkit::random_chunks(c, 2, 24);
    for (const auto& ch : more) keep.step(ch);
    std::vector<std::size_t> blocks;
    const auto& cache = keep.state().layers[0].cache;
    for (const auto& b : cache.sink()) blocks.push_back(b.block_index);
    for (const auto& b : cache.window()) blocks.push_back(b.block_index);
    EXPECT_EQ(blocks, (std::vector<std::size_t>{0, 12, 13}));
}

TEST(Adapters, TokenEmbeddingAndLogitShapes) {
    ModelConfig c = small_config();
    c.vocab = 10;
    const auto w = init_weights(c, 0);
    const std::vector<std::int32_t> tokens{0, 9, 3};
    const Matrix e = embed_tokens(w, tokens);
    EXPECT_EQ(e.rows, 3u);
    for (std::size_t j = 0; j < c.d_model; ++j) EXPECT_EQ(e(1, j), w.embed(9, j));
    EXPECT_EQ(token_logits(w, e).cols, 10u);
    const std::vector<std::int32_t> bad{10};
    EXPECT_THROW(embed_tokens(w, bad), ContractViolation);
    EXPECT_THROW(project_in(w, Matrix(1, 4)), ContractViolation);
}
