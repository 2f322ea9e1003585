#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "vssm/config.hpp"
#include "vssm/global_memory.hpp"
#include "vssm/local_attention.hpp"
#include "vssm/matrix.hpp"
#include "vssm/router.hpp"

namespace vssm {

inline constexpr std::size_t kFfnExpansion = 4;
inline constexpr float kInitStd = 0.02f;

struct BlockWeights {
    Vector attn_norm;
    AttentionWeights attn;
    GateParams gates;
    OutputGateParams out_gate;
    RouterParams router;
    Vector ffn_norm;
    Matrix ffn_w1;  // D x 4D
    Matrix ffn_w2;  // 4D x D
};

struct WeightsBundle {
    ModelConfig config;
    Matrix embed;     // vocab x D
    Matrix in_proj;   // io_dim x D
    std::vector<BlockWeights> layers;
    Vector final_norm;
    Matrix head;      // D x vocab
    Matrix out_proj;  // D x io_dim
};

/// A named view of one parameter. Vectors have a one-element shape.
template <typename T>
struct TensorView {
    std::string name;
    std::vector<std::size_t> shape;
    std::span<T> values;
};

namespace detail {

template <typename Bundle, typename Fn>
void visit_tensors(Bundle& w, Fn&& fn) {
    using Elem = std::conditional_t<std::is_const_v<Bundle>, const float, float>;
    auto mat = [&](const std::string& name, auto& m) {
        fn(TensorView<Elem>{name, {m.rows, m.cols}, std::span<Elem>(m.data)});
    };
    auto vec = [&](const std::string& name, auto& v) { fn(TensorView<Elem>{name, {v.size()}, std::span<Elem>(v)}); };
    const auto& c = w.config;
    if (c.vocab > 0) mat("embed.weight", w.embed);
    if (c.io_dim > 0) mat("in_proj.weight", w.in_proj);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& b = w.layers[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        vec(p + "attn_norm.gain", b.attn_norm);
        mat(p + "attn.wq", b.attn.wq);
        mat(p + "attn.wk", b.attn.wk);
        mat(p + "attn.wv", b.attn.wv);
        mat(p + "attn.wo", b.attn.wo);
        mat(p + "gates.w_beta", b.gates.w_beta);
        mat(p + "gates.w_alpha", b.gates.w_alpha);
        vec(p + "gates.A", b.gates.a);
        vec(p + "gates.B", b.gates.b);
        mat(p + "out_gate.w", b.out_gate.w);
        vec(p + "out_gate.b", b.out_gate.bias);
        vec(p + "mem_norm.gain", b.out_gate.rms_gain);
        vec(p + "router.w", b.router.w);
        vec(p + "router.b", b.router.b);
        vec(p + "ffn_norm.gain", b.ffn_norm);
        mat(p + "ffn.w1", b.ffn_w1);
        mat(p + "ffn.w2", b.ffn_w2);
    }
    vec("final_norm.gain", w.final_norm);
    if (c.vocab > 0) mat("head.weight", w.head);
    if (c.io_dim > 0) mat("out_proj.weight", w.out_proj);
}

}  // namespace detail

/// Visits every parameter in canonical order (the interchange order).
template <typename Fn>
void for_each_tensor(WeightsBundle& w, Fn&& fn) {
    detail::visit_tensors(w, std::forward<Fn>(fn));
}
template <typename Fn>
void for_each_tensor(const WeightsBundle& w, Fn&& fn) {
    detail::visit_tensors(w, std::forward<Fn>(fn));
}

inline std::size_t parameter_count(const WeightsBundle& w) {
    std::size_t n = 0;
    for_each_tensor(w, [&](const TensorView<const float>& t) { n += t.values.size(); });
    return n;
}

/// Allocates a bundle with every tensor at its canonical shape, zero-filled.
inline WeightsBundle allocate_weights(const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    WeightsBundle w;
    w.config = config;
    if (config.vocab > 0) {
        w.embed = Matrix(config.vocab, d);
        w.head = Matrix(d, config.vocab);
    }
    if (config.io_dim > 0) {
        w.in_proj = Matrix(config.io_dim, d);
        w.out_proj = Matrix(d, config.io_dim);
    }
    w.final_norm = Vector(d);
    w.layers.resize(config.layers);
    for (auto& b : w.layers) {
        b.attn_norm = Vector(d);
        b.attn = {Matrix(d, d), Matrix(d, d), Matrix(d, d), Matrix(d, d), config.heads};
        b.gates = {Matrix(d, d), Matrix(d, d), Vector(d), Vector(d)};
        b.out_gate = {Matrix(d, d), Vector(d), Vector(d)};
        b.router = {Vector(d), Vector(d), config.horizon};
        b.ffn_norm = Vector(d);
        b.ffn_w1 = Matrix(d, kFfnExpansion * d);
        b.ffn_w2 = Matrix(kFfnExpansion * d, d);
    }
    return w;
}

/// Deterministic initialization: projections ~ N(0, 0.02^2); A = B = 0;
/// router w = 1, b = 0; all norm gains 1; output-gate bias 0.
inline WeightsBundle init_weights(const ModelConfig& config, std::uint64_t seed) {
    WeightsBundle w = allocate_weights(config);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, kInitStd);
    for_each_tensor(w, [&](const TensorView<float>& t) {
        const std::string& n = t.name;
        auto ends_with = [&](std::string_view suffix) {
            return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
        };
        float fill = 0.0f;
        if (ends_with(".gain") || ends_with("router.w")) {
            fill = 1.0f;
        } else if (ends_with("gates.A") || ends_with("gates.B") || ends_with("router.b") || ends_with("out_gate.b")) {
            fill = 0.0f;
        } else {
            for (float& v : t.values) v = normal(rng);
            return;
        }
        std::fill(t.values.begin(), t.values.end(), fill);
    });
    return w;
}

}  // namespace vssm
