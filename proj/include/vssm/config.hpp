#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "vssm/matrix.hpp"
#include "vssm/rolling_cache.hpp"

namespace vssm {

/// Architecture and cache hyperparameters. JSON keys match the field names.
struct ModelConfig {
    std::size_t d_model = 32;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t sink_blocks = 1;
    std::size_t window_blocks = 8;
    std::size_t chunk_size = 3;
    std::size_t horizon = 1000;  // chunks
    std::size_t vocab = 64;      // 0 disables token embedding and head
    std::size_t io_dim = 0;      // 0 disables continuous in/out projections
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return d_model / heads; }

    CacheConfig cache() const { return {sink_blocks, window_blocks, chunk_size}; }

    void validate() const {
        require(d_model >= 1 && heads >= 1 && layers >= 1, "ModelConfig: d_model, heads, layers must be >= 1");
        require(d_model % heads == 0, "ModelConfig: d_model must be divisible by heads");
        require(head_dim() % 2 == 0, "ModelConfig: head_dim must be even for rotary encoding");
        require(window_blocks >= 1 && chunk_size >= 1 && horizon >= 1,
                "ModelConfig: window_blocks, chunk_size, horizon must be >= 1");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d_model", c.d_model},       {"heads", c.heads},
                       {"layers", c.layers},         {"sink_blocks", c.sink_blocks},
                       {"window_blocks", c.window_blocks}, {"chunk_size", c.chunk_size},
                       {"horizon", c.horizon},       {"vocab", c.vocab},
                       {"io_dim", c.io_dim},         {"seed", c.seed}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    require(j.is_object(), "ModelConfig: JSON object expected");
    static const char* known[] = {"d_model", "heads", "layers", "sink_blocks", "window_blocks",
                                  "chunk_size", "horizon", "vocab", "io_dim", "seed"};
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok |= key == k;
        require(ok, "ModelConfig: unknown key '" + key + "'");
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("d_model", c.d_model);
    get("heads", c.heads);
    get("layers", c.layers);
    get("sink_blocks", c.sink_blocks);
    get("window_blocks", c.window_blocks);
    get("chunk_size", c.chunk_size);
    get("horizon", c.horizon);
    get("vocab", c.vocab);
    get("io_dim", c.io_dim);
    get("seed", c.seed);
}

inline ModelConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    auto c = nlohmann::json::parse(in).get<ModelConfig>();
    c.validate();
    return c;
}

}  // namespace vssm
