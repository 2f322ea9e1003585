#pragma once

// Engine state snapshot. All integers little-endian.
//
//   bytes 0..3   magic "VSSM"
//   u32          version (1)
//   u32          section count
//   per section: u32 name length, name bytes, u64 payload length, payload
//
// Sections, in order:
//   "config"           ModelConfig as UTF-8 JSON
//   "engine"           u64 chunks_consumed
//   "layer<i>.cache"   u64 next_block_index, u32 sink count, u32 window count,
//                      then per block: u64 block_index and five matrices
//                      (keys, raw_keys, values, alpha, beta)
//   "layer<i>.memory"  u32 heads, u32 head_dim, u64 updates_applied,
//                      then heads * head_dim^2 f32 in row-major head order
// A matrix is u32 rows, u32 cols, rows*cols f32.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vssm/hybrid_model.hpp"
#include "vssm/interchange.hpp"

namespace vssm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
    void raw(const std::vector<unsigned char>& b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void matrix(const Matrix& m) {
        u32(static_cast<std::uint32_t>(m.rows));
        u32(static_cast<std::uint32_t>(m.cols));
        for (float v : m.data) f32(v);
    }
    const std::vector<unsigned char>& data() const { return out_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    std::vector<unsigned char> out_;
};

class ByteReader {
public:
    ByteReader(const unsigned char* data, std::size_t size) : p_(data), end_(data + size) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }
    Matrix matrix() {
        const std::size_t r = u32();
        const std::size_t c = u32();
        need(r * c * 4);
        Matrix m(r, c);
        for (float& v : m.data) v = f32();
        return m;
    }
    ByteReader sub(std::size_t n) {
        need(n);
        ByteReader r(p_, n);
        p_ += n;
        return r;
    }
    bool done() const { return p_ == end_; }
    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

private:
    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end_ - p_) < n) throw FormatError("checkpoint truncated");
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p_[i]) << (8 * i);
        p_ += n;
        return v;
    }
    const unsigned char* p_;
    const unsigned char* end_;
};

inline void write_block(ByteWriter& w, const BlockEntry& b) {
    w.u64(b.block_index);
    w.matrix(b.keys);
    w.matrix(b.raw_keys);
    w.matrix(b.values);
    w.matrix(b.alpha);
    w.matrix(b.beta);
}

inline BlockEntry read_block(ByteReader& r) {
    BlockEntry b;
    b.block_index = r.u64();
    b.keys = r.matrix();
    b.raw_keys = r.matrix();
    b.values = r.matrix();
    b.alpha = r.matrix();
    b.beta = r.matrix();
    return b;
}

}  // namespace detail

inline std::vector<unsigned char> serialize_state(const EngineState& state) {
    std::vector<std::pair<std::string, detail::ByteWriter>> sections;

    detail::ByteWriter cfg;
    cfg.bytes(nlohmann::json(state.config).dump());
    sections.emplace_back("config", std::move(cfg));

    detail::ByteWriter engine;
    engine.u64(state.chunks_consumed);
    sections.emplace_back("engine", std::move(engine));

    for (std::size_t l = 0; l < state.layers.size(); ++l) {
        const auto& layer = state.layers[l];
        detail::ByteWriter cache;
        cache.u64(layer.cache.next_block_index());
        cache.u32(static_cast<std::uint32_t>(layer.cache.sink().size()));
        cache.u32(static_cast<std::uint32_t>(layer.cache.window().size()));
        for (const auto& b : layer.cache.sink()) detail::write_block(cache, b);
        for (const auto& b : layer.cache.window()) detail::write_block(cache, b);
        sections.emplace_back("layer" + std::to_string(l) + ".cache", std::move(cache));

        detail::ByteWriter mem;
        mem.u32(static_cast<std::uint32_t>(layer.memory.heads()));
        mem.u32(static_cast<std::uint32_t>(layer.memory.head_dim()));
        mem.u64(layer.memory.updates_applied());
        for (std::size_t h = 0; h < layer.memory.heads(); ++h) {
            for (float v : layer.memory.head(h).data) mem.f32(v);
        }
        sections.emplace_back("layer" + std::to_string(l) + ".memory", std::move(mem));
    }

    detail::ByteWriter out;
    out.bytes("VSSM");
    out.u32(kCheckpointVersion);
    out.u32(static_cast<std::uint32_t>(sections.size()));
    for (const auto& [name, payload] : sections) {
        out.u32(static_cast<std::uint32_t>(name.size()));
        out.bytes(name);
        out.u64(payload.data().size());
        out.raw(payload.data());
    }
    return out.data();
}

inline EngineState deserialize_state(const std::vector<unsigned char>& bytes) {
    detail::ByteReader r(bytes.data(), bytes.size());
    if (r.bytes(4) != "VSSM") throw FormatError("checkpoint: bad magic");
    if (r.u32() != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    const std::uint32_t count = r.u32();

    std::vector<std::pair<std::string, detail::ByteReader>> sections;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u32());
        const std::uint64_t len = r.u64();
        sections.emplace_back(std::move(name), r.sub(len));
    }
    if (!r.done()) throw FormatError("checkpoint: trailing bytes");

    std::size_t next = 0;
    auto expect = [&](const std::string& name) -> detail::ByteReader& {
        if (next >= sections.size() || sections[next].first != name) {
            throw FormatError("checkpoint: expected section '" + name + "'");
        }
        return sections[next++].second;
    };

    EngineState state;
    {
        auto& cfg = expect("config");
        const std::string text = cfg.bytes(cfg.remaining());
        state.config = nlohmann::json::parse(text).get<ModelConfig>();
        state.config.validate();
    }
    state.chunks_consumed = expect("engine").u64();
    for (std::size_t l = 0; l < state.config.layers; ++l) {
        auto& c = expect("layer" + std::to_string(l) + ".cache");
        const std::uint64_t next_block = c.u64();
        const std::uint32_t n_sink = c.u32();
        const std::uint32_t n_window = c.u32();
        std::vector<BlockEntry> sink;
        std::deque<BlockEntry> window;
        for (std::uint32_t i = 0; i < n_sink; ++i) sink.push_back(detail::read_block(c));
        for (std::uint32_t i = 0; i < n_window; ++i) window.push_back(detail::read_block(c));
        RollingCache cache = RollingCache::restore(state.config.cache(), next_block, std::move(sink), std::move(window));

        auto& m = expect("layer" + std::to_string(l) + ".memory");
        const std::size_t heads = m.u32();
        const std::size_t dh = m.u32();
        const std::uint64_t updates = m.u64();
        if (heads != state.config.heads || dh != state.config.head_dim()) {
            throw FormatError("checkpoint: memory shape disagrees with config");
        }
        std::vector<Matrix> heads_state;
        for (std::size_t h = 0; h < heads; ++h) {
            Matrix mh(dh, dh);
            for (float& v : mh.data) v = m.f32();
            heads_state.push_back(std::move(mh));
        }
        state.layers.push_back({std::move(cache), MemoryState::restore(heads, dh, std::move(heads_state), updates)});
    }
    if (next != sections.size()) throw FormatError("checkpoint: unexpected extra sections");
    return state;
}

inline void save_checkpoint(const EngineState& state, const std::filesystem::path& path) {
    const auto bytes = serialize_state(state);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline EngineState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_state(bytes);
}

}  // namespace vssm
