#pragma once

// Named-tensor interchange: a JSON manifest
//   {"format": "vssm-tensors", "version": 1, "blob": "<file>",
//    "tensors": [{"name", "dtype": "f32", "shape": [...], "byte_offset"}]}
// plus a raw little-endian f32 blob. Tensors are packed back to back in
// manifest order without padding.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vssm/matrix.hpp"
#include "vssm/weights.hpp"

namespace vssm {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kTensorFormat = "vssm-tensors";
inline constexpr int kTensorFormatVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

namespace detail {

inline void put_f32_le(std::vector<unsigned char>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

inline float get_f32_le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

inline std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace detail

/// An ordered collection of named f32 tensors.
class TensorFile {
public:
    void add(std::string name, std::vector<std::size_t> shape, std::vector<float> values) {
        require(detail::element_count(shape) == values.size(), "TensorFile::add: shape does not match data for " + name);
        require(!index_.contains(name), "TensorFile::add: duplicate tensor " + name);
        index_[name] = tensors_.size();
        tensors_.push_back({std::move(name), std::move(shape), std::move(values)});
    }

    void add(std::string name, const Matrix& m) { add(std::move(name), {m.rows, m.cols}, m.data); }

    const std::vector<NamedTensor>& tensors() const { return tensors_; }
    bool contains(const std::string& name) const { return index_.contains(name); }

    const NamedTensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw FormatError("missing tensor '" + name + "'");
        return tensors_[it->second];
    }

    Matrix matrix(const std::string& name) const {
        const auto& t = at(name);
        if (t.shape.size() != 2) throw FormatError("tensor '" + name + "' is not rank 2");
        return Matrix(t.shape[0], t.shape[1], t.values);
    }

    std::vector<unsigned char> blob_bytes() const {
        std::vector<unsigned char> out;
        for (const auto& t : tensors_) {
            for (float v : t.values) detail::put_f32_le(out, v);
        }
        return out;
    }

    nlohmann::json manifest(const std::string& blob_name) const {
        nlohmann::json entries = nlohmann::json::array();
        std::size_t offset = 0;
        for (const auto& t : tensors_) {
            entries.push_back({{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"byte_offset", offset}});
            offset += t.values.size() * sizeof(float);
        }
        return {{"format", kTensorFormat}, {"version", kTensorFormatVersion}, {"blob", blob_name}, {"tensors", entries}};
    }

    /// Writes `<prefix>.json` and `<prefix>.bin`; returns the manifest path.
    std::filesystem::path write(const std::filesystem::path& prefix) const {
        auto manifest_path = prefix;
        manifest_path += ".json";
        auto blob_path = prefix;
        blob_path += ".bin";
        {
            const auto bytes = blob_bytes();
            std::ofstream blob(blob_path, std::ios::binary);
            if (!blob) throw FormatError("cannot write " + blob_path.string());
            blob.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        }
        std::ofstream man(manifest_path);
        if (!man) throw FormatError("cannot write " + manifest_path.string());
        man << manifest(blob_path.filename().string()).dump(2) << '\n';
        return manifest_path;
    }

    static TensorFile read(const std::filesystem::path& manifest_path) {
        std::ifstream man(manifest_path);
        if (!man) throw FormatError("cannot open " + manifest_path.string());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(man);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("bad manifest " + manifest_path.string() + ": " + e.what());
        }
        if (j.value("format", "") != kTensorFormat || j.value("version", 0) != kTensorFormatVersion) {
            throw FormatError("unsupported manifest format in " + manifest_path.string());
        }
        const auto blob_path = manifest_path.parent_path() / j.at("blob").get<std::string>();
        std::ifstream blob(blob_path, std::ios::binary);
        if (!blob) throw FormatError("cannot open blob " + blob_path.string());
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

        TensorFile file;
        for (const auto& e : j.at("tensors")) {
            if (e.at("dtype").get<std::string>() != "f32") throw FormatError("unsupported dtype");
            auto shape = e.at("shape").get<std::vector<std::size_t>>();
            const auto offset = e.at("byte_offset").get<std::size_t>();
            const std::size_t n = detail::element_count(shape);
            if (offset + n * 4 > bytes.size()) {
                throw FormatError("tensor '" + e.at("name").get<std::string>() + "' runs past end of blob");
            }
            std::vector<float> values(n);
            for (std::size_t i = 0; i < n; ++i) values[i] = detail::get_f32_le(bytes.data() + offset + 4 * i);
            file.add(e.at("name").get<std::string>(), std::move(shape), std::move(values));
        }
        return file;
    }

private:
    std::vector<NamedTensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

inline TensorFile weights_to_tensors(const WeightsBundle& w) {
    TensorFile file;
    for_each_tensor(w, [&](const TensorView<const float>& t) {
        file.add(t.name, t.shape, std::vector<float>(t.values.begin(), t.values.end()));
    });
    return file;
}

/// Fills a bundle for `config` from named tensors. Every canonical name must be
/// present with its canonical shape.
inline WeightsBundle tensors_to_weights(const TensorFile& file, const ModelConfig& config) {
    WeightsBundle w = allocate_weights(config);
    for_each_tensor(w, [&](const TensorView<float>& t) {
        const auto& src = file.at(t.name);
        if (src.shape != t.shape) throw FormatError("tensor '" + t.name + "' has wrong shape");
        std::copy(src.values.begin(), src.values.end(), t.values.begin());
    });
    return w;
}

}  // namespace vssm
