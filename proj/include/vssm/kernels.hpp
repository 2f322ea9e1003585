#pragma once

// Dense numeric primitives. All functions are pure; reductions accumulate in
// double and round once to float so results are reproducible across builds.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "vssm/matrix.hpp"

namespace vssm {

inline constexpr float kRopeBase = 10000.0f;

/// y = x W (+ bias per row). An empty bias span means no bias.
inline Matrix linear(const Matrix& x, const Matrix& w, std::span<const float> bias = {}) {
    require(x.cols == w.rows, "linear: x.cols must equal W.rows");
    require(bias.empty() || bias.size() == w.cols, "linear: bias length must equal W.cols");
    Matrix y(x.rows, w.cols);
    std::vector<double> acc(w.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        if (bias.empty()) {
            std::fill(acc.begin(), acc.end(), 0.0);
        } else {
            std::copy(bias.begin(), bias.end(), acc.begin());
        }
        const auto xr = x.row(i);
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double xv = xr[k];
            if (xv == 0.0) continue;
            const auto wr = w.row(k);
            for (std::size_t j = 0; j < w.cols; ++j) acc[j] += xv * static_cast<double>(wr[j]);
        }
        auto yr = y.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) yr[j] = static_cast<float>(acc[j]);
    }
    return y;
}

inline std::vector<float> stable_softmax(std::span<const float> row) {
    std::vector<float> out(row.size());
    if (row.empty()) return out;
    float peak = row[0];
    for (float v : row) peak = std::max(peak, v);
    std::vector<double> e(row.size());
    double total = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        e[i] = std::exp(static_cast<double>(row[i]) - peak);
        total += e[i];
    }
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = static_cast<float>(e[i] / total);
    return out;
}

inline std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gain, float eps) {
    require(gain.size() == x.size(), "rmsnorm: gain length must equal input length");
    require(eps >= 0.0f, "rmsnorm: eps must be non-negative");
    std::vector<float> y(x.size());
    double sq = 0.0;
    for (float v : x) sq += static_cast<double>(v) * v;
    const double denom = std::sqrt(sq / static_cast<double>(x.size()) + eps);
    if (denom == 0.0) return y;  // zero input with eps == 0
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = static_cast<float>(static_cast<double>(gain[i]) * x[i] / denom);
    }
    return y;
}

inline Matrix rmsnorm_rows(const Matrix& x, std::span<const float> gain, float eps) {
    Matrix y(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto normed = rmsnorm(x.row(r), gain, eps);
        std::copy(normed.begin(), normed.end(), y.row(r).begin());
    }
    return y;
}

inline float sigmoid(float x) {
    const double v = x;
    if (v >= 0.0) return static_cast<float>(1.0 / (1.0 + std::exp(-v)));
    const double e = std::exp(v);
    return static_cast<float>(e / (1.0 + e));
}

// log1p(exp(-|x|)) + max(x, 0) never overflows.
inline float softplus(float x) {
    const double v = x;
    return static_cast<float>(std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0));
}

inline float swish(float x) {
    return static_cast<float>(static_cast<double>(x) * sigmoid(x));
}

/// Rotary position encoding over consecutive pairs (2i, 2i+1) with
/// frequency base^(-2i/d).
inline void rope_rotate_inplace(std::span<float> x, double position, float base = kRopeBase) {
    require(x.size() % 2 == 0, "rope_rotate: head dimension must be even");
    const double d = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size() / 2; ++i) {
        const double freq = std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / d);
        const double theta = position * freq;
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double a = x[2 * i];
        const double b = x[2 * i + 1];
        x[2 * i] = static_cast<float>(a * c - b * s);
        x[2 * i + 1] = static_cast<float>(a * s + b * c);
    }
}

inline std::vector<float> rope_rotate(std::span<const float> x, double position, float base = kRopeBase) {
    std::vector<float> out(x.begin(), x.end());
    rope_rotate_inplace(out, position, base);
    return out;
}

/// Rotates every head slice of every row; row r sits at positions[r].
inline void rope_rows_inplace(Matrix& x, std::size_t heads, std::span<const std::size_t> positions,
                              float base = kRopeBase) {
    require(heads > 0 && x.cols % heads == 0, "rope_rows: width must be divisible by head count");
    require(positions.size() == x.rows, "rope_rows: one position per row required");
    const std::size_t dh = x.cols / heads;
    for (std::size_t r = 0; r < x.rows; ++r) {
        auto row = x.row(r);
        for (std::size_t h = 0; h < heads; ++h) {
            rope_rotate_inplace(row.subspan(h * dh, dh), static_cast<double>(positions[r]), base);
        }
    }
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    require(a.size() == b.size(), "dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

}  // namespace vssm
