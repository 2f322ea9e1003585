#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "vssm/kernels.hpp"
#include "vssm/matrix.hpp"

namespace vssm {

struct RouterParams {
    Vector w;
    Vector b;
    std::size_t horizon = 1;
};

/// rho = (t + 1) / T, saturating at 1 once a stream runs past its horizon.
inline double position_ratio(std::size_t t, std::size_t horizon) {
    require(horizon >= 1, "position_ratio: horizon must be >= 1");
    return std::min(1.0, static_cast<double>(t + 1) / static_cast<double>(horizon));
}

/// gamma = sigmoid(w log(rho) + b), elementwise.
inline Vector memory_gate(double rho, const RouterParams& p) {
    require(rho > 0.0, "memory_gate: rho must be positive");
    require(p.w.size() == p.b.size(), "memory_gate: w/b length mismatch");
    const double lr = std::log(rho);
    Vector gamma(p.w.size());
    for (std::size_t i = 0; i < gamma.size(); ++i) {
        gamma[i] = sigmoid(static_cast<float>(static_cast<double>(p.w[i]) * lr + p.b[i]));
    }
    return gamma;
}

/// H_local + gamma * H_global, gamma broadcast over rows.
inline Matrix fuse(const Matrix& local, const Matrix& global, std::span<const float> gamma) {
    require(local.rows == global.rows && local.cols == global.cols, "fuse: shape mismatch");
    require(gamma.size() == local.cols, "fuse: gate length mismatch");
    Matrix out = local;
    for (std::size_t r = 0; r < out.rows; ++r) {
        auto o = out.row(r);
        const auto g = global.row(r);
        for (std::size_t j = 0; j < o.size(); ++j) o[j] += gamma[j] * g[j];
    }
    return out;
}

}  // namespace vssm
