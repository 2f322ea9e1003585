#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vssm {

/// Raised when a caller breaks an operation's precondition (shape mismatch,
/// out-of-order block, bad configuration).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw ContractViolation(message);
    }
}

using Vector = std::vector<float>;

/// Dense row-major float matrix. Rows are tokens, columns are features.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
        require(data.size() == r * c, "Matrix: data length must equal rows*cols");
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
        return m;
    }

    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool empty() const { return rows == 0; }
    std::size_t size() const { return data.size(); }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Stacks matrices with equal column counts vertically.
inline Matrix vstack(std::span<const Matrix> parts) {
    std::size_t rows = 0;
    std::size_t cols = parts.empty() ? 0 : parts.front().cols;
    for (const auto& p : parts) {
        require(p.cols == cols || p.rows == 0, "vstack: column mismatch");
        rows += p.rows;
    }
    Matrix out(rows, cols);
    auto it = out.data.begin();
    for (const auto& p : parts) it = std::copy(p.data.begin(), p.data.end(), it);
    return out;
}

inline Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t count) {
    require(begin + count <= m.rows, "slice_rows: range out of bounds");
    Matrix out(count, m.cols);
    std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(begin * m.cols), count * m.cols, out.data.begin());
    return out;
}

inline float max_abs_diff(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows && a.cols == b.cols, "max_abs_diff: shape mismatch");
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

inline double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (float v : m.data) acc += static_cast<double>(v) * v;
    return std::sqrt(acc);
}

}  // namespace vssm
