#pragma once

// Dense matrix kernels, vectorization, the Kronecker oracle and the
// entry-wise nonlinearities shared by every model.
//
// Storage is column-major, so vec() and mat() are reinterpretations of the
// same buffer: element (i, j) of an S x C matrix sits at index j * S + i.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace pkmix {

using Vector = std::vector<double>;

// Entry budget for oracle-only materializations (kron, effective weights).
inline constexpr std::size_t default_oracle_limit = std::size_t{1} << 24;

class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        if (rows == 0 || cols == 0)
            throw dimension_error("matrix dimensions must be positive, got " +
                                  detail::shape_str(rows, cols));
    }

    // Wraps column-major data.
    Matrix(std::size_t rows, std::size_t cols, Vector data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows == 0 || cols == 0)
            throw dimension_error("matrix dimensions must be positive, got " +
                                  detail::shape_str(rows, cols));
        if (data_.size() != rows * cols)
            throw dimension_error("buffer of length " + std::to_string(data_.size()) +
                                  " does not fit shape " + detail::shape_str(rows, cols));
    }

    // Row-by-row literal, e.g. Matrix::from_rows({{1, 2}, {3, 4}}).
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw dimension_error("ragged row literal");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix column(const Vector& v) { return Matrix(v.size(), 1, v); }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[j * rows_ + i]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[j * rows_ + i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const Vector& values() const noexcept { return data_; }

    std::span<double> col(std::size_t j) noexcept { return {data_.data() + j * rows_, rows_}; }
    std::span<const double> col(std::size_t j) const noexcept {
        return {data_.data() + j * rows_, rows_};
    }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vector data_;
};

enum class Activation { gelu, linear };

namespace detail {

inline void require_finite(std::span<const double> xs, const char* where) {
    for (double x : xs)
        if (!std::isfinite(x)) throw numeric_error(std::string(where) + ": non-finite result");
}

} // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw dimension_error("matmul: " + detail::shape_str(a.rows(), a.cols()) + " times " +
                              detail::shape_str(b.rows(), b.cols()));
    Matrix out(a.rows(), b.cols());
    const std::size_t n = a.rows();
    for (std::size_t j = 0; j < b.cols(); ++j) {
        double* oc = out.col(j).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double bkj = b(k, j);
            if (bkj == 0.0) continue;
            const double* ac = a.col(k).data();
            for (std::size_t i = 0; i < n; ++i) oc[i] += ac[i] * bkj;
        }
    }
    detail::require_finite(out.data(), "matmul");
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) out(j, i) = a(i, j);
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw dimension_error("add: shape mismatch");
    Matrix out = a;
    auto o = out.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return out;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw dimension_error("hadamard: shape mismatch");
    Matrix out = a;
    auto o = out.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return out;
}

// Column-stacking vectorization: element (i, j) lands at j * rows + i.
inline Vector vec(const Matrix& x) { return x.values(); }

inline Matrix mat(const Vector& v, std::size_t rows, std::size_t cols) {
    if (v.size() != rows * cols)
        throw dimension_error("mat: vector of length " + std::to_string(v.size()) +
                              " cannot be shaped " + detail::shape_str(rows, cols));
    return Matrix(rows, cols, v);
}

inline Vector matvec(const Matrix& a, const Vector& x) {
    if (a.cols() != x.size()) throw dimension_error("matvec: length mismatch");
    Vector out(a.rows(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
        const double xk = x[k];
        if (xk == 0.0) continue;
        const double* ac = a.col(k).data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += ac[i] * xk;
    }
    detail::require_finite(out, "matvec");
    return out;
}

// Kronecker product. Test oracle only; production paths never materialize it.
inline Matrix kron(const Matrix& a, const Matrix& b, std::size_t limit = default_oracle_limit) {
    const std::size_t rows = a.rows() * b.rows();
    const std::size_t cols = a.cols() * b.cols();
    if (rows * cols > limit)
        throw size_limit_error("kron: " + detail::shape_str(rows, cols) +
                               " exceeds oracle limit of " + std::to_string(limit) + " entries");
    Matrix out(rows, cols);
    const std::size_t p = b.rows();
    const std::size_t q = b.cols();
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) {
            const double aij = a(i, j);
            for (std::size_t s = 0; s < q; ++s)
                for (std::size_t r = 0; r < p; ++r) out(i * p + r, j * q + s) = aij * b(r, s);
        }
    detail::require_finite(out.data(), "kron");
    return out;
}

// Exact GELU, t * Phi(t) with Phi the standard normal CDF.
inline double gelu(double t) noexcept { return 0.5 * t * (1.0 + std::erf(t * std::numbers::sqrt2 / 2.0)); }

// d/dt [t * Phi(t)] = Phi(t) + t * pdf(t).
inline double gelu_derivative(double t) noexcept {
    const double cdf = 0.5 * (1.0 + std::erf(t * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + t * pdf;
}

inline Vector gelu(Vector x) {
    for (double& v : x) v = gelu(v);
    return x;
}

inline Matrix gelu(Matrix x) {
    for (double& v : x.data()) v = gelu(v);
    return x;
}

inline Vector activate(Vector x, Activation a) { return a == Activation::gelu ? gelu(std::move(x)) : x; }
inline Matrix activate(Matrix x, Activation a) { return a == Activation::gelu ? gelu(std::move(x)) : x; }

inline constexpr double default_layer_norm_eps = 1e-5;

// Normalizes each row over its columns (the channel axis), then applies
// per-column gain and bias. Variance is the biased (1/n) estimate.
inline Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias,
                         double eps = default_layer_norm_eps) {
    if (gain.size() != x.cols() || bias.size() != x.cols())
        throw dimension_error("layer_norm: gain/bias length must equal column count " +
                              std::to_string(x.cols()));
    if (!(eps > 0.0)) throw value_error("layer_norm: eps must be positive");
    Matrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
        mean /= n;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < x.cols(); ++j)
            out(i, j) = (x(i, j) - mean) * inv * gain[j] + bias[j];
    }
    detail::require_finite(out.data(), "layer_norm");
    return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw dimension_error("max_abs_diff: length mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw dimension_error("max_abs_diff: shape mismatch");
    return max_abs_diff(a.data(), b.data());
}

inline double max_abs(std::span<const double> a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

inline std::size_t count_nonzero(const Matrix& a) {
    return static_cast<std::size_t>(std::count_if(a.data().begin(), a.data().end(),
                                                  [](double v) { return v != 0.0; }));
}

} // namespace pkmix
