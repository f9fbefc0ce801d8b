#pragma once

// Singular-value analysis of random sparse weights.
//
// Eigenvalues come from a cyclic Jacobi solver (f64, desk sizes). Very sparse
// matrices are split into the connected components of their row/column
// bipartite graph first: the singular values of a matrix are the union of the
// singular values of those independent blocks, so a 5000 x 5000 matrix with
// ~1000 nonzeros reduces to many tiny dense problems.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

#include "dense.hpp"
#include "permutation.hpp"
#include "rng.hpp"

namespace pkmix {

struct EigenResult {
    Vector values;        // descending
    Matrix vectors;       // column i pairs with values[i]; empty when not requested
};

inline constexpr int jacobi_sweep_limit = 100;

namespace detail {

inline double symmetry_defect(const Matrix& a) {
    double d = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < j; ++i) d = std::max(d, std::abs(a(i, j) - a(j, i)));
    return d;
}

} // namespace detail

// Cyclic Jacobi rotations. Stops when the off-diagonal Frobenius norm falls
// below 1e-12 * ||A||_F.
inline EigenResult symmetric_eigen(const Matrix& input, bool want_vectors = true) {
    if (input.rows() != input.cols()) throw dimension_error("symmetric_eigen: matrix must be square");
    const double norm = frobenius_norm(input);
    if (detail::symmetry_defect(input) >= 1e-10 * std::max(1.0, max_abs(input.data())))
        throw value_error("symmetric_eigen: matrix is not symmetric");
    const std::size_t n = input.rows();
    Matrix a = input;
    Matrix v = want_vectors ? Matrix::identity(n) : Matrix{};
    const double threshold = 1e-12 * norm;

    const auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < j; ++i) s += 2.0 * a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    bool converged = n == 1 || off_norm() <= threshold;
    for (int sweep = 0; sweep < jacobi_sweep_limit && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p);
                const double aqq = a(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                if (want_vectors) {
                    for (std::size_t k = 0; k < n; ++k) {
                        const double vkp = v(k, p);
                        const double vkq = v(k, q);
                        v(k, p) = c * vkp - s * vkq;
                        v(k, q) = s * vkp + c * vkq;
                    }
                }
            }
        }
        converged = off_norm() <= threshold;
    }
    if (!converged) throw convergence_error("symmetric_eigen: no convergence within sweep limit");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
    EigenResult out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = a(order[i], order[i]);
    if (want_vectors) {
        out.vectors = Matrix(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k) out.vectors(k, i) = v(k, order[i]);
    }
    return out;
}

// Z Z^T, filled symmetrically.
inline Matrix gram_rows(const Matrix& z) {
    Matrix q(z.rows(), z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t k = 0; k <= i; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < z.cols(); ++j) s += z(i, j) * z(k, j);
            q(i, k) = s;
            q(k, i) = s;
        }
    return q;
}

// Singular values as square roots of the eigenvalues of Z Z^T, clamped at
// zero, descending; length min(rows, cols) (the Gram of the shorter side is
// used, which carries the same nonzero spectrum).
inline Vector singular_values(const Matrix& z) {
    const Matrix gram = z.rows() <= z.cols() ? gram_rows(z) : gram_rows(transpose(z));
    Vector ev = symmetric_eigen(gram, false).values;
    for (double& v : ev) v = std::sqrt(std::max(v, 0.0));
    return ev;
}

// Row/column/value triplets of a sparse matrix; repeated positions add up.
struct SparseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    struct Entry {
        std::size_t row, col;
        double value;
    };
    std::vector<Entry> entries;

    Matrix to_dense() const {
        Matrix m(rows, cols);
        for (const auto& e : entries) m(e.row, e.col) += e.value;
        return m;
    }

    double squared_norm() const {
        std::map<std::pair<std::size_t, std::size_t>, double> sums;
        for (const auto& e : entries) sums[{e.row, e.col}] += e.value;
        double s = 0.0;
        for (const auto& [pos, v] : sums) s += v * v;
        return s;
    }
};

struct SparseWeightShape {
    std::size_t m = 0;
    double p = 1.0;
};

inline constexpr std::size_t default_spectrum_width_cap = 20000;

// m = round(Omega^((1 + a) / 2)), p = Omega^(-a).
inline SparseWeightShape sparse_weight_shape(double omega, double a) {
    if (!(omega > 0.0) || !(a >= 0.0)) throw value_error("sparse weight shape needs omega > 0 and a >= 0");
    const auto m = static_cast<std::size_t>(std::floor(std::pow(omega, (1.0 + a) / 2.0) + 0.5));
    return {std::max<std::size_t>(m, 1), std::min(1.0, std::pow(omega, -a))};
}

// Z = M o W over an m x m grid: W standard Gaussian, M Bernoulli(p) per cell.
// Cells are visited in column-major order with geometric skips, which is an
// exact Bernoulli(p) draw per cell.
inline SparseMatrix sparse_random_weight(double omega, double a, std::uint64_t seed,
                                         std::size_t width_cap = default_spectrum_width_cap) {
    const auto shape = sparse_weight_shape(omega, a);
    if (shape.m > width_cap)
        throw size_limit_error("sparse_random_weight: width " + std::to_string(shape.m) + " exceeds cap " +
                               std::to_string(width_cap));
    SparseMatrix z;
    z.rows = z.cols = shape.m;
    Rng rng(seed);
    const std::uint64_t cells = static_cast<std::uint64_t>(shape.m) * shape.m;
    if (shape.p >= 1.0) {
        for (std::uint64_t c = 0; c < cells; ++c) z.entries.push_back({c % shape.m, c / shape.m, rng.normal()});
        return z;
    }
    const double log_q = std::log1p(-shape.p);
    std::uint64_t cell = 0;
    while (true) {
        double u;
        do {
            u = rng.uniform01();
        } while (u <= 0.0);
        const double skip = std::floor(std::log(u) / log_q);
        if (skip >= static_cast<double>(cells - cell)) break;
        cell += static_cast<std::uint64_t>(skip);
        z.entries.push_back({cell % shape.m, cell / shape.m, rng.normal()});
        if (++cell >= cells) break;
    }
    return z;
}

inline SparseMatrix dense_gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    SparseMatrix z;
    z.rows = rows;
    z.cols = cols;
    Rng rng(seed);
    z.entries.reserve(rows * cols);
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) z.entries.push_back({i, j, rng.normal()});
    return z;
}

// Nonzero singular values of a sparse matrix via its bipartite connected
// components, padded with zeros to min(rows, cols), descending.
inline Vector sparse_singular_values(const SparseMatrix& z) {
    const std::size_t nodes = z.rows + z.cols;
    std::vector<std::size_t> parent(nodes);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    const auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& e : z.entries) {
        if (e.value == 0.0) continue;
        const std::size_t a = find(e.row), b = find(z.rows + e.col);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
    // Local indices of rows and columns inside each component.
    std::vector<std::size_t> comp_of(nodes), local(nodes);
    std::vector<std::size_t> comp_ids(nodes, static_cast<std::size_t>(-1));
    std::vector<std::size_t> comp_rows, comp_cols;
    for (std::size_t v = 0; v < nodes; ++v) {
        const std::size_t r = find(v);
        if (comp_ids[r] == static_cast<std::size_t>(-1)) {
            comp_ids[r] = comp_rows.size();
            comp_rows.push_back(0);
            comp_cols.push_back(0);
        }
        const std::size_t c = comp_ids[r];
        comp_of[v] = c;
        local[v] = v < z.rows ? comp_rows[c]++ : comp_cols[c]++;
    }
    std::vector<Matrix> blocks(comp_rows.size());
    for (std::size_t c = 0; c < blocks.size(); ++c)
        if (comp_rows[c] > 0 && comp_cols[c] > 0) blocks[c] = Matrix(comp_rows[c], comp_cols[c]);
    for (const auto& e : z.entries) {
        if (e.value == 0.0) continue;
        const std::size_t c = comp_of[e.row];
        blocks[c](local[e.row], local[z.rows + e.col]) += e.value;
    }
    Vector out;
    for (const auto& b : blocks) {
        if (b.empty()) continue;
        const Vector sv = singular_values(b);
        out.insert(out.end(), sv.begin(), sv.end());
    }
    out.resize(std::min(z.rows, z.cols), 0.0);
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

struct SpectrumReport {
    double a = 0.0;
    double omega = 0.0;
    std::size_t m = 0;
    double p = 1.0;
    Vector singular_values;  // of Z / sqrt(c), descending
    double largest = 0.0;
    std::size_t trials = 1;
    std::uint64_t seed = 0;
};

// Singular values of Z after scaling Q = Z Z^T by c, the mean of its
// diagonal: c = ||Z||_F^2 / rows, so trace(Q / c) = rows.
inline SpectrumReport normalized_spectrum(const SparseMatrix& z) {
    const double sq = z.squared_norm();
    if (!(sq > 0.0)) throw value_error("normalized_spectrum: all-zero matrix");
    const double c = sq / static_cast<double>(z.rows);
    SpectrumReport r;
    r.m = z.cols;
    r.singular_values = sparse_singular_values(z);
    const double inv = 1.0 / std::sqrt(c);
    for (double& v : r.singular_values) v *= inv;
    r.largest = r.singular_values.empty() ? 0.0 : r.singular_values.front();
    return r;
}

inline SpectrumReport normalized_spectrum(const Matrix& z) {
    SparseMatrix s;
    s.rows = z.rows();
    s.cols = z.cols();
    for (std::size_t j = 0; j < z.cols(); ++j)
        for (std::size_t i = 0; i < z.rows(); ++i)
            if (z(i, j) != 0.0) s.entries.push_back({i, j, z(i, j)});
    return normalized_spectrum(s);
}

// One random draw at (omega, a), with the scaling parameters recorded.
inline SpectrumReport sparse_spectrum_trial(double omega, double a, std::uint64_t seed,
                                            std::size_t width_cap = default_spectrum_width_cap) {
    const auto shape = sparse_weight_shape(omega, a);
    SpectrumReport r = normalized_spectrum(sparse_random_weight(omega, a, seed, width_cap));
    r.a = a;
    r.omega = omega;
    r.m = shape.m;
    r.p = shape.p;
    r.seed = seed;
    return r;
}

// Singular values of J2 (I_{n1} (x) W) J1: those of W, each repeated n1 times.
// The permutations do not change the multiset; they are validated for size.
inline Vector pk_spectrum(const Matrix& w, std::size_t n1, const Permutation& j_in, const Permutation& j_out) {
    if (n1 == 0) throw value_error("pk_spectrum: block count must be positive");
    if (j_in.size() != n1 * w.cols() || j_out.size() != n1 * w.rows())
        throw dimension_error("pk_spectrum: permutation sizes do not match n1 and W");
    const Vector base = singular_values(w);
    Vector out;
    out.reserve(base.size() * n1);
    for (double s : base) out.insert(out.end(), n1, s);
    return out;
}

} // namespace pkmix
