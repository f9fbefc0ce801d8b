#pragma once

// Monarch matrices M = J_c^T L J_c R with L, R block-diagonal (sqrt(n) blocks
// of side sqrt(n)) and J_c the commutation permutation of a sqrt(n) x sqrt(n)
// matrix. A linear-middle S-Mixer block with S = C is such a matrix with every
// block of R equal to W and every block of L equal to V^T.

#include <cmath>
#include <vector>

#include "dense.hpp"
#include "permutation.hpp"

namespace pkmix {

struct MonarchSpec {
    std::size_t n = 0;
    std::vector<Matrix> left_blocks;   // L
    std::vector<Matrix> right_blocks;  // R

    std::size_t side() const noexcept { return static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n)))); }

    void validate() const {
        const std::size_t s = side();
        if (n == 0 || s * s != n) throw dimension_error("Monarch dimension must be a positive perfect square");
        if (left_blocks.size() != s || right_blocks.size() != s)
            throw dimension_error("Monarch factors need sqrt(n) = " + std::to_string(s) + " blocks each");
        for (const auto* blocks : {&left_blocks, &right_blocks})
            for (const auto& b : *blocks)
                if (b.rows() != s || b.cols() != s) throw dimension_error("Monarch blocks must be sqrt(n) x sqrt(n)");
    }
};

namespace detail {

inline Vector block_diag_apply(const std::vector<Matrix>& blocks, const Vector& x) {
    const std::size_t s = blocks.front().rows();
    Vector out(x.size(), 0.0);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const Matrix& blk = blocks[b];
        for (std::size_t j = 0; j < s; ++j) {
            const double xj = x[b * s + j];
            for (std::size_t i = 0; i < s; ++i) out[b * s + i] += blk(i, j) * xj;
        }
    }
    return out;
}

inline Matrix block_diag(const std::vector<Matrix>& blocks) {
    const std::size_t s = blocks.front().rows();
    Matrix out(s * blocks.size(), s * blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t j = 0; j < s; ++j)
            for (std::size_t i = 0; i < s; ++i) out(b * s + i, b * s + j) = blocks[b](i, j);
    return out;
}

} // namespace detail

// Dense n x n. Oracle only.
inline Matrix monarch_materialize(const MonarchSpec& spec, std::size_t limit = default_oracle_limit) {
    spec.validate();
    if (spec.n * spec.n > limit) throw size_limit_error("monarch_materialize: exceeds oracle limit");
    const std::size_t s = spec.side();
    const Matrix jc = to_matrix(commutation(s, s), limit);
    const Matrix l = detail::block_diag(spec.left_blocks);
    const Matrix r = detail::block_diag(spec.right_blocks);
    return matmul(transpose(jc), matmul(l, matmul(jc, r)));
}

// R block-wise, J_c, L block-wise, J_c^T. Never forms an n x n matrix.
inline Vector monarch_apply(const MonarchSpec& spec, const Vector& x) {
    spec.validate();
    if (x.size() != spec.n)
        throw dimension_error("monarch_apply: input length " + std::to_string(x.size()) + ", expected " +
                              std::to_string(spec.n));
    const std::size_t s = spec.side();
    const Permutation jc = commutation(s, s);
    Vector y = detail::block_diag_apply(spec.right_blocks, x);
    y = pkmix::apply(jc, y);
    y = detail::block_diag_apply(spec.left_blocks, y);
    return pkmix::apply(inverse(jc), y);
}

// L = I (x) V^T, R = I (x) W, with weight sharing across blocks.
inline MonarchSpec mixer_as_monarch(const Matrix& w, const Matrix& v) {
    if (w.rows() != w.cols() || v.rows() != v.cols())
        throw dimension_error("mixer_as_monarch: W and V must be square");
    if (w.rows() != v.rows())
        throw dimension_error("mixer_as_monarch: requires S == C, got S = " + std::to_string(w.rows()) +
                              ", C = " + std::to_string(v.rows()));
    const std::size_t s = w.rows();
    MonarchSpec spec;
    spec.n = s * s;
    const Matrix vt = transpose(v);
    spec.left_blocks.assign(s, vt);
    spec.right_blocks.assign(s, w);
    return spec;
}

// phi(M_L ... M_1 x); every product inside the chain is linear.
inline Vector monarch_chain_apply(const std::vector<MonarchSpec>& specs, const Vector& x,
                                  Activation outer = Activation::gelu) {
    if (specs.empty()) throw value_error("monarch_chain_apply: empty chain");
    Vector h = x;
    for (const auto& spec : specs) {
        if (spec.n != specs.front().n) throw dimension_error("monarch_chain_apply: specs disagree on n");
        h = monarch_apply(spec, h);
    }
    return activate(std::move(h), outer);
}

} // namespace pkmix
