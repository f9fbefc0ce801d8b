#pragma once

// Permuted-Kronecker layer: x -> phi(J2 (I_{n1} (x) W) J1 x).
//
// The forward pass never forms the (n1*k) x (n1*n2) matrix. With column-major
// storage, (I_{n1} (x) W) y is W * mat(y, n2, n1), so one k x n2 by n2 x n1
// product does the work.

#include <string>

#include "dense.hpp"
#include "permutation.hpp"

namespace pkmix {

struct PKLayerSpec {
    std::size_t n1 = 0;  // block count
    std::size_t n2 = 0;  // input block width
    std::size_t k = 0;   // output block width (k == n2 for the square layer)
    Matrix weight;       // k x n2
    Permutation j_in;    // size n1 * n2
    Permutation j_out;   // size n1 * k
    Activation activation = Activation::gelu;

    void validate() const {
        if (n1 == 0 || n2 == 0 || k == 0) throw dimension_error("PK layer dimensions must be positive");
        if (weight.rows() != k || weight.cols() != n2)
            throw dimension_error("PK weight must be " + detail::shape_str(k, n2) + ", got " +
                                  detail::shape_str(weight.rows(), weight.cols()));
        if (j_in.size() != n1 * n2)
            throw dimension_error("PK input permutation must have size n1*n2 = " +
                                  std::to_string(n1 * n2));
        if (j_out.size() != n1 * k)
            throw dimension_error("PK output permutation must have size n1*k = " +
                                  std::to_string(n1 * k));
    }

    std::size_t input_size() const noexcept { return n1 * n2; }
    std::size_t output_size() const noexcept { return n1 * k; }
};

// Identity permutations on both sides.
inline PKLayerSpec make_pk_layer(std::size_t n1, Matrix weight, Activation activation = Activation::gelu) {
    PKLayerSpec spec;
    spec.n1 = n1;
    spec.n2 = weight.cols();
    spec.k = weight.rows();
    spec.j_in = Permutation::identity(spec.n1 * spec.n2);
    spec.j_out = Permutation::identity(spec.n1 * spec.k);
    spec.weight = std::move(weight);
    spec.activation = activation;
    return spec;
}

inline Vector pk_forward(const PKLayerSpec& spec, const Vector& x) {
    spec.validate();
    if (x.size() != spec.input_size())
        throw dimension_error("pk_forward: input length " + std::to_string(x.size()) +
                              ", expected " + std::to_string(spec.input_size()));
    Vector y = pkmix::apply(spec.j_in, x);
    Matrix z = matmul(spec.weight, mat(y, spec.n2, spec.n1));
    return activate(pkmix::apply(spec.j_out, z.data()), spec.activation);
}

// Dense J2 (I (x) W) J1. Oracle only.
inline Matrix effective_weight(const PKLayerSpec& spec, std::size_t limit = default_oracle_limit) {
    spec.validate();
    const std::size_t rows = spec.output_size();
    const std::size_t cols = spec.input_size();
    if (rows * cols > limit)
        throw size_limit_error("effective_weight: " + detail::shape_str(rows, cols) +
                               " exceeds oracle limit");
    // Row r of J2 B J1 is row j_out[r] of B, and (B J1)(q, j_in[t]) = B(q, t).
    Matrix out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t q = spec.j_out[r];  // row of I (x) W
        const std::size_t block = q / spec.k;
        const std::size_t wr = q % spec.k;
        for (std::size_t s = 0; s < spec.n2; ++s) {
            const std::size_t t = block * spec.n2 + s;  // column of I (x) W
            out(r, spec.j_in[t]) = spec.weight(wr, s);
        }
    }
    return out;
}

// Structural nonzero count of the effective weight, n1 * k * n2.
constexpr std::size_t nnz(std::size_t n1, std::size_t n2, std::size_t k) noexcept { return n1 * k * n2; }

inline std::size_t nnz(const PKLayerSpec& spec) noexcept { return nnz(spec.n1, spec.n2, spec.k); }

inline double density(const PKLayerSpec& spec) noexcept {
    return static_cast<double>(nnz(spec)) /
           (static_cast<double>(spec.output_size()) * static_cast<double>(spec.input_size()));
}

} // namespace pkmix
