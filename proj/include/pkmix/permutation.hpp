#pragma once

// Permutation matrices stored as index maps. A Permutation with map sigma acts
// on vectors as (J x)_i = x[sigma(i)]; its matrix form is only built for
// oracles.

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dense.hpp"
#include "rng.hpp"

namespace pkmix {

class Permutation {
public:
    Permutation() = default;

    // Validates that map is a bijection on {0..m-1}.
    explicit Permutation(std::vector<std::size_t> map) : map_(std::move(map)) {
        if (map_.empty()) throw value_error("permutation size must be positive");
        std::vector<bool> seen(map_.size(), false);
        for (std::size_t v : map_) {
            if (v >= map_.size() || seen[v])
                throw value_error("index map is not a bijection on {0.." +
                                  std::to_string(map_.size() - 1) + "}");
            seen[v] = true;
        }
    }

    static Permutation identity(std::size_t m) {
        std::vector<std::size_t> map(m);
        std::iota(map.begin(), map.end(), std::size_t{0});
        return Permutation(std::move(map));
    }

    static Permutation reversal(std::size_t m) {
        std::vector<std::size_t> map(m);
        for (std::size_t i = 0; i < m; ++i) map[i] = m - 1 - i;
        return Permutation(std::move(map));
    }

    std::size_t size() const noexcept { return map_.size(); }
    std::size_t operator[](std::size_t i) const noexcept { return map_[i]; }
    const std::vector<std::size_t>& map() const noexcept { return map_; }

    bool is_identity() const noexcept {
        for (std::size_t i = 0; i < map_.size(); ++i)
            if (map_[i] != i) return false;
        return true;
    }

    friend bool operator==(const Permutation&, const Permutation&) = default;

private:
    std::vector<std::size_t> map_;
};

inline Vector apply(const Permutation& j, std::span<const double> x) {
    if (x.size() != j.size())
        throw dimension_error("apply: permutation of size " + std::to_string(j.size()) +
                              " on vector of length " + std::to_string(x.size()));
    Vector out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[j[i]];
    return out;
}

inline Vector apply(const Permutation& j, const Vector& x) {
    return pkmix::apply(j, std::span<const double>(x));
}

// The permutation applying j1 first and then j2.
inline Permutation compose(const Permutation& j2, const Permutation& j1) {
    if (j1.size() != j2.size()) throw dimension_error("compose: size mismatch");
    std::vector<std::size_t> map(j1.size());
    for (std::size_t i = 0; i < map.size(); ++i) map[i] = j1[j2[i]];
    return Permutation(std::move(map));
}

inline Permutation inverse(const Permutation& j) {
    std::vector<std::size_t> map(j.size());
    for (std::size_t i = 0; i < map.size(); ++i) map[j[i]] = i;
    return Permutation(std::move(map));
}

// J_c with J_c vec(X) = vec(X^T) for X of shape rows x cols.
inline Permutation commutation(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw value_error("commutation: dimensions must be positive");
    std::vector<std::size_t> map(rows * cols);
    // vec(X^T) index a + cols * b holds X(b, a), found at b + rows * a in vec(X).
    for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t a = 0; a < cols; ++a) map[a + cols * b] = b + rows * a;
    return Permutation(std::move(map));
}

// Uniform draw from the symmetric group: Fisher-Yates over Rng(seed), which
// is mt19937_64 with unbiased rejection sampling (see rng.hpp).
inline Permutation random_permutation(std::size_t m, std::uint64_t seed) {
    if (m == 0) throw value_error("random_permutation: size must be positive");
    std::vector<std::size_t> map(m);
    std::iota(map.begin(), map.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = m - 1; i > 0; --i) {
        const auto k = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(map[i], map[k]);
    }
    return Permutation(std::move(map));
}

inline Matrix to_matrix(const Permutation& j, std::size_t limit = default_oracle_limit) {
    if (j.size() * j.size() > limit)
        throw size_limit_error("to_matrix: permutation of size " + std::to_string(j.size()) +
                               " exceeds oracle limit");
    Matrix out(j.size(), j.size());
    for (std::size_t i = 0; i < j.size(); ++i) out(i, j[i]) = 1.0;
    return out;
}

} // namespace pkmix
