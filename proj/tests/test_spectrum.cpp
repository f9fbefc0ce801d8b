#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pkmix/pk_layer.hpp"
#include "pkmix/spectrum.hpp"

using namespace pkmix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& g) {
    return oracle::to_matrix(oracle::random_grid(r, c, g));
}

Matrix random_symmetric(std::size_t n, std::mt19937_64& g) {
    const Matrix a = random_matrix(n, n, g);
    return scale(add(a, transpose(a)), 0.5);
}

Matrix diag(const Vector& d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

// Random sparse matrix with a handful of nonzeros, so several components form.
SparseMatrix random_sparse(std::size_t rows, std::size_t cols, std::size_t nnz, std::mt19937_64& g) {
    SparseMatrix s;
    s.rows = rows;
    s.cols = cols;
    std::normal_distribution<double> n;
    for (std::size_t k = 0; k < nnz; ++k) s.entries.push_back({g() % rows, g() % cols, n(g)});
    return s;
}

} // namespace

TEST_CASE("symmetric_eigen examples", "[spectrum]") {
    const auto d = symmetric_eigen(diag({1.0, -2.0, 5.0}));
    CHECK(d.values == Vector{5.0, 1.0, -2.0});
    const auto two = symmetric_eigen(Matrix::from_rows({{2, 1}, {1, 2}}));
    CHECK(two.values[0] == Catch::Approx(3.0).epsilon(1e-14));
    CHECK(two.values[1] == Catch::Approx(1.0).epsilon(1e-14));
    CHECK_THROWS_AS(symmetric_eigen(Matrix::from_rows({{1, 2}, {0, 1}})), value_error);
    CHECK_THROWS_AS(symmetric_eigen(Matrix(2, 3)), dimension_error);
    CHECK(symmetric_eigen(Matrix::from_rows({{4}})).values == Vector{4.0});
}

TEST_CASE("eigen decomposition reconstructs its input", "[spectrum][property]") {
    std::mt19937_64 g(1);
    for (std::size_t n : {2, 5, 8, 8, 8, 13, 20}) {
        const Matrix a = random_symmetric(n, g);
        const auto e = symmetric_eigen(a);
        for (std::size_t i = 1; i < n; ++i) CHECK(e.values[i] <= e.values[i - 1]);
        const Matrix v = e.vectors;
        const Matrix rebuilt = matmul(v, matmul(diag(e.values), transpose(v)));
        const double scale_a = std::max(1.0, frobenius_norm(a));
        CHECK(max_abs_diff(rebuilt, a) < 1e-8 * scale_a);
        CHECK(max_abs_diff(matmul(transpose(v), v), Matrix::identity(n)) < 1e-8);
        for (std::size_t k = 0; k < n; ++k) {
            Vector col(n);
            for (std::size_t i = 0; i < n; ++i) col[i] = v(i, k);
            Vector av = matvec(a, col);
            for (std::size_t i = 0; i < n; ++i) av[i] -= e.values[k] * col[i];
            CHECK(max_abs(av) < 1e-8 * scale_a);
        }
        // Trace equals the eigenvalue sum.
        double tr = 0.0, sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            tr += a(i, i);
            sum += e.values[i];
        }
        CHECK(std::abs(tr - sum) < 1e-10 * scale_a);
    }
}

TEST_CASE("singular values", "[spectrum]") {
    CHECK(singular_values(Matrix::identity(4)) == Vector(4, 1.0));
    const Vector d = singular_values(diag({3.0, -4.0}));
    CHECK(d[0] == Catch::Approx(4.0));
    CHECK(d[1] == Catch::Approx(3.0));
    std::mt19937_64 g(2);
    const Matrix z = random_matrix(5, 3, g);
    const Vector sv = singular_values(z);
    REQUIRE(sv.size() == 3);
    const auto dual = symmetric_eigen(matmul(transpose(z), z), false);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(sv[i] - std::sqrt(std::max(0.0, dual.values[i]))) < 1e-8);
    const Vector svt = singular_values(transpose(z));
    CHECK(max_abs_diff(sv, svt) < 1e-10);
    // Sum of squares equals the squared Frobenius norm.
    double s2 = 0.0;
    for (double v : sv) s2 += v * v;
    CHECK(s2 == Catch::Approx(frobenius_norm(z) * frobenius_norm(z)).epsilon(1e-12));
}

TEST_CASE("singular values ignore permutations", "[spectrum][property]") {
    std::mt19937_64 g(3);
    for (int t = 0; t < 20; ++t) {
        const std::size_t r = 2 + g() % 8, c = 2 + g() % 8;
        const Matrix a = random_matrix(r, c, g);
        const Matrix pa = matmul(to_matrix(random_permutation(r, g())), matmul(a, to_matrix(random_permutation(c, g()))));
        CHECK(max_abs_diff(singular_values(a), singular_values(pa)) < 1e-10);
    }
}

TEST_CASE("kronecker with the identity duplicates the spectrum", "[spectrum][property]") {
    std::mt19937_64 g(4);
    for (std::size_t n1 = 1; n1 <= 4; ++n1) {
        const Matrix w = random_matrix(3, 3, g);
        const Vector base = singular_values(w);
        const Vector dup = singular_values(kron(Matrix::identity(n1), w));
        REQUIRE(dup.size() == 3 * n1);
        for (std::size_t i = 0; i < dup.size(); ++i) CHECK(std::abs(dup[i] - base[i / n1]) < 1e-10);
    }
}

TEST_CASE("pk_spectrum", "[spectrum]") {
    const Matrix w = diag({2.0, 1.0});
    auto spec = make_pk_layer(3, w);
    spec.j_in = random_permutation(6, 1);
    spec.j_out = random_permutation(6, 2);
    CHECK(pk_spectrum(w, 3, spec.j_in, spec.j_out) == Vector{2, 2, 2, 1, 1, 1});
    CHECK(max_abs_diff(singular_values(effective_weight(spec)), Vector{2, 2, 2, 1, 1, 1}) < 1e-12);

    std::mt19937_64 g(5);
    const Matrix r = random_matrix(4, 4, g);
    CHECK(pk_spectrum(r, 1, Permutation::identity(4), Permutation::identity(4)) == singular_values(r));
    for (std::size_t n1 = 1; n1 <= 5; ++n1) {
        const Vector expected = pk_spectrum(r, n1, Permutation::identity(4 * n1), Permutation::identity(4 * n1));
        for (std::uint64_t s = 0; s < 5; ++s) {
            auto ps = make_pk_layer(n1, r);
            ps.j_in = random_permutation(4 * n1, 10 * s + 1);
            ps.j_out = random_permutation(4 * n1, 10 * s + 2);
            CHECK(max_abs_diff(singular_values(effective_weight(ps)), expected) < 1e-10);
        }
    }
    CHECK_THROWS_AS(pk_spectrum(r, 2, Permutation::identity(4), Permutation::identity(8)), dimension_error);
    CHECK_THROWS_AS(pk_spectrum(r, 0, Permutation::identity(4), Permutation::identity(4)), value_error);
}

TEST_CASE("sparse weight shape", "[spectrum]") {
    const auto dense = sparse_weight_shape(1e4, 0.0);
    CHECK(dense.m == 100);
    CHECK(dense.p == 1.0);
    const auto s = sparse_weight_shape(1e3, 1.5);
    CHECK(s.m == 5623);
    CHECK(s.p == Catch::Approx(std::pow(1e3, -1.5)));
    CHECK(static_cast<double>(s.m) * s.m * s.p == Catch::Approx(1e3).epsilon(1e-3));
    CHECK_THROWS_AS(sparse_weight_shape(-1, 0), value_error);
    CHECK_THROWS_AS(sparse_random_weight(1e3, 1.5, 1, 1000), size_limit_error);
}

TEST_CASE("sparse_random_weight", "[spectrum]") {
    const auto z0 = sparse_random_weight(400, 0.0, 3);
    CHECK(z0.rows == 20);
    CHECK(z0.entries.size() == 400);
    const auto a = sparse_random_weight(1e4, 0.5, 7), b = sparse_random_weight(1e4, 0.5, 7);
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t k = 0; k < a.entries.size(); ++k) CHECK(a.entries[k].value == b.entries[k].value);
    const auto c = sparse_random_weight(1e4, 0.5, 8);
    CHECK(c.entries.size() != a.entries.size());
    for (const auto& e : a.entries) {
        CHECK(e.row < a.rows);
        CHECK(e.col < a.cols);
    }
}

TEST_CASE("bernoulli mask counts follow the binomial law", "[spectrum][statistics]") {
    for (const auto& [omega, a] : {std::pair{1e4, 0.5}, std::pair{1e4, 1.0}, std::pair{1e3, 1.5}}) {
        const auto shape = sparse_weight_shape(omega, a);
        const double cells = static_cast<double>(shape.m) * shape.m;
        const double mean = cells * shape.p, sigma = std::sqrt(cells * shape.p * (1 - shape.p));
        CHECK(mean == Catch::Approx(omega).epsilon(1e-3));
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto z = sparse_random_weight(omega, a, seed);
            CHECK(std::abs(static_cast<double>(z.entries.size()) - mean) <= 3 * sigma);
        }
    }
}

TEST_CASE("component decomposition matches the dense solver", "[spectrum][property]") {
    std::mt19937_64 g(6);
    for (int t = 0; t < 40; ++t) {
        const std::size_t r = 1 + g() % 30, c = 1 + g() % 30;
        const auto s = random_sparse(r, c, g() % 40, g);
        const Vector dense = singular_values(s.to_dense());
        const Vector split = sparse_singular_values(s);
        REQUIRE(split.size() == std::min(r, c));
        // Compare squares: near-zero values only resolve to sqrt(eps).
        for (std::size_t i = 0; i < dense.size(); ++i) CHECK(std::abs(dense[i] * dense[i] - split[i] * split[i]) < 1e-10);
        CHECK(s.squared_norm() == Catch::Approx(frobenius_norm(s.to_dense()) * frobenius_norm(s.to_dense())));
    }
    SparseMatrix dup;
    dup.rows = dup.cols = 2;
    dup.entries = {{0, 0, 1.0}, {0, 0, 2.0}, {1, 1, -1.0}};
    CHECK(max_abs_diff(sparse_singular_values(dup), Vector{3.0, 1.0}) < 1e-14);
}

TEST_CASE("normalized spectrum", "[spectrum]") {
    std::mt19937_64 g(7);
    const Matrix z = random_matrix(12, 7, g);
    const auto r = normalized_spectrum(z);
    REQUIRE(r.singular_values.size() == 7);
    double s2 = 0.0;
    for (double v : r.singular_values) s2 += v * v;
    // trace(Q / c) / rows == 1
    CHECK(s2 / 12.0 == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(r.largest == r.singular_values.front());
    const Vector raw = singular_values(z);
    const double c = frobenius_norm(z) * frobenius_norm(z) / 12.0;
    for (std::size_t i = 0; i < 7; ++i) CHECK(r.singular_values[i] == Catch::Approx(raw[i] / std::sqrt(c)).epsilon(1e-10));
    CHECK_THROWS_AS(normalized_spectrum(Matrix(3, 3)), value_error);

    for (double a : {0.0, 1.0, 1.5}) {
        const auto trial = sparse_spectrum_trial(1e3, a, 4);
        double t2 = 0.0;
        for (double v : trial.singular_values) t2 += v * v;
        CHECK(t2 / static_cast<double>(trial.m) == Catch::Approx(1.0).epsilon(1e-10));
        CHECK(trial.a == a);
        CHECK(trial.singular_values.size() == trial.m);
    }
}

TEST_CASE("dense gaussian spectra sit near the Marchenko-Pastur edge", "[spectrum]") {
    double sum = 0.0;
    for (std::uint64_t s = 1; s <= 3; ++s) sum += normalized_spectrum(dense_gaussian(256, 256, s)).largest;
    const double mean = sum / 3;
    CHECK(mean >= 1.90);
    CHECK(mean <= 2.15);
    const double rect = normalized_spectrum(dense_gaussian(512, 128, 11)).largest;
    CHECK(std::abs(rect - 3.0) / 3.0 < 0.05);
}
