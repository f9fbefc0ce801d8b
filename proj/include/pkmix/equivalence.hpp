#pragma once

// Randomized equivalence suites: each compares a structured fast path with a
// materialized dense evaluation and reports the largest deviation seen.

#include <cstdint>
#include <string>
#include <vector>

#include "dense.hpp"
#include "mixer.hpp"
#include "monarch.hpp"
#include "permutation.hpp"
#include "pk_layer.hpp"
#include "rng.hpp"

namespace pkmix {

struct SuiteResult {
    std::string name;
    std::size_t cases = 0;
    double max_deviation = 0.0;
    double tolerance = 0.0;
    bool expect_mismatch = false;  // negative control: passes when deviation >= tolerance
    bool passed = false;

    void finish() { passed = expect_mismatch ? max_deviation >= tolerance : max_deviation < tolerance; }
};

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

inline Vector random_vector(std::size_t n, Rng& rng) {
    Vector v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

// vec(W X V) against kron(V^T, W) vec(X).
inline SuiteResult vec_identity_suite(std::uint64_t seed, std::size_t trials = 1000, std::size_t max_dim = 8) {
    SuiteResult r{"vec-identity", trials, 0.0, 1e-12};
    Rng rng(seed);
    const auto dim = [&] { return 1 + static_cast<std::size_t>(rng.below(max_dim)); };
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t a = dim(), b = dim(), c = dim(), d = dim();
        const Matrix w = random_matrix(a, b, rng);
        const Matrix x = random_matrix(b, c, rng);
        const Matrix v = random_matrix(c, d, rng);
        const Vector direct = vec(matmul(matmul(w, x), v));
        const Vector viakron = matvec(kron(transpose(v), w), vec(x));
        r.max_deviation = std::max(r.max_deviation, max_abs_diff(direct, viakron));
    }
    r.finish();
    return r;
}

inline PKLayerSpec random_pk_spec(Rng& rng, std::size_t max_dim) {
    const auto dim = [&] { return 1 + static_cast<std::size_t>(rng.below(max_dim)); };
    PKLayerSpec s;
    s.n1 = dim();
    s.n2 = dim();
    s.k = dim();
    s.weight = random_matrix(s.k, s.n2, rng);
    s.j_in = random_permutation(s.n1 * s.n2, rng.next_u64());
    s.j_out = random_permutation(s.n1 * s.k, rng.next_u64());
    s.activation = rng.below(2) == 0 ? Activation::gelu : Activation::linear;
    return s;
}

// pk_forward against phi(W_eff x).
inline SuiteResult pk_forward_suite(std::uint64_t seed, std::size_t trials = 100, std::size_t max_dim = 6) {
    SuiteResult r{"pk-forward", trials, 0.0, 1e-12};
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const PKLayerSpec s = random_pk_spec(rng, max_dim);
        const Vector x = random_vector(s.input_size(), rng);
        const Vector fast = pk_forward(s, x);
        const Vector dense = activate(matvec(effective_weight(s), x), s.activation);
        r.max_deviation = std::max(r.max_deviation, max_abs_diff(fast, dense));
    }
    r.finish();
    return r;
}

// Backward pass of the dense expansion for loss = <r, out>; returns d loss / d x.
inline Vector effective_mlp_input_gradient(const std::vector<DenseLayer>& layers, const Vector& x, const Vector& r) {
    std::vector<Vector> pre;
    Vector h = x;
    for (const auto& l : layers) {
        pre.push_back(matvec(l.weight, h));
        h = activate(pre.back(), l.activation);
    }
    Vector g = r;
    for (std::size_t i = layers.size(); i-- > 0;) {
        if (layers[i].activation == Activation::gelu)
            for (std::size_t k = 0; k < g.size(); ++k) g[k] *= gelu_derivative(pre[i][k]);
        g = matvec(transpose(layers[i].weight), g);
    }
    return g;
}

struct MixerCase {
    MixerConfig config;
    ModelParams params;
};

inline MixerCase random_bare_mixer(Rng& rng, Variant variant, PermutationMode mode, double gamma, std::size_t L,
                                   std::size_t max_dim = 6) {
    const auto dim = [&] { return 1 + static_cast<std::size_t>(rng.below(max_dim)); };
    MixerConfig cfg;
    cfg.variant = variant;
    cfg.permutation_mode = mode;
    cfg.permutation_seed = rng.next_u64();
    cfg.S0 = dim();
    cfg.C0 = dim();
    cfg.S = dim();
    cfg.C = dim();
    cfg.gamma = gamma;
    cfg.L = L;
    cfg.bare_mode = true;
    cfg.init_seed = rng.next_u64();
    return {cfg, init_params(cfg)};
}

struct EffectiveMlpResult {
    SuiteResult forward;
    SuiteResult gradient;
};

// Bare Mixer bodies against their materialized MLP expansion, values and
// input gradients.
inline EffectiveMlpResult effective_mlp_suite(std::uint64_t seed, std::size_t models_per_cell = 4,
                                              std::size_t inputs_per_model = 25) {
    EffectiveMlpResult out{{"effective-mlp-forward", 0, 0.0, 1e-12}, {"effective-mlp-gradient", 0, 0.0, 1e-10}};
    Rng rng(seed);
    for (Variant variant : {Variant::s_mixer, Variant::mlp_mixer})
        for (PermutationMode mode : {PermutationMode::normal, PermutationMode::random})
            for (double gamma : {1.0, 2.0}) {
                if (variant == Variant::s_mixer && gamma != 1.0) continue;
                for (std::size_t L : {1, 2})
                    for (std::size_t m = 0; m < models_per_cell; ++m) {
                        const MixerCase mc = random_bare_mixer(rng, variant, mode, gamma, L);
                        const auto layers = effective_mlp(mc.config, mc.params);
                        for (std::size_t i = 0; i < inputs_per_model; ++i) {
                            const Matrix x = random_matrix(mc.config.S0, mc.config.C, rng);
                            const Matrix r = random_matrix(mc.config.S, mc.config.C, rng);
                            Tape tape;
                            BoundParams bp(tape, mc.params, false);
                            Var xv = tape.variable(x);
                            Var body = ad::model_body(xv, bp, mc.config);
                            Var loss = ad::sum(ad::hadamard(body, tape.constant(r)));
                            tape.backward(loss);
                            const Vector dense = effective_mlp_forward(mc.config, mc.params, vec(x));
                            out.forward.max_deviation =
                                std::max(out.forward.max_deviation, max_abs_diff(vec(body.value()), dense));
                            const Vector g_dense = effective_mlp_input_gradient(layers, vec(x), vec(r));
                            out.gradient.max_deviation =
                                std::max(out.gradient.max_deviation, max_abs_diff(vec(xv.grad()), g_dense));
                            ++out.forward.cases;
                            ++out.gradient.cases;
                        }
                    }
            }
    out.forward.finish();
    out.gradient.finish();
    return out;
}

// vec(phi(W X V)) against phi(M vec(X)) for S = C in [2, max_side]. With
// nonlinear_middle the left side becomes vec(phi(phi(W X) V)), which a single
// Monarch product cannot express; the suite then expects a mismatch >= 1e-3.
inline SuiteResult monarch_suite(std::uint64_t seed, bool nonlinear_middle = false, std::size_t inputs = 100,
                                 std::size_t max_side = 8) {
    SuiteResult r{nonlinear_middle ? "monarch-nonlinear-middle" : "monarch", 0, 0.0, nonlinear_middle ? 1e-3 : 1e-12,
                  nonlinear_middle};
    Rng rng(seed);
    for (std::size_t s = 2; s <= max_side; ++s) {
        const Matrix w = random_matrix(s, s, rng);
        const Matrix v = random_matrix(s, s, rng);
        const MonarchSpec spec = mixer_as_monarch(w, v);
        for (std::size_t i = 0; i < inputs; ++i) {
            const Matrix x = random_matrix(s, s, rng);
            const Matrix wx = nonlinear_middle ? gelu(matmul(w, x)) : matmul(w, x);
            const Vector direct = vec(gelu(matmul(wx, v)));
            const Vector viam = gelu(monarch_apply(spec, vec(x)));
            r.max_deviation = std::max(r.max_deviation, max_abs_diff(direct, viam));
            ++r.cases;
        }
    }
    r.finish();
    return r;
}

} // namespace pkmix
