#pragma once

// Finite-difference gradient checks shared by the unit tests and the
// acceptance binary.

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pkmix/autodiff.hpp"
#include "pkmix/mixer.hpp"
#include "pkmix/train.hpp"

namespace gradcheck {

using namespace pkmix;

using Op = std::function<Var(Tape&, Var)>;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& g) {
    return oracle::to_matrix(oracle::random_grid(r, c, g));
}

// Relative error between the tape gradient of <op(x), r> and central
// differences of the same scalar.
inline double fd_error(const Op& op, const Matrix& x, std::mt19937_64& g) {
    Matrix r;
    {
        Tape probe;
        const Matrix out = op(probe, probe.constant(x)).value();
        r = random_matrix(out.rows(), out.cols(), g);
    }
    const auto scalar = [&](const Matrix& at) {
        Tape t;
        return ad::sum(ad::hadamard(op(t, t.constant(at)), t.constant(r))).value()(0, 0);
    };
    Tape tape;
    Var xv = tape.variable(x);
    tape.backward(ad::sum(ad::hadamard(op(tape, xv), tape.constant(r))));
    return oracle::relative_error(xv.grad(), oracle::finite_difference(scalar, x));
}

template <class Config>
double model_loss(const Config& cfg, const ModelParams& p, const std::vector<Matrix>& xs,
                  const std::vector<std::size_t>& ys) {
    double s = 0.0;
    const auto logits = model_forward(cfg, p, xs);
    for (std::size_t i = 0; i < xs.size(); ++i) s += ad::softmax_cross_entropy(logits[i], ys[i]).loss;
    return s / static_cast<double>(xs.size());
}

// Worst relative error over every trainable tensor of a model.
template <class Config>
double model_fd_error(const Config& cfg, const ModelParams& params, std::size_t s0, std::size_t c0,
                      std::mt19937_64& g) {
    LabeledSet data;
    for (std::size_t i = 0; i < 3; ++i) {
        data.inputs.push_back(random_matrix(s0, c0, g));
        data.labels.push_back(i % cfg.num_classes);
    }
    const std::vector<std::size_t> idx{0, 1, 2};
    const BatchGradient bg = batch_gradient(cfg, params, data, idx);
    double worst = 0.0;
    for (const auto& t : params.tensors()) {
        if (!t.trainable) continue;
        const auto f = [&](const Matrix& v) {
            ModelParams q = params;
            q.set(t.name, v);
            return model_loss(cfg, q, data.inputs, data.labels);
        };
        worst = std::max(worst, oracle::relative_error(bg.grads.at(t.name), oracle::finite_difference(f, t.value)));
    }
    return worst;
}

struct PrimitiveCase {
    std::string name;
    Op op;
    Matrix x;
};

// One case per primitive, each seen through <op(x), r>.
inline std::vector<PrimitiveCase> primitive_cases(std::mt19937_64& g) {
    const Matrix a = random_matrix(3, 4, g), b = random_matrix(4, 2, g), c = random_matrix(3, 4, g);
    const Matrix gain = random_matrix(1, 4, g), bias = random_matrix(1, 4, g);
    const auto j = std::make_shared<Permutation>(random_permutation(12, 5));
    return {
        {"matmul left", [=](Tape& t, Var x) { return ad::matmul(x, t.constant(b)); }, a},
        {"matmul right", [=](Tape& t, Var x) { return ad::matmul(t.constant(a), x); }, b},
        {"matmul both", [](Tape&, Var x) { return ad::matmul(x, ad::transpose(x)); }, a},
        {"transpose", [](Tape&, Var x) { return ad::transpose(x); }, a},
        {"add", [=](Tape& t, Var x) { return ad::add(x, t.constant(c)); }, a},
        {"add self", [](Tape&, Var x) { return ad::add(x, x); }, a},
        {"hadamard", [=](Tape& t, Var x) { return ad::hadamard(x, t.constant(c)); }, a},
        {"hadamard self", [](Tape&, Var x) { return ad::hadamard(x, x); }, a},
        {"reshape", [](Tape&, Var x) { return ad::reshape(x, 6, 2); }, a},
        {"permute", [=](Tape&, Var x) { return ad::permute_reshape(x, j.get(), 2, 6); }, a},
        {"gelu", [](Tape&, Var x) { return ad::gelu(x); }, a},
        {"layer_norm input", [=](Tape& t, Var x) { return ad::layer_norm(x, t.constant(gain), t.constant(bias)); }, a},
        {"layer_norm gain", [=](Tape& t, Var x) { return ad::layer_norm(t.constant(a), x, t.constant(bias)); }, gain},
        {"layer_norm bias", [=](Tape& t, Var x) { return ad::layer_norm(t.constant(a), t.constant(gain), x); }, bias},
        {"mean_rows", [](Tape&, Var x) { return ad::mean_rows(x); }, a},
        {"row bias input", [=](Tape& t, Var x) { return ad::add_row_bias(x, t.constant(bias)); }, a},
        {"row bias", [=](Tape& t, Var x) { return ad::add_row_bias(t.constant(a), x); }, bias},
        {"vec head", [](Tape&, Var x) { return ad::vec_head_row(x, 7); }, a},
        {"sum", [](Tape&, Var x) { return ad::sum(x); }, a},
        {"mean", [](Tape&, Var x) { return ad::mean({ad::sum(x), ad::sum(ad::gelu(x))}); }, a},
        {"cross entropy", [](Tape&, Var x) { return ad::softmax_cross_entropy(x, 2); }, bias},
    };
}

} // namespace gradcheck
