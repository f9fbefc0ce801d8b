#pragma once

// Mini-batch training with Nesterov SGD and a per-epoch cosine schedule.
//
// Update (lookahead form, as in common deep-learning libraries):
//     v <- mu v + g
//     p <- p - lr (g + mu v)
// Learning rate at epoch e of E:
//     lr_e = floor + (lr0 - floor) (1 + cos(pi e / (E - 1))) / 2
// so epoch 0 runs at lr0 and the last epoch at the floor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "mixer.hpp"
#include "rng.hpp"

namespace pkmix {

// Patchified inputs with labels.
struct LabeledSet {
    std::vector<Matrix> inputs;
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return inputs.size(); }
};

struct TrainConfig {
    double learning_rate = 0.02;
    double lr_floor = 0.0;
    double momentum = 0.9;
    std::size_t epochs = 1;
    std::size_t batch_size = 128;
    std::uint64_t shuffle_seed = 0;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw value_error("learning rate must be finite and nonnegative");
        if (!(lr_floor >= 0.0) || lr_floor > learning_rate) throw value_error("lr floor must lie in [0, lr]");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw value_error("momentum must lie in [0, 1)");
        if (batch_size == 0) throw value_error("batch size must be positive");
    }
};

inline double cosine_lr(const TrainConfig& t, std::size_t epoch) {
    if (t.epochs <= 1) return t.learning_rate;
    const double frac = static_cast<double>(epoch) / static_cast<double>(t.epochs - 1);
    return t.lr_floor + (t.learning_rate - t.lr_floor) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
};

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] > v[best]) best = k;
    return best;
}

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

template <class Config>
Evaluation evaluate(const Config& cfg, const ModelParams& params, const LabeledSet& data,
                    std::size_t chunk = 256) {
    if (data.size() == 0) return {};
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        Tape tape;
        BoundParams bp(tape, params, false);
        for (std::size_t i = start; i < end; ++i) {
            const Matrix logits = ad::model_logits(tape.constant(data.inputs[i]), bp, cfg).value();
            loss += ad::softmax_cross_entropy(logits.data(), data.labels[i]).loss;
            if (argmax(logits.data()) == data.labels[i]) ++correct;
        }
    }
    const auto n = static_cast<double>(data.size());
    return {loss / n, static_cast<double>(correct) / n};
}

// Mean loss over one batch and gradients for every trainable tensor.
struct BatchGradient {
    double loss = 0.0;
    std::size_t correct = 0;
    std::map<std::string, Matrix> grads;
};

template <class Config>
BatchGradient batch_gradient(const Config& cfg, const ModelParams& params, const LabeledSet& data,
                             std::span<const std::size_t> indices) {
    Tape tape;
    BoundParams bp(tape, params, true);
    std::vector<Var> losses;
    losses.reserve(indices.size());
    BatchGradient out;
    for (std::size_t i : indices) {
        Var logits = ad::model_logits(tape.constant(data.inputs[i]), bp, cfg);
        if (argmax(logits.value().data()) == data.labels[i]) ++out.correct;
        losses.push_back(ad::softmax_cross_entropy(logits, data.labels[i]));
    }
    Var loss = ad::mean(losses);
    out.loss = loss.value()(0, 0);
    for (double v : loss.value().data())
        if (!std::isfinite(v)) throw numeric_error("training diverged: loss is not finite");
    tape.backward(loss);
    out.grads = collect_gradients(bp);
    return out;
}

class NesterovSGD {
public:
    explicit NesterovSGD(double momentum) : momentum_(momentum) {}

    void step(ModelParams& params, const std::map<std::string, Matrix>& grads, double lr) {
        for (auto& t : params.mutable_tensors()) {
            if (!t.trainable) continue;
            auto g = grads.find(t.name);
            if (g == grads.end()) continue;
            auto [it, fresh] = velocity_.try_emplace(t.name, t.value.rows(), t.value.cols());
            Matrix& v = it->second;
            auto vd = v.data();
            auto pd = t.value.data();
            auto gd = g->second.data();
            for (std::size_t k = 0; k < pd.size(); ++k) {
                vd[k] = momentum_ * vd[k] + gd[k];
                pd[k] -= lr * (gd[k] + momentum_ * vd[k]);
            }
            for (double x : pd)
                if (!std::isfinite(x)) throw numeric_error("training diverged: parameter " + t.name + " is not finite");
        }
    }

private:
    double momentum_;
    std::map<std::string, Matrix> velocity_;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Train metrics are running means over the epoch's batches (pre-update);
// test metrics are full evaluations after the epoch.
template <class Config>
TrainResult train(const Config& cfg, ModelParams params, const LabeledSet& train_set, const LabeledSet& test_set,
                  const TrainConfig& tcfg, const EpochCallback& on_epoch = {}) {
    tcfg.validate();
    if (train_set.size() == 0) throw value_error("training set is empty");
    if (train_set.inputs.size() != train_set.labels.size()) throw dimension_error("inputs and labels differ in count");
    NesterovSGD opt(tcfg.momentum);
    TrainResult result;
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(tcfg.shuffle_seed, epoch));
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = cosine_lr(tcfg, epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const BatchGradient bg = batch_gradient(cfg, params, train_set, idx);
            loss_sum += bg.loss * static_cast<double>(idx.size());
            correct += bg.correct;
            opt.step(params, bg.grads, m.lr);
        }
        const auto n = static_cast<double>(train_set.size());
        m.train_loss = loss_sum / n;
        m.train_acc = static_cast<double>(correct) / n;
        const Evaluation ev = evaluate(cfg, params, test_set);
        m.test_loss = ev.loss;
        m.test_acc = ev.accuracy;
        result.history.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    result.params = std::move(params);
    return result;
}

} // namespace pkmix
