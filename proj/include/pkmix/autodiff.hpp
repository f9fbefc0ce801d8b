#pragma once

// Reverse-mode differentiation over matrix-valued nodes.
//
// A Tape records every primitive application in execution order together with
// the forward values its adjoint rule needs. backward() walks the record once
// in reverse. Node indices are stable, so adjoint closures capture indices and
// never references into the node storage.
//
// Permutations and constant masks are captured by pointer: they must outlive
// the tape (they live in ModelParams for every model in this library).

#include <cmath>
#include <functional>
#include <vector>

#include "dense.hpp"
#include "permutation.hpp"

namespace pkmix {

class Tape;

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    Tape* tape = nullptr;

    bool valid() const noexcept { return tape != nullptr; }
    const Matrix& value() const;
    const Matrix& grad() const;
};

class Tape {
public:
    using Adjoint = std::function<void(Tape&, const Matrix& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
    Var variable(Matrix value) { return push(std::move(value), true, nullptr); }

    Var push(Matrix value, bool requires_grad, Adjoint adjoint) {
        if (replayed_) throw tape_error("cannot record onto a tape that has already been replayed");
        nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, std::move(adjoint)});
        return Var{nodes_.size() - 1, this};
    }

    const Matrix& value(Var v) const { return node(v).value; }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool replayed() const noexcept { return replayed_; }

    // Gradient of the replayed scalar with respect to v. Nodes the adjoint
    // sweep never reached report an all-zero gradient.
    const Matrix& grad(Var v) {
        Node& n = node(v);
        if (!replayed_) throw tape_error("gradient requested before backward()");
        if (!n.requires_grad) throw tape_error("gradient requested for a node that does not require it");
        if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    // Accumulates into the adjoint of v (used by adjoint rules).
    void accumulate(Var v, const Matrix& g) {
        Node& n = node(v);
        if (!n.requires_grad) return;
        if (!g.same_shape(n.value)) throw dimension_error("adjoint shape mismatch");
        if (n.grad.empty()) {
            n.grad = g;
            return;
        }
        auto dst = n.grad.data();
        auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    // Seeds root with `seed` and replays the adjoints of every earlier node.
    void backward(Var root, const Matrix& seed) {
        if (replayed_) throw tape_error("tape replayed twice");
        Node& r = node(root);
        if (!seed.same_shape(r.value)) throw dimension_error("backward: seed shape mismatch");
        replayed_ = true;
        accumulate(root, seed);
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.adjoint || n.grad.empty()) continue;
            // Adjoints only touch lower-indexed nodes, so n.grad stays put.
            n.adjoint(*this, n.grad);
        }
    }

    void backward(Var root, double seed = 1.0) {
        const Matrix& v = node(root).value;
        backward(root, Matrix(v.rows(), v.cols(), seed));
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Adjoint adjoint;
    };

    Node& node(Var v) {
        if (v.tape != this || v.id >= nodes_.size()) throw tape_error("variable was not recorded on this tape");
        return nodes_[v.id];
    }
    const Node& node(Var v) const {
        if (v.tape != this || v.id >= nodes_.size()) throw tape_error("variable was not recorded on this tape");
        return nodes_[v.id];
    }

    std::vector<Node> nodes_;
    bool replayed_ = false;
};

inline const Matrix& Var::value() const {
    if (!tape) throw tape_error("unbound variable");
    return tape->value(*this);
}
inline const Matrix& Var::grad() const {
    if (!tape) throw tape_error("unbound variable");
    return tape->grad(*this);
}

namespace ad {

namespace detail {

inline Tape& same_tape(Var a, Var b) {
    if (!a.tape || a.tape != b.tape) throw tape_error("operands recorded on different tapes");
    return *a.tape;
}

inline Tape& tape_of(Var a) {
    if (!a.tape) throw tape_error("unbound variable");
    return *a.tape;
}

} // namespace detail

inline Var matmul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    return t.push(pkmix::matmul(a.value(), b.value()), rg, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, pkmix::matmul(g, pkmix::transpose(t.value(b))));
        if (t.requires_grad(b)) t.accumulate(b, pkmix::matmul(pkmix::transpose(t.value(a)), g));
    });
}

inline Var transpose(Var a) {
    Tape& t = detail::tape_of(a);
    return t.push(pkmix::transpose(a.value()), t.requires_grad(a),
                  [a](Tape& t, const Matrix& g) { t.accumulate(a, pkmix::transpose(g)); });
}

inline Var add(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    return t.push(pkmix::add(a.value(), b.value()), rg, [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

// Element-wise product. Masks enter as constant nodes and receive no adjoint;
// the adjoint reaching a masked weight is the upstream gradient times the mask.
inline Var hadamard(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    return t.push(pkmix::hadamard(a.value(), b.value()), rg, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, pkmix::hadamard(g, t.value(b)));
        if (t.requires_grad(b)) t.accumulate(b, pkmix::hadamard(g, t.value(a)));
    });
}

// mat(vec(a), rows, cols): a column-major reinterpretation.
inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
    Tape& t = detail::tape_of(a);
    const Matrix& v = a.value();
    if (rows * cols != v.size()) throw dimension_error("reshape: element count mismatch");
    return t.push(Matrix(rows, cols, v.values()), t.requires_grad(a), [a](Tape& t, const Matrix& g) {
        const Matrix& src = t.value(a);
        t.accumulate(a, Matrix(src.rows(), src.cols(), g.values()));
    });
}

// mat(J vec(a), rows, cols). The adjoint scatters back through J^-1 = J^T.
// A null permutation means identity.
inline Var permute_reshape(Var a, const Permutation* j, std::size_t rows, std::size_t cols) {
    if (j == nullptr) return reshape(a, rows, cols);
    Tape& t = detail::tape_of(a);
    const Matrix& v = a.value();
    if (rows * cols != v.size() || j->size() != v.size())
        throw dimension_error("permute_reshape: size mismatch");
    return t.push(Matrix(rows, cols, pkmix::apply(*j, v.data())), t.requires_grad(a),
                  [a, j](Tape& t, const Matrix& g) {
                      const Matrix& src = t.value(a);
                      Vector back(src.size());
                      const auto gv = g.data();
                      for (std::size_t i = 0; i < gv.size(); ++i) back[(*j)[i]] = gv[i];
                      t.accumulate(a, Matrix(src.rows(), src.cols(), std::move(back)));
                  });
}

inline Var gelu(Var a) {
    Tape& t = detail::tape_of(a);
    return t.push(pkmix::gelu(a.value()), t.requires_grad(a), [a](Tape& t, const Matrix& g) {
        const Matrix& x = t.value(a);
        Matrix d(x.rows(), x.cols());
        auto dv = d.data();
        const auto xv = x.data();
        const auto gv = g.data();
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = gv[i] * gelu_derivative(xv[i]);
        t.accumulate(a, d);
    });
}

inline Var activate(Var a, Activation act) { return act == Activation::gelu ? gelu(a) : a; }

// Row-wise layer normalization; gain and bias are 1 x cols.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = default_layer_norm_eps) {
    Tape& t = detail::same_tape(x, gain);
    detail::same_tape(x, bias);
    const Matrix& xv = x.value();
    const Matrix& gv = gain.value();
    const Matrix& bv = bias.value();
    if (gv.rows() != 1 || gv.cols() != xv.cols() || !bv.same_shape(gv))
        throw dimension_error("layer_norm: gain/bias must be 1x" + std::to_string(xv.cols()));
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    Matrix normalized(rows, cols);
    Vector inv_std(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += xv(i, j);
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = xv(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) normalized(i, j) = (xv(i, j) - mean) * inv_std[i];
    }
    Matrix out(rows, cols);
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) out(i, j) = normalized(i, j) * gv(0, j) + bv(0, j);
    pkmix::detail::require_finite(out.data(), "layer_norm");
    const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
    return t.push(std::move(out), rg,
                  [x, gain, bias, normalized = std::move(normalized), inv_std = std::move(inv_std)](
                      Tape& t, const Matrix& g) {
                      const std::size_t rows = g.rows();
                      const std::size_t cols = g.cols();
                      const Matrix& gv = t.value(gain);
                      if (t.requires_grad(gain) || t.requires_grad(bias)) {
                          Matrix dg(1, cols), db(1, cols);
                          for (std::size_t j = 0; j < cols; ++j)
                              for (std::size_t i = 0; i < rows; ++i) {
                                  dg(0, j) += g(i, j) * normalized(i, j);
                                  db(0, j) += g(i, j);
                              }
                          t.accumulate(gain, dg);
                          t.accumulate(bias, db);
                      }
                      if (!t.requires_grad(x)) return;
                      Matrix dx(rows, cols);
                      const double n = static_cast<double>(cols);
                      for (std::size_t i = 0; i < rows; ++i) {
                          double mean_dn = 0.0, mean_dn_n = 0.0;
                          for (std::size_t j = 0; j < cols; ++j) {
                              const double dn = g(i, j) * gv(0, j);
                              mean_dn += dn;
                              mean_dn_n += dn * normalized(i, j);
                          }
                          mean_dn /= n;
                          mean_dn_n /= n;
                          for (std::size_t j = 0; j < cols; ++j) {
                              const double dn = g(i, j) * gv(0, j);
                              dx(i, j) = inv_std[i] * (dn - mean_dn - normalized(i, j) * mean_dn_n);
                          }
                      }
                      t.accumulate(x, dx);
                  });
}

// Mean over rows (token pooling): rows x cols -> 1 x cols.
inline Var mean_rows(Var a) {
    Tape& t = detail::tape_of(a);
    const Matrix& v = a.value();
    Matrix out(1, v.cols());
    for (std::size_t j = 0; j < v.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.rows(); ++i) s += v(i, j);
        out(0, j) = s / static_cast<double>(v.rows());
    }
    return t.push(std::move(out), t.requires_grad(a), [a](Tape& t, const Matrix& g) {
        const Matrix& v = t.value(a);
        Matrix d(v.rows(), v.cols());
        const double inv = 1.0 / static_cast<double>(v.rows());
        for (std::size_t j = 0; j < v.cols(); ++j)
            for (std::size_t i = 0; i < v.rows(); ++i) d(i, j) = g(0, j) * inv;
        t.accumulate(a, d);
    });
}

// a + 1 * bias, with bias 1 x cols broadcast over rows.
inline Var add_row_bias(Var a, Var bias) {
    Tape& t = detail::same_tape(a, bias);
    const Matrix& av = a.value();
    const Matrix& bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != av.cols()) throw dimension_error("add_row_bias: shape mismatch");
    Matrix out = av;
    for (std::size_t j = 0; j < av.cols(); ++j)
        for (std::size_t i = 0; i < av.rows(); ++i) out(i, j) += bv(0, j);
    const bool rg = t.requires_grad(a) || t.requires_grad(bias);
    return t.push(std::move(out), rg, [a, bias](Tape& t, const Matrix& g) {
        t.accumulate(a, g);
        if (t.requires_grad(bias)) {
            Matrix db(1, g.cols());
            for (std::size_t j = 0; j < g.cols(); ++j)
                for (std::size_t i = 0; i < g.rows(); ++i) db(0, j) += g(i, j);
            t.accumulate(bias, db);
        }
    });
}

// First n entries of vec(a), as a 1 x n row.
inline Var vec_head_row(Var a, std::size_t n) {
    Tape& t = detail::tape_of(a);
    const Matrix& v = a.value();
    if (n == 0 || n > v.size()) throw dimension_error("vec_head_row: bad length");
    Vector head(v.values().begin(), v.values().begin() + static_cast<std::ptrdiff_t>(n));
    return t.push(Matrix(1, n, std::move(head)), t.requires_grad(a), [a](Tape& t, const Matrix& g) {
        const Matrix& v = t.value(a);
        Matrix d(v.rows(), v.cols());
        std::copy(g.data().begin(), g.data().end(), d.data().begin());
        t.accumulate(a, d);
    });
}

// Sum of all entries, as 1 x 1.
inline Var sum(Var a) {
    Tape& t = detail::tape_of(a);
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return t.push(Matrix(1, 1, s), t.requires_grad(a), [a](Tape& t, const Matrix& g) {
        const Matrix& v = t.value(a);
        t.accumulate(a, Matrix(v.rows(), v.cols(), g(0, 0)));
    });
}

// Mean of 1 x 1 scalars, summed in index order.
inline Var mean(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw value_error("mean of no scalars");
    Tape& t = detail::tape_of(scalars.front());
    double s = 0.0;
    bool rg = false;
    for (Var v : scalars) {
        detail::same_tape(scalars.front(), v);
        if (v.value().size() != 1) throw dimension_error("mean: operands must be 1x1");
        s += v.value()(0, 0);
        rg = rg || t.requires_grad(v);
    }
    const double inv = 1.0 / static_cast<double>(scalars.size());
    return t.push(Matrix(1, 1, s * inv), rg, [scalars, inv](Tape& t, const Matrix& g) {
        const Matrix share(1, 1, g(0, 0) * inv);
        for (Var v : scalars) t.accumulate(v, share);
    });
}

struct SoftmaxCrossEntropy {
    double loss = 0.0;
    Vector adjoint;  // softmax - one_hot
};

// Max-subtracted softmax cross-entropy for one example.
inline SoftmaxCrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size())
        throw value_error("label " + std::to_string(label) + " out of range for " +
                          std::to_string(logits.size()) + " classes");
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    SoftmaxCrossEntropy out;
    out.loss = std::log(z) + top - logits[label];
    out.adjoint.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) out.adjoint[k] = std::exp(logits[k] - top) / z;
    out.adjoint[label] -= 1.0;
    return out;
}

inline Var softmax_cross_entropy(Var logits, std::size_t label) {
    Tape& t = detail::tape_of(logits);
    auto sce = softmax_cross_entropy(logits.value().data(), label);
    const Matrix& lv = logits.value();
    Matrix adj(lv.rows(), lv.cols(), std::move(sce.adjoint));
    return t.push(Matrix(1, 1, sce.loss), t.requires_grad(logits),
                  [logits, adj = std::move(adj)](Tape& t, const Matrix& g) {
                      t.accumulate(logits, scale(adj, g(0, 0)));
                  });
}

} // namespace ad
} // namespace pkmix
