#pragma once

// S-Mixer, MLP-Mixer (normal and random-permuted) and the sparse-weight MLP,
// assembled from PK layers with skip connections, layer normalization, a
// per-patch FC front end, token pooling and a classifier head.
//
// Layout conventions
//   - Feature matrices are tokens x channels (S x C), column-major, so vec()
//     is column stacking.
//   - Token-side PK layers have n1 = C blocks of width S; with identity
//     permutations they compute phi(W X) directly.
//   - Channel-side PK layers have n1 = S blocks of width C and take the
//     commutation pair (J_c(S,C), J_c(C,S)) in normal mode, computing
//     phi(U V) through (I_S (x) V^T) on vec(U^T).
//   - Channel weights are stored in right-multiplication form (U V, U W3 W4);
//     the PK layer consumes their transposes.
//   - In random mode the outer permutations of every mixing block are frozen
//     uniform draws; the permutation between the two layers of an MLP block is
//     the identity (a product of a fixed and a uniform permutation is uniform).

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "autodiff.hpp"
#include "dense.hpp"
#include "pk_layer.hpp"
#include "permutation.hpp"
#include "rng.hpp"

namespace pkmix {

enum class Variant { s_mixer, mlp_mixer };
enum class PermutationMode { normal, random };

inline const char* to_string(Variant v) { return v == Variant::s_mixer ? "s_mixer" : "mlp_mixer"; }
inline const char* to_string(PermutationMode m) { return m == PermutationMode::normal ? "normal" : "random"; }

struct MixerConfig {
    Variant variant = Variant::s_mixer;
    PermutationMode permutation_mode = PermutationMode::normal;
    std::uint64_t permutation_seed = 0;
    std::size_t S0 = 1;  // input tokens (patches)
    std::size_t C0 = 1;  // input channels (3 P^2)
    std::size_t S = 1;
    std::size_t C = 1;
    double gamma = 1.0;  // forced to 1 for s_mixer
    std::size_t L = 1;
    std::size_t num_classes = 2;
    bool bare_mode = false;  // no skip connections, no layer normalization
    std::uint64_t init_seed = 0;

    void validate() const {
        if (S0 == 0 || C0 == 0 || S == 0 || C == 0 || num_classes == 0)
            throw value_error("mixer dimensions must be positive");
        if (variant == Variant::mlp_mixer && !(gamma >= 1.0))
            throw value_error("expansion factor must be >= 1");
    }

    double effective_gamma() const noexcept { return variant == Variant::s_mixer ? 1.0 : gamma; }
    std::size_t token_hidden() const { return hidden(S); }
    std::size_t channel_hidden() const { return hidden(C); }
    std::size_t token_input(std::size_t block) const noexcept { return block == 0 ? S0 : S; }

private:
    std::size_t hidden(std::size_t n) const {
        const auto h = static_cast<std::size_t>(std::llround(effective_gamma() * static_cast<double>(n)));
        return h == 0 ? 1 : h;
    }
};

struct SWMLPConfig {
    std::size_t m = 1;       // width
    double p = 1.0;          // nonzero fraction of each mask
    double gamma = 1.0;      // hidden expansion when hidden_blocks is set
    bool hidden_blocks = false;
    std::size_t L = 1;
    std::uint64_t mask_seed = 0;
    std::size_t num_classes = 2;
    std::size_t S0 = 1;
    std::size_t C0 = 1;
    std::uint64_t init_seed = 0;

    void validate() const {
        if (m == 0 || S0 == 0 || C0 == 0 || num_classes == 0) throw value_error("SW-MLP sizes must be positive");
        if (!(p > 0.0 && p <= 1.0)) throw value_error("SW-MLP nonzero fraction must lie in (0, 1]");
        if (hidden_blocks && !(gamma >= 1.0)) throw value_error("expansion factor must be >= 1");
    }

    // Channels of the per-patch FC; vec of the S0 x C embedding is truncated to m.
    std::size_t embed_channels() const noexcept { return (m + S0 - 1) / S0; }
    std::size_t hidden() const {
        const auto h = static_cast<std::size_t>(std::llround(gamma * static_cast<double>(m)));
        return h == 0 ? 1 : h;
    }
};

// ---------------------------------------------------------------------------
// Parameters

struct Tensor {
    std::string name;
    Matrix value;
    bool trainable = true;
};

class ModelParams {
public:
    void add(std::string name, Matrix value, bool trainable = true) {
        if (index_.count(name)) throw value_error("duplicate parameter " + name);
        index_.emplace(name, tensors_.size());
        tensors_.push_back(Tensor{std::move(name), std::move(value), trainable});
    }

    void add_permutation(std::string name, Permutation p) {
        if (perm_index_.count(name)) throw value_error("duplicate permutation " + name);
        perm_index_.emplace(name, permutations_.size());
        permutations_.emplace_back(std::move(name), std::move(p));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    bool has_permutation(const std::string& name) const { return perm_index_.count(name) != 0; }

    const Tensor& tensor(const std::string& name) const { return tensors_[lookup(name)]; }
    const Matrix& at(const std::string& name) const { return tensor(name).value; }

    // Replacing a frozen tensor is rejected.
    void set(const std::string& name, Matrix value) {
        Tensor& t = tensors_[lookup(name)];
        if (!t.trainable) throw value_error("parameter " + name + " is frozen");
        if (!value.same_shape(t.value)) throw dimension_error("set: shape mismatch for " + name);
        t.value = std::move(value);
    }

    const Permutation& permutation(const std::string& name) const {
        auto it = perm_index_.find(name);
        if (it == perm_index_.end()) throw value_error("unknown permutation " + name);
        return permutations_[it->second].second;
    }

    // Overrides a frozen permutation; used to pin random-mode models to fixed
    // choices. Size must match.
    void replace_permutation(const std::string& name, Permutation p) {
        auto it = perm_index_.find(name);
        if (it == perm_index_.end()) throw value_error("unknown permutation " + name);
        if (permutations_[it->second].second.size() != p.size())
            throw dimension_error("replace_permutation: size mismatch for " + name);
        permutations_[it->second].second = std::move(p);
    }

    const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
    std::vector<Tensor>& mutable_tensors() noexcept { return tensors_; }
    const std::vector<std::pair<std::string, Permutation>>& permutations() const noexcept {
        return permutations_;
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_)
            if (t.trainable) n += t.value.size();
        return n;
    }

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        if (a.tensors_.size() != b.tensors_.size() || a.permutations_ != b.permutations_) return false;
        for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
            const auto& x = a.tensors_[i];
            const auto& y = b.tensors_[i];
            if (x.name != y.name || x.trainable != y.trainable || !(x.value == y.value)) return false;
        }
        return true;
    }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw value_error("unknown parameter " + name);
        return it->second;
    }

    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::pair<std::string, Permutation>> permutations_;
    std::unordered_map<std::string, std::size_t> perm_index_;
};

namespace detail {

inline std::uint64_t name_tag(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Gaussian with std 1 / sqrt(fan_in); the stream depends only on (seed, name).
inline Matrix gaussian_init(std::size_t rows, std::size_t cols, std::size_t fan_in, std::uint64_t seed,
                            const std::string& name) {
    Rng rng(derive_seed(seed, name_tag(name)));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(rows, cols);
    for (double& v : w.data()) v = stddev * rng.normal();
    return w;
}

inline std::string block_name(std::size_t b, const char* rest) { return "b" + std::to_string(b) + "." + rest; }

inline void add_layer_norm(ModelParams& p, const std::string& prefix, std::size_t n) {
    p.add(prefix + ".gain", Matrix(1, n, 1.0));
    p.add(prefix + ".bias", Matrix(1, n, 0.0));
}

} // namespace detail

// Exactly round(rows * cols * p) ones, placed uniformly without replacement
// (partial Fisher-Yates over cell indices).
inline Matrix generate_mask(std::size_t rows, std::size_t cols, double p, std::uint64_t seed) {
    if (!(p > 0.0 && p <= 1.0)) throw value_error("mask fraction must lie in (0, 1]");
    const std::size_t cells = rows * cols;
    const auto ones = static_cast<std::size_t>(std::floor(static_cast<double>(cells) * p + 0.5));
    Matrix mask(rows, cols);
    std::vector<std::size_t> idx(cells);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < ones; ++i) {
        const auto k = i + static_cast<std::size_t>(rng.below(cells - i));
        std::swap(idx[i], idx[k]);
        mask.data()[idx[i]] = 1.0;
    }
    return mask;
}

// Fixed permutations of the normal Mixer for one block.
struct BlockPermutations {
    Permutation token_in, token_out, channel_in, channel_out;
};

inline BlockPermutations normal_permutations(const MixerConfig& cfg, std::size_t block) {
    return {Permutation::identity(cfg.C * cfg.token_input(block)), Permutation::identity(cfg.C * cfg.S),
            commutation(cfg.S, cfg.C), commutation(cfg.C, cfg.S)};
}

inline BlockPermutations random_permutations(const MixerConfig& cfg, std::size_t block) {
    const auto seed = [&](std::uint64_t side) { return derive_seed(cfg.permutation_seed, block * 4 + side); };
    return {random_permutation(cfg.C * cfg.token_input(block), seed(0)),
            random_permutation(cfg.C * cfg.S, seed(1)), random_permutation(cfg.S * cfg.C, seed(2)),
            random_permutation(cfg.S * cfg.C, seed(3))};
}

inline ModelParams init_params(const MixerConfig& cfg) {
    cfg.validate();
    ModelParams p;
    const auto seed = cfg.init_seed;
    using detail::block_name;
    using detail::gaussian_init;
    p.add("patch.w", gaussian_init(cfg.C, cfg.C0, cfg.C0, seed, "patch.w"));
    const std::size_t ht = cfg.token_hidden();
    const std::size_t hc = cfg.channel_hidden();
    for (std::size_t b = 0; b < cfg.L; ++b) {
        const std::size_t s_in = cfg.token_input(b);
        if (!cfg.bare_mode) {
            if (b == 0) {
                const auto n = block_name(b, "skip.w");
                p.add(n, gaussian_init(cfg.S, cfg.S0, cfg.S0, seed, n));
                detail::add_layer_norm(p, block_name(b, "skip.ln"), cfg.C);
            }
            detail::add_layer_norm(p, block_name(b, "token.ln"), cfg.C);
            detail::add_layer_norm(p, block_name(b, "channel.ln"), cfg.C);
        }
        if (cfg.variant == Variant::s_mixer) {
            const auto w = block_name(b, "token.w");
            const auto v = block_name(b, "channel.v");
            p.add(w, gaussian_init(cfg.S, s_in, s_in, seed, w));
            p.add(v, gaussian_init(cfg.C, cfg.C, cfg.C, seed, v));
        } else {
            const auto w1 = block_name(b, "token.w1");
            const auto w2 = block_name(b, "token.w2");
            const auto w3 = block_name(b, "channel.w3");
            const auto w4 = block_name(b, "channel.w4");
            p.add(w1, gaussian_init(ht, s_in, s_in, seed, w1));
            p.add(w2, gaussian_init(cfg.S, ht, ht, seed, w2));
            p.add(w3, gaussian_init(cfg.C, hc, cfg.C, seed, w3));
            p.add(w4, gaussian_init(hc, cfg.C, hc, seed, w4));
        }
        BlockPermutations perms = cfg.permutation_mode == PermutationMode::normal
                                      ? normal_permutations(cfg, b)
                                      : random_permutations(cfg, b);
        p.add_permutation(block_name(b, "token.j_in"), std::move(perms.token_in));
        p.add_permutation(block_name(b, "token.j_out"), std::move(perms.token_out));
        p.add_permutation(block_name(b, "channel.j_in"), std::move(perms.channel_in));
        p.add_permutation(block_name(b, "channel.j_out"), std::move(perms.channel_out));
    }
    if (!cfg.bare_mode) detail::add_layer_norm(p, "head.ln", cfg.C);
    p.add("head.w", gaussian_init(cfg.num_classes, cfg.C, cfg.C, seed, "head.w"));
    p.add("head.b", Matrix(1, cfg.num_classes, 0.0));
    return p;
}

inline ModelParams init_params(const SWMLPConfig& cfg) {
    cfg.validate();
    ModelParams p;
    const auto seed = cfg.init_seed;
    using detail::block_name;
    using detail::gaussian_init;
    const std::size_t ce = cfg.embed_channels();
    p.add("patch.w", gaussian_init(ce, cfg.C0, cfg.C0, seed, "patch.w"));
    for (std::size_t b = 0; b < cfg.L; ++b) {
        detail::add_layer_norm(p, block_name(b, "ln"), cfg.m);
        const auto mseed = [&](std::uint64_t k) { return derive_seed(cfg.mask_seed, b * 2 + k); };
        if (!cfg.hidden_blocks) {
            const auto w = block_name(b, "w");
            // Fan-in of a masked row is m p on average.
            const auto fan = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.m * cfg.p)));
            p.add(w, gaussian_init(cfg.m, cfg.m, fan, seed, w));
            p.add(block_name(b, "mask"), generate_mask(cfg.m, cfg.m, cfg.p, mseed(0)), false);
        } else {
            const std::size_t h = cfg.hidden();
            const auto w1 = block_name(b, "w1");
            const auto w2 = block_name(b, "w2");
            const auto f1 = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.m * cfg.p)));
            const auto f2 = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(h * cfg.p)));
            p.add(w1, gaussian_init(h, cfg.m, f1, seed, w1));
            p.add(block_name(b, "mask1"), generate_mask(h, cfg.m, cfg.p, mseed(0)), false);
            p.add(w2, gaussian_init(cfg.m, h, f2, seed, w2));
            p.add(block_name(b, "mask2"), generate_mask(cfg.m, h, cfg.p, mseed(1)), false);
        }
    }
    p.add("head.w", gaussian_init(cfg.num_classes, cfg.m, cfg.m, seed, "head.w"));
    p.add("head.b", Matrix(1, cfg.num_classes, 0.0));
    return p;
}

// Pins every block of a model to the normal Mixer's fixed permutations.
inline void use_normal_permutations(const MixerConfig& cfg, ModelParams& params) {
    for (std::size_t b = 0; b < cfg.L; ++b) {
        BlockPermutations perms = normal_permutations(cfg, b);
        params.replace_permutation(detail::block_name(b, "token.j_in"), std::move(perms.token_in));
        params.replace_permutation(detail::block_name(b, "token.j_out"), std::move(perms.token_out));
        params.replace_permutation(detail::block_name(b, "channel.j_in"), std::move(perms.channel_in));
        params.replace_permutation(detail::block_name(b, "channel.j_out"), std::move(perms.channel_out));
    }
}

// Structural nonzeros of all mixing-layer effective weights in one block.
// Each layer contributes n1 * k * n2.
inline std::size_t block_mixing_nnz(const MixerConfig& cfg, std::size_t block) {
    const std::size_t s_in = cfg.token_input(block);
    if (cfg.variant == Variant::s_mixer) return nnz(cfg.C, s_in, cfg.S) + nnz(cfg.S, cfg.C, cfg.C);
    const std::size_t ht = cfg.token_hidden();
    const std::size_t hc = cfg.channel_hidden();
    return nnz(cfg.C, s_in, ht) + nnz(cfg.C, ht, cfg.S) + nnz(cfg.S, cfg.C, hc) + nnz(cfg.S, hc, cfg.C);
}

inline std::size_t mixing_layers_per_block(const MixerConfig& cfg) noexcept {
    return cfg.variant == Variant::s_mixer ? 2 : 4;
}

// ---------------------------------------------------------------------------
// Bound parameters: tape variables for one forward pass

class BoundParams {
public:
    BoundParams(Tape& tape, const ModelParams& params, bool with_grad) : tape_(&tape), params_(&params) {
        for (const auto& t : params.tensors())
            vars_.emplace(t.name, (with_grad && t.trainable) ? tape.variable(t.value) : tape.constant(t.value));
    }

    Var operator[](const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw tape_error("parameter " + name + " was not recorded on this tape");
        return it->second;
    }

    // Cached derived node (transposes, masked weights) shared by a batch.
    template <class Make>
    Var derived(const std::string& key, Make&& make) {
        auto it = derived_.find(key);
        if (it != derived_.end()) return it->second;
        Var v = make();
        derived_.emplace(key, v);
        return v;
    }

    const Permutation* permutation(const std::string& name) const { return &params_->permutation(name); }
    const ModelParams& params() const noexcept { return *params_; }
    Tape& tape() const noexcept { return *tape_; }

private:
    Tape* tape_;
    const ModelParams* params_;
    std::unordered_map<std::string, Var> vars_;
    std::unordered_map<std::string, Var> derived_;
};

// Gradients of every trainable tensor after tape.backward().
inline std::map<std::string, Matrix> collect_gradients(const BoundParams& bound) {
    std::map<std::string, Matrix> out;
    for (const auto& t : bound.params().tensors())
        if (t.trainable) out.emplace(t.name, bound[t.name].grad());
    return out;
}

// ---------------------------------------------------------------------------
// Front end

// Image storage: row-major pixels, interleaved channels: (r * W + c) * 3 + ch.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    Vector pixels;
    std::size_t label = 0;

    double at(std::size_t r, std::size_t c, std::size_t ch) const { return pixels[(r * width + c) * 3 + ch]; }
    double& at(std::size_t r, std::size_t c, std::size_t ch) { return pixels[(r * width + c) * 3 + ch]; }
};

// Non-overlapping P x P patches -> S0 x C0 with S0 = HW / P^2, C0 = 3 P^2.
// Patches are scanned row-major over the patch grid; inside a patch the
// column index is (row * P + col) * 3 + channel.
inline Matrix patchify(const Image& img, std::size_t patch) {
    if (patch == 0 || img.height % patch != 0 || img.width % patch != 0)
        throw dimension_error("patchify: patch size " + std::to_string(patch) + " does not divide " +
                              detail::shape_str(img.height, img.width));
    if (img.pixels.size() != img.height * img.width * 3) throw dimension_error("patchify: pixel buffer size");
    const std::size_t gw = img.width / patch;
    const std::size_t s0 = (img.height / patch) * gw;
    const std::size_t c0 = 3 * patch * patch;
    Matrix out(s0, c0);
    for (std::size_t s = 0; s < s0; ++s) {
        const std::size_t r0 = (s / gw) * patch;
        const std::size_t c0px = (s % gw) * patch;
        for (std::size_t r = 0; r < patch; ++r)
            for (std::size_t c = 0; c < patch; ++c)
                for (std::size_t ch = 0; ch < 3; ++ch)
                    out(s, (r * patch + c) * 3 + ch) = img.at(r0 + r, c0px + c, ch);
    }
    return out;
}

inline Matrix per_patch_fc(const Matrix& x, const Matrix& w) {
    if (x.cols() != w.cols())
        throw dimension_error("per_patch_fc: input has " + std::to_string(x.cols()) +
                              " channels, weight expects " + std::to_string(w.cols()));
    return matmul(x, transpose(w));
}

// ---------------------------------------------------------------------------
// Tape-level blocks

namespace ad {

// mat(phi(J_out (I_{n1} (x) W) J_in vec(x))), reshaped to out_rows x out_cols.
// A null permutation is the identity. Without j_out the result is k x n1.
inline Var pk_layer(Var x, Var weight, const Permutation* j_in, const Permutation* j_out, std::size_t n1,
                    std::size_t out_rows, std::size_t out_cols, Activation act) {
    const std::size_t n2 = weight.value().cols();
    Var y = permute_reshape(x, j_in, n2, n1);
    Var z = matmul(weight, y);
    if (j_out != nullptr || z.value().rows() != out_rows) z = permute_reshape(z, j_out, out_rows, out_cols);
    return activate(z, act);
}

inline Var per_patch_fc(Var x, BoundParams& bp) {
    Var wt = bp.derived("patch.w^T", [&] { return transpose(bp["patch.w"]); });
    return matmul(x, wt);
}

inline Var layer_norm(Var x, BoundParams& bp, const std::string& prefix) {
    return layer_norm(x, bp[prefix + ".gain"], bp[prefix + ".bias"]);
}

inline Var token_mixing_block(Var x, BoundParams& bp, const MixerConfig& cfg, std::size_t b) {
    using pkmix::detail::block_name;
    const std::size_t s_in = cfg.token_input(b);
    if (x.value().rows() != s_in || x.value().cols() != cfg.C)
        throw dimension_error("token_mixing_block: expected " + pkmix::detail::shape_str(s_in, cfg.C) + " input");
    const Permutation* j_in = bp.permutation(block_name(b, "token.j_in"));
    const Permutation* j_out = bp.permutation(block_name(b, "token.j_out"));
    Var h = cfg.bare_mode ? x : layer_norm(x, bp, block_name(b, "token.ln"));
    Var mixed;
    if (cfg.variant == Variant::s_mixer) {
        mixed = pk_layer(h, bp[block_name(b, "token.w")], j_in, j_out, cfg.C, cfg.S, cfg.C, Activation::gelu);
    } else {
        const std::size_t ht = cfg.token_hidden();
        Var hidden = pk_layer(h, bp[block_name(b, "token.w1")], j_in, nullptr, cfg.C, ht, cfg.C, Activation::gelu);
        mixed = pk_layer(hidden, bp[block_name(b, "token.w2")], nullptr, j_out, cfg.C, cfg.S, cfg.C,
                         Activation::linear);
    }
    if (cfg.bare_mode) return mixed;
    if (b == 0) {
        Var skip = layer_norm(matmul(bp[block_name(b, "skip.w")], x), bp, block_name(b, "skip.ln"));
        return add(skip, mixed);
    }
    return add(x, mixed);
}

inline Var channel_mixing_block(Var u, BoundParams& bp, const MixerConfig& cfg, std::size_t b) {
    using pkmix::detail::block_name;
    if (u.value().rows() != cfg.S || u.value().cols() != cfg.C)
        throw dimension_error("channel_mixing_block: expected " + pkmix::detail::shape_str(cfg.S, cfg.C) + " input");
    const Permutation* j_in = bp.permutation(block_name(b, "channel.j_in"));
    const Permutation* j_out = bp.permutation(block_name(b, "channel.j_out"));
    Var h = cfg.bare_mode ? u : layer_norm(u, bp, block_name(b, "channel.ln"));
    const auto transposed = [&](const std::string& name) {
        return bp.derived(name + "^T", [&] { return transpose(bp[name]); });
    };
    Var mixed;
    if (cfg.variant == Variant::s_mixer) {
        mixed = pk_layer(h, transposed(block_name(b, "channel.v")), j_in, j_out, cfg.S, cfg.S, cfg.C,
                         Activation::gelu);
    } else {
        const std::size_t hc = cfg.channel_hidden();
        Var hidden = pk_layer(h, transposed(block_name(b, "channel.w3")), j_in, nullptr, cfg.S, hc, cfg.S,
                              Activation::gelu);
        mixed = pk_layer(hidden, transposed(block_name(b, "channel.w4")), nullptr, j_out, cfg.S, cfg.S, cfg.C,
                         Activation::linear);
    }
    return cfg.bare_mode ? mixed : add(u, mixed);
}

// Per-patch FC output -> output of the last base block.
inline Var model_body(Var embedded, BoundParams& bp, const MixerConfig& cfg) {
    Var x = embedded;
    for (std::size_t b = 0; b < cfg.L; ++b) {
        x = token_mixing_block(x, bp, cfg, b);
        x = channel_mixing_block(x, bp, cfg, b);
    }
    return x;
}

inline Var model_logits(Var patches, BoundParams& bp, const MixerConfig& cfg) {
    if (patches.value().rows() != cfg.S0 || patches.value().cols() != cfg.C0)
        throw dimension_error("model input must be " + pkmix::detail::shape_str(cfg.S0, cfg.C0));
    Var body = model_body(per_patch_fc(patches, bp), bp, cfg);
    Var h = cfg.bare_mode ? body : layer_norm(body, bp, "head.ln");
    Var pooled = mean_rows(h);
    Var wt = bp.derived("head.w^T", [&] { return transpose(bp["head.w"]); });
    return add_row_bias(matmul(pooled, wt), bp["head.b"]);
}

// x (1 x m) -> x + phi((M o W) LN(x)), or the two-layer masked form.
inline Var sw_block(Var x, BoundParams& bp, const SWMLPConfig& cfg, std::size_t b) {
    using pkmix::detail::block_name;
    if (x.value().rows() != 1 || x.value().cols() != cfg.m)
        throw dimension_error("sw_block: expected a 1x" + std::to_string(cfg.m) + " row");
    const auto masked_t = [&](const char* w, const char* mask) {
        const auto wn = block_name(b, w);
        return bp.derived(wn + "*mask^T", [&] { return transpose(hadamard(bp[wn], bp[block_name(b, mask)])); });
    };
    Var h = layer_norm(x, bp, block_name(b, "ln"));
    Var out;
    if (!cfg.hidden_blocks) {
        out = gelu(matmul(h, masked_t("w", "mask")));
    } else {
        Var hidden = gelu(matmul(h, masked_t("w1", "mask1")));
        out = gelu(matmul(hidden, masked_t("w2", "mask2")));
    }
    return add(x, out);
}

inline Var model_logits(Var patches, BoundParams& bp, const SWMLPConfig& cfg) {
    if (patches.value().rows() != cfg.S0 || patches.value().cols() != cfg.C0)
        throw dimension_error("model input must be " + pkmix::detail::shape_str(cfg.S0, cfg.C0));
    Var x = vec_head_row(per_patch_fc(patches, bp), cfg.m);
    for (std::size_t b = 0; b < cfg.L; ++b) x = sw_block(x, bp, cfg, b);
    Var wt = bp.derived("head.w^T", [&] { return transpose(bp["head.w"]); });
    return add_row_bias(matmul(x, wt), bp["head.b"]);
}

} // namespace ad

// ---------------------------------------------------------------------------
// Value-level entry points (each runs a private, gradient-free tape)

inline Matrix token_mixing_block(const Matrix& x, const ModelParams& params, const MixerConfig& cfg,
                                 std::size_t block) {
    Tape tape;
    BoundParams bp(tape, params, false);
    return ad::token_mixing_block(tape.constant(x), bp, cfg, block).value();
}

inline Matrix channel_mixing_block(const Matrix& u, const ModelParams& params, const MixerConfig& cfg,
                                   std::size_t block) {
    Tape tape;
    BoundParams bp(tape, params, false);
    return ad::channel_mixing_block(tape.constant(u), bp, cfg, block).value();
}

inline Vector sw_block(const Vector& x, const ModelParams& params, const SWMLPConfig& cfg, std::size_t block) {
    Tape tape;
    BoundParams bp(tape, params, false);
    return ad::sw_block(tape.constant(Matrix(1, x.size(), x)), bp, cfg, block).value().values();
}

inline Matrix model_body(const Matrix& embedded, const ModelParams& params, const MixerConfig& cfg) {
    Tape tape;
    BoundParams bp(tape, params, false);
    return ad::model_body(tape.constant(embedded), bp, cfg).value();
}

template <class Config>
std::vector<Vector> model_forward(const Config& cfg, const ModelParams& params, const std::vector<Matrix>& batch) {
    Tape tape;
    BoundParams bp(tape, params, false);
    std::vector<Vector> logits;
    logits.reserve(batch.size());
    for (const auto& x : batch) logits.push_back(ad::model_logits(tape.constant(x), bp, cfg).value().values());
    return logits;
}

// ---------------------------------------------------------------------------
// Effective-MLP expansion of the block stack (bare models only)

// The PK layers of one base block, in application order, with materializable
// permutations. Hidden layers of an MLP block use identity permutations.
inline std::vector<PKLayerSpec> block_pk_layers(const MixerConfig& cfg, const ModelParams& params, std::size_t b) {
    using detail::block_name;
    std::vector<PKLayerSpec> layers;
    const auto& tj_in = params.permutation(block_name(b, "token.j_in"));
    const auto& tj_out = params.permutation(block_name(b, "token.j_out"));
    const auto& cj_in = params.permutation(block_name(b, "channel.j_in"));
    const auto& cj_out = params.permutation(block_name(b, "channel.j_out"));
    const auto layer = [](std::size_t n1, Matrix w, Permutation in, Permutation out, Activation act) {
        PKLayerSpec s;
        s.n1 = n1;
        s.n2 = w.cols();
        s.k = w.rows();
        s.weight = std::move(w);
        s.j_in = std::move(in);
        s.j_out = std::move(out);
        s.activation = act;
        s.validate();
        return s;
    };
    if (cfg.variant == Variant::s_mixer) {
        layers.push_back(layer(cfg.C, params.at(block_name(b, "token.w")), tj_in, tj_out, Activation::gelu));
        layers.push_back(
            layer(cfg.S, transpose(params.at(block_name(b, "channel.v"))), cj_in, cj_out, Activation::gelu));
    } else {
        const std::size_t ht = cfg.token_hidden();
        const std::size_t hc = cfg.channel_hidden();
        layers.push_back(layer(cfg.C, params.at(block_name(b, "token.w1")), tj_in,
                               Permutation::identity(cfg.C * ht), Activation::gelu));
        layers.push_back(layer(cfg.C, params.at(block_name(b, "token.w2")), Permutation::identity(cfg.C * ht),
                               tj_out, Activation::linear));
        layers.push_back(layer(cfg.S, transpose(params.at(block_name(b, "channel.w3"))), cj_in,
                               Permutation::identity(cfg.S * hc), Activation::gelu));
        layers.push_back(layer(cfg.S, transpose(params.at(block_name(b, "channel.w4"))),
                               Permutation::identity(cfg.S * hc), cj_out, Activation::linear));
    }
    return layers;
}

struct DenseLayer {
    Matrix weight;
    Activation activation;
};

// The block stack as a plain MLP on vec(X): one materialized effective weight
// per PK layer.
inline std::vector<DenseLayer> effective_mlp(const MixerConfig& cfg, const ModelParams& params,
                                             std::size_t limit = default_oracle_limit) {
    if (!cfg.bare_mode) throw value_error("effective MLP expansion requires a bare-mode model");
    std::vector<DenseLayer> out;
    for (std::size_t b = 0; b < cfg.L; ++b)
        for (const auto& spec : block_pk_layers(cfg, params, b))
            out.push_back({effective_weight(spec, limit), spec.activation});
    return out;
}

inline Vector effective_mlp_forward(const MixerConfig& cfg, const ModelParams& params, const Vector& x,
                                    std::size_t limit = default_oracle_limit) {
    if (x.size() != cfg.S0 * cfg.C) throw dimension_error("effective_mlp_forward: input must be vec of S0 x C");
    Vector h = x;
    for (const auto& layer : effective_mlp(cfg, params, limit)) h = activate(matvec(layer.weight, h), layer.activation);
    return h;
}

} // namespace pkmix
