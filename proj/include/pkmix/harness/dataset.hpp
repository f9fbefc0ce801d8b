#pragma once

// Image datasets: seeded synthetic tasks and two file layouts.
//
// Text layout: one image per line, "label v_1 ... v_{H*W*3}" separated by
// blanks or commas, values in [0, 1], pixel order row-major with interleaved
// channels ((r * W + c) * 3 + ch). Lines that are empty or start with '#' are
// skipped.
//
// Binary layout: fixed-size records of 1 label byte followed by H*W*3 bytes in
// channel-planar order (all red, all green, all blue; each plane row-major),
// byte value / 255. H = W = 32 is the CIFAR-10 file layout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "../checkpoint.hpp"
#include "../mixer.hpp"
#include "../rng.hpp"
#include "../train.hpp"
#include "config.hpp"

namespace pkmix::harness {

enum class SyntheticKind { patch_pattern, gaussian_blobs };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
    if (s == "patch-pattern") return SyntheticKind::patch_pattern;
    if (s == "gaussian-blobs") return SyntheticKind::gaussian_blobs;
    throw config_error("unknown synthetic task '" + s + "' (expected patch-pattern or gaussian-blobs)");
}

struct SyntheticOptions {
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t patch = 4;        // texture tile side
    std::size_t num_classes = 2;  // gaussian-blobs only; patch-pattern has 4
};

namespace detail {

// Uniform noise with a checkerboard tile of side `patch` planted at a random
// pixel offset inside quadrant `label` (0 TL, 1 TR, 2 BL, 3 BR). The tile is
// not aligned to the patch grid, so it usually straddles several patches.
inline Image patch_pattern_image(std::size_t label, Rng& rng, const SyntheticOptions& o) {
    Image img{o.height, o.width, Vector(o.height * o.width * 3), label};
    for (double& v : img.pixels) v = rng.uniform01();
    const std::size_t qh = o.height / 2, qw = o.width / 2;
    const std::size_t r0 = (label / 2) * qh + static_cast<std::size_t>(rng.below(qh - o.patch + 1));
    const std::size_t c0 = (label % 2) * qw + static_cast<std::size_t>(rng.below(qw - o.patch + 1));
    for (std::size_t r = 0; r < o.patch; ++r)
        for (std::size_t c = 0; c < o.patch; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch) img.at(r0 + r, c0 + c, ch) = ((r + c) % 2 == 0) ? 0.9 : 0.1;
    return img;
}

// Class k has a fixed mean colour; pixels are that colour plus N(0, 0.15^2)
// noise, clipped to [0, 1].
inline Image gaussian_blob_image(std::size_t label, Rng& rng, const SyntheticOptions& o) {
    Image img{o.height, o.width, Vector(o.height * o.width * 3), label};
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(o.num_classes);
    const double mean[3] = {0.5 + 0.3 * std::cos(angle), 0.5 + 0.3 * std::sin(angle), 0.5};
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = std::clamp(mean[i % 3] + 0.15 * rng.normal(), 0.0, 1.0);
    return img;
}

} // namespace detail

inline std::size_t synthetic_classes(SyntheticKind kind, const SyntheticOptions& o) {
    return kind == SyntheticKind::patch_pattern ? 4 : o.num_classes;
}

// Image i has label i mod K and its own stream derived from (seed, i), so a
// prefix of the set does not depend on n.
inline std::vector<Image> synthetic_task(SyntheticKind kind, std::uint64_t seed, std::size_t n,
                                         const SyntheticOptions& o = {}) {
    if (o.patch == 0 || o.height % (2 * o.patch) != 0 || o.width % (2 * o.patch) != 0)
        throw value_error("synthetic images need height and width divisible by twice the patch size");
    const std::size_t k = synthetic_classes(kind, o);
    if (k < 2) throw value_error("synthetic tasks need at least two classes");
    std::vector<Image> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, i));
        const std::size_t label = i % k;
        out.push_back(kind == SyntheticKind::patch_pattern ? detail::patch_pattern_image(label, rng, o)
                                                           : detail::gaussian_blob_image(label, rng, o));
    }
    return out;
}

// Index of the quadrant that holds the checkerboard; reads the pattern rule
// back from pixels.
inline std::size_t patch_pattern_rule(const Image& img, std::size_t patch) {
    const std::size_t qh = img.height / 2, qw = img.width / 2;
    for (std::size_t r0 = 0; r0 + patch <= img.height; ++r0)
        for (std::size_t c0 = 0; c0 + patch <= img.width; ++c0) {
            bool tile = true;
            for (std::size_t r = 0; r < patch && tile; ++r)
                for (std::size_t c = 0; c < patch && tile; ++c)
                    for (std::size_t ch = 0; ch < 3 && tile; ++ch)
                        tile = img.at(r0 + r, c0 + c, ch) == (((r + c) % 2 == 0) ? 0.9 : 0.1);
            if (tile) return (r0 / qh) * 2 + (c0 / qw);
        }
    throw value_error("patch_pattern_rule: no planted tile found");
}

struct ImageSet {
    std::vector<Image> images;
    std::size_t num_classes = 0;
    std::size_t height = 0;
    std::size_t width = 0;
};

inline ImageSet read_text_images(std::istream& is, std::size_t height, std::size_t width, std::size_t num_classes) {
    ImageSet set{{}, num_classes, height, width};
    const std::size_t values = height * width * 3;
    std::size_t row = 0;
    for (std::string line; std::getline(is, line);) {
        ++row;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::string norm = t;
        std::replace(norm.begin(), norm.end(), ',', ' ');
        std::istringstream ls(norm);
        std::vector<std::string> tok;
        for (std::string s; ls >> s;) tok.push_back(s);
        if (tok.size() != values + 1)
            throw value_error("dataset row " + std::to_string(row) + ": expected " + std::to_string(values + 1) +
                              " fields, found " + std::to_string(tok.size()));
        Config probe;
        probe.set("label", tok[0]);
        std::size_t label = 0;
        try {
            label = probe.get_size("label");
        } catch (const config_error&) {
            throw value_error("dataset row " + std::to_string(row) + ": label '" + tok[0] + "' is not an integer");
        }
        if (label >= num_classes)
            throw value_error("dataset row " + std::to_string(row) + ": label " + std::to_string(label) +
                              " out of range for " + std::to_string(num_classes) + " classes");
        Image img{height, width, Vector(values), label};
        for (std::size_t i = 0; i < values; ++i) {
            probe.set("v", tok[i + 1]);
            double v = 0.0;
            try {
                v = probe.get_double("v");
            } catch (const config_error&) {
                throw value_error("dataset row " + std::to_string(row) + ": '" + tok[i + 1] + "' is not a number");
            }
            if (!(v >= 0.0 && v <= 1.0))
                throw value_error("dataset row " + std::to_string(row) + ": value " + tok[i + 1] +
                                  " outside [0, 1]");
            img.pixels[i] = v;
        }
        set.images.push_back(std::move(img));
    }
    return set;
}

inline ImageSet read_binary_images(std::istream& is, std::size_t height, std::size_t width, std::size_t num_classes) {
    ImageSet set{{}, num_classes, height, width};
    const std::size_t plane = height * width;
    std::vector<unsigned char> rec(1 + 3 * plane);
    std::size_t index = 0;
    while (true) {
        is.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
        const auto got = static_cast<std::size_t>(is.gcount());
        if (got == 0) break;
        if (got != rec.size())
            throw value_error("binary dataset record " + std::to_string(index) + " is truncated");
        if (rec[0] >= num_classes)
            throw value_error("binary dataset record " + std::to_string(index) + ": label " +
                              std::to_string(rec[0]) + " out of range");
        Image img{height, width, Vector(3 * plane), rec[0]};
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t p = 0; p < plane; ++p) img.pixels[p * 3 + ch] = rec[1 + ch * plane + p] / 255.0;
        set.images.push_back(std::move(img));
        ++index;
    }
    return set;
}

inline void write_text_images(std::ostream& os, const std::vector<Image>& images) {
    for (const auto& img : images) {
        os << img.label;
        for (double v : img.pixels) os << ' ' << pkmix::detail::format_double(v);
        os << '\n';
    }
}

inline void write_binary_images(std::ostream& os, const std::vector<Image>& images) {
    for (const auto& img : images) {
        if (img.label > 255) throw value_error("binary layout stores labels in one byte");
        const std::size_t plane = img.height * img.width;
        std::vector<unsigned char> rec(1 + 3 * plane);
        rec[0] = static_cast<unsigned char>(img.label);
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t p = 0; p < plane; ++p)
                rec[1 + ch * plane + p] =
                    static_cast<unsigned char>(std::lround(std::clamp(img.pixels[p * 3 + ch], 0.0, 1.0) * 255.0));
        os.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    }
}

struct SyntheticSource {
    SyntheticKind kind;
    std::uint64_t seed;
    std::size_t n;
};

// "synthetic:<task>,<seed>,<n>"
inline SyntheticSource parse_synthetic_source(const std::string& body) {
    const auto parts = detail::split(body, ',');
    if (parts.size() != 3) throw config_error("synthetic source must be synthetic:<task>,<seed>,<n>");
    Config probe;
    probe.set("seed", parts[1]);
    probe.set("n", parts[2]);
    return {parse_synthetic_kind(parts[0]), probe.get_u64("seed"), probe.get_size("n")};
}

inline ImageSet load_images(const std::string& source, std::size_t height, std::size_t width, std::size_t num_classes,
                            std::size_t patch) {
    const auto colon = source.find(':');
    if (colon == std::string::npos) throw config_error("data source '" + source + "' lacks a scheme");
    const std::string scheme = source.substr(0, colon);
    const std::string body = source.substr(colon + 1);
    if (scheme == "synthetic") {
        const SyntheticSource s = parse_synthetic_source(body);
        SyntheticOptions o{height, width, patch, num_classes};
        return {synthetic_task(s.kind, s.seed, s.n, o), synthetic_classes(s.kind, o), height, width};
    }
    if (scheme == "text" || scheme == "binary") {
        std::ifstream f(body, scheme == "binary" ? std::ios::binary : std::ios::in);
        if (!f) throw io_error("cannot open dataset file " + body);
        return scheme == "text" ? read_text_images(f, height, width, num_classes)
                                : read_binary_images(f, height, width, num_classes);
    }
    throw config_error("unknown data source scheme '" + scheme + "'");
}

struct DataSplit {
    LabeledSet train;
    LabeledSet test;
    std::vector<std::size_t> test_indices;  // positions in the source set
    std::size_t num_classes = 0;
};

inline LabeledSet to_labeled(const std::vector<Image>& images, const std::vector<std::size_t>& idx,
                             std::size_t patch) {
    LabeledSet s;
    for (std::size_t i : idx) {
        s.inputs.push_back(patchify(images[i], patch));
        s.labels.push_back(images[i].label);
    }
    return s;
}

// Seeded shuffle; the first round(n * test_fraction) shuffled positions form
// the test set. Both sides keep source order.
inline DataSplit split_dataset(const ImageSet& set, double test_fraction, std::uint64_t seed, std::size_t patch) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw config_error("test fraction must lie in [0, 1)");
    const std::size_t n = set.images.size();
    if (n == 0) throw value_error("dataset is empty");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction + 0.5));
    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    DataSplit out;
    out.train = to_labeled(set.images, train, patch);
    out.test = to_labeled(set.images, test, patch);
    out.test_indices = test;
    out.num_classes = set.num_classes;
    return out;
}

inline DataSplit load_dataset(const Config& c) {
    const std::size_t patch = c.get_size("model.patch");
    const ImageSet set = load_images(c.get("data.source"), c.get_size("data.height"), c.get_size("data.width"),
                                     c.get_size("data.classes"), patch);
    return split_dataset(set, c.get_double("data.test_fraction"), c.get_u64("data.split_seed"), patch);
}

} // namespace pkmix::harness
