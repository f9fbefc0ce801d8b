#pragma once

// Text checkpoint container.
//
//   pkmix-checkpoint 1
//   config <n>
//   <n lines of key = value text, seeds included>
//   tensor <name> <rows> <cols> <trainable 0|1>
//   <rows*cols values, column-major, shortest round-trip decimal>
//   permutation <name> <size>
//   <size indices>
//   end
//
// Tensors and permutations appear in model order. Values survive a round trip
// bit-for-bit.

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "mixer.hpp"

namespace pkmix {

struct Checkpoint {
    std::string config_text;
    ModelParams params;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw value_error("checkpoint: bad number '" + s + "'");
    return v;
}

} // namespace detail

inline void write_checkpoint(std::ostream& os, const std::string& config_text, const ModelParams& params) {
    std::vector<std::string> lines;
    std::istringstream cs(config_text);
    for (std::string line; std::getline(cs, line);) lines.push_back(line);
    os << "pkmix-checkpoint 1\n";
    os << "config " << lines.size() << "\n";
    for (const auto& l : lines) os << l << "\n";
    for (const auto& t : params.tensors()) {
        if (t.name.find_first_of(" \t\n") != std::string::npos)
            throw value_error("checkpoint: tensor name contains whitespace");
        os << "tensor " << t.name << " " << t.value.rows() << " " << t.value.cols() << " " << (t.trainable ? 1 : 0)
           << "\n";
        bool first = true;
        for (double v : t.value.data()) {
            if (!first) os << ' ';
            os << detail::format_double(v);
            first = false;
        }
        os << "\n";
    }
    for (const auto& [name, perm] : params.permutations()) {
        os << "permutation " << name << " " << perm.size() << "\n";
        for (std::size_t i = 0; i < perm.size(); ++i) os << (i ? " " : "") << perm[i];
        os << "\n";
    }
    os << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
    const auto fail = [](const std::string& what) { return value_error("checkpoint: " + what); };
    std::string line;
    if (!std::getline(is, line) || line != "pkmix-checkpoint 1") throw fail("missing header");
    Checkpoint ck;
    std::size_t n = 0;
    {
        if (!std::getline(is, line)) throw fail("missing config section");
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag >> n) || tag != "config") throw fail("bad config section header");
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::getline(is, line)) throw fail("truncated config section");
            ck.config_text += line + "\n";
        }
    }
    while (std::getline(is, line)) {
        if (line == "end") return ck;
        std::istringstream ls(line);
        std::string tag, name;
        ls >> tag >> name;
        std::string body;
        if (!std::getline(is, body)) throw fail("truncated entry " + name);
        std::istringstream bs(body);
        if (tag == "tensor") {
            std::size_t rows = 0, cols = 0;
            int trainable = 1;
            if (!(ls >> rows >> cols >> trainable)) throw fail("bad tensor header for " + name);
            Vector values;
            values.reserve(rows * cols);
            for (std::string tok; bs >> tok;) values.push_back(detail::parse_double(tok));
            if (values.size() != rows * cols) throw fail("tensor " + name + " has wrong value count");
            ck.params.add(name, Matrix(rows, cols, std::move(values)), trainable != 0);
        } else if (tag == "permutation") {
            std::size_t size = 0;
            if (!(ls >> size)) throw fail("bad permutation header for " + name);
            std::vector<std::size_t> map;
            map.reserve(size);
            for (std::size_t v; bs >> v;) map.push_back(v);
            if (map.size() != size) throw fail("permutation " + name + " has wrong length");
            ck.params.add_permutation(name, Permutation(std::move(map)));
        } else {
            throw fail("unknown entry '" + tag + "'");
        }
    }
    throw fail("missing end marker");
}

} // namespace pkmix
