#pragma once

// Flat key = value configuration text.
//
//   # comment
//   model.kind = s_mixer
//   train.epochs = 20
//
// Keys are dotted names; values run to the end of the line with surrounding
// blanks trimmed. Serialization writes every key in sorted order, so the
// serialized form (and its fingerprint) is canonical.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "../errors.hpp"

namespace pkmix::harness {

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

} // namespace detail

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Config {
public:
    static Config parse(std::string_view text) {
        Config c;
        std::size_t line_no = 0;
        std::istringstream is{std::string(text)};
        for (std::string line; std::getline(is, line);) {
            ++line_no;
            const std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw config_error("config line " + std::to_string(line_no) + ": expected key = value");
            const std::string key = detail::trim(std::string_view(t).substr(0, eq));
            if (key.empty()) throw config_error("config line " + std::to_string(line_no) + ": empty key");
            c.values_[key] = detail::trim(std::string_view(t).substr(eq + 1));
        }
        return c;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw config_error("missing config key " + key);
        return it->second;
    }

    double get_double(const std::string& key) const {
        const std::string& s = get(key);
        double v = 0.0;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
            throw config_error("config key " + key + ": '" + s + "' is not a number");
        return v;
    }

    std::uint64_t get_u64(const std::string& key) const {
        const std::string& s = get(key);
        std::uint64_t v = 0;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
            throw config_error("config key " + key + ": '" + s + "' is not a nonnegative integer");
        return v;
    }

    std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

    bool get_bool(const std::string& key) const {
        const std::string& s = get(key);
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw config_error("config key " + key + ": '" + s + "' is not a boolean");
    }

    std::vector<std::string> get_list(const std::string& key) const {
        const std::string& s = get(key);
        if (s.empty()) return {};
        return detail::split(s, ',');
    }

    std::vector<std::size_t> get_size_list(const std::string& key) const {
        std::vector<std::size_t> out;
        for (const auto& item : get_list(key)) {
            std::size_t v = 0;
            auto r = std::from_chars(item.data(), item.data() + item.size(), v);
            if (r.ec != std::errc{} || r.ptr != item.data() + item.size())
                throw config_error("config key " + key + ": '" + item + "' is not a nonnegative integer");
            out.push_back(v);
        }
        return out;
    }

    // Overlays other's keys; with strict set, keys unknown to *this are rejected.
    void merge(const Config& other, bool strict) {
        for (const auto& [k, v] : other.values_) {
            if (strict && !has(k)) throw config_error("unknown config key " + k);
            values_[k] = v;
        }
    }

    std::string serialize() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    std::string fingerprint() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(serialize())));
        return buf;
    }

    const std::map<std::string, std::string>& values() const noexcept { return values_; }

private:
    std::map<std::string, std::string> values_;
};

// Every key an experiment config may set, with its default.
inline Config experiment_defaults() {
    return Config::parse(R"(
model.kind = s_mixer
model.permutation_mode = normal
model.permutation_seed = 1
model.S = 16
model.C = 16
model.gamma = 1
model.L = 1
model.bare = false
model.init_seed = 1
model.patch = 4
model.m = 256
model.p = 1
model.hidden_blocks = false
model.mask_seed = 1
data.source = synthetic:patch-pattern,1,1536
data.height = 16
data.width = 16
data.classes = 4
data.test_fraction = 0.25
data.split_seed = 1
train.lr = 0.02
train.lr_floor = 0
train.momentum = 0.9
train.epochs = 20
train.batch_size = 128
train.shuffle_seed = 1
sweep.kind = pairs
sweep.omega = 4096
sweep.gamma = 1
sweep.candidates = 4,8,16
sweep.width = 256
sweep.patches = 2,4,8
sweep.modes = normal,random
sweep.seeds = 1,2,3
sweep.workers = 0
output.dir = out
)");
}

inline Config load_experiment_config(std::string_view text) {
    Config c = experiment_defaults();
    c.merge(Config::parse(text), true);
    return c;
}

} // namespace pkmix::harness
