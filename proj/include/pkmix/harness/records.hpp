#pragma once

// Result records: one JSON object per line.
//
//   {"fingerprint": "<16 hex digits>", "kind": "<record kind>",
//    "payload": {...}, "seq": <n>}
//
// fingerprint is the FNV-1a hash of the serialized config that produced the
// record. seq counts records from 0 within one output stream; it stands in
// for a wall-clock timestamp so that reruns are byte-identical.

#include <cstdint>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "../spectrum.hpp"
#include "../sizing.hpp"
#include "../train.hpp"

namespace pkmix::harness {

using json = nlohmann::json;

struct ResultRecord {
    std::string fingerprint;
    std::string kind;
    json payload;
};

class RecordWriter {
public:
    explicit RecordWriter(std::ostream& os) : os_(&os) {}

    void emit(const std::string& fingerprint, const std::string& kind, json payload) {
        emit(ResultRecord{fingerprint, kind, std::move(payload)});
    }

    void emit(const ResultRecord& r) {
        std::lock_guard lock(mu_);
        json line = {{"fingerprint", r.fingerprint}, {"kind", r.kind}, {"seq", seq_++}, {"payload", r.payload}};
        *os_ << line.dump() << '\n';
        os_->flush();
    }

    void emit_all(const std::vector<ResultRecord>& rs) {
        for (const auto& r : rs) emit(r);
    }

private:
    std::ostream* os_;
    std::mutex mu_;
    std::uint64_t seq_ = 0;
};

inline json to_json(const EpochMetrics& m) {
    return {{"epoch", m.epoch},         {"lr", m.lr},           {"train_loss", m.train_loss},
            {"train_acc", m.train_acc}, {"test_loss", m.test_loss}, {"test_acc", m.test_acc}};
}

inline json to_json(const sizing::Pair& p) {
    return {{"C", p.C},          {"S", p.S},         {"achieved_omega", p.achieved_omega},
            {"relative_error", p.relative_error}, {"width", p.width}, {"density", p.density}};
}

inline json to_json(const sizing::SizingReport& r) {
    json pairs = json::array();
    for (const auto& p : r.pairs) pairs.push_back(to_json(p));
    return {{"omega", r.omega},
            {"gamma", r.gamma},
            {"pairs", pairs},
            {"optimum", {{"C", r.optimum.C}, {"S", r.optimum.S}, {"m_max", r.optimum.m_max}}},
            {"bounds", {{"lower", r.bounds.lower}, {"upper", r.bounds.upper}}}};
}

inline json to_json(const SpectrumReport& r, bool with_values) {
    json j = {{"a", r.a},         {"omega", r.omega},     {"m", r.m},       {"p", r.p},
              {"largest", r.largest}, {"trials", r.trials}, {"seed", r.seed}};
    if (with_values) j["singular_values"] = r.singular_values;
    return j;
}

} // namespace pkmix::harness
