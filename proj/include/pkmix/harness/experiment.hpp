#pragma once

// Experiment drivers behind the command-line front end: training runs, grid
// sweeps with aggregation tables, and spectrum studies.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "../checkpoint.hpp"
#include "../mixer.hpp"
#include "../sizing.hpp"
#include "../spectrum.hpp"
#include "../train.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "records.hpp"

namespace pkmix::harness {

enum class ModelKind { s_mixer, mlp_mixer, sw_mlp };

struct ModelSpec {
    ModelKind kind = ModelKind::s_mixer;
    MixerConfig mixer;
    SWMLPConfig sw;
};

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "s_mixer") return ModelKind::s_mixer;
    if (s == "mlp_mixer") return ModelKind::mlp_mixer;
    if (s == "sw_mlp") return ModelKind::sw_mlp;
    throw config_error("unknown model.kind '" + s + "' (expected s_mixer, mlp_mixer or sw_mlp)");
}

inline PermutationMode parse_permutation_mode(const std::string& s) {
    if (s == "normal") return PermutationMode::normal;
    if (s == "random") return PermutationMode::random;
    throw config_error("unknown permutation mode '" + s + "' (expected normal or random)");
}

// S0 and C0 follow from the image size and patch size P.
inline ModelSpec model_from_config(const Config& c, std::size_t num_classes) {
    ModelSpec spec;
    spec.kind = parse_model_kind(c.get("model.kind"));
    const std::size_t patch = c.get_size("model.patch");
    const std::size_t h = c.get_size("data.height"), w = c.get_size("data.width");
    if (patch == 0 || h % patch != 0 || w % patch != 0)
        throw config_error("model.patch must divide data.height and data.width");
    const std::size_t s0 = (h / patch) * (w / patch);
    const std::size_t c0 = 3 * patch * patch;
    if (spec.kind == ModelKind::sw_mlp) {
        SWMLPConfig& s = spec.sw;
        s.m = c.get_size("model.m");
        s.p = c.get_double("model.p");
        s.gamma = c.get_double("model.gamma");
        s.hidden_blocks = c.get_bool("model.hidden_blocks");
        s.L = c.get_size("model.L");
        s.mask_seed = c.get_u64("model.mask_seed");
        s.num_classes = num_classes;
        s.S0 = s0;
        s.C0 = c0;
        s.init_seed = c.get_u64("model.init_seed");
        s.validate();
    } else {
        MixerConfig& m = spec.mixer;
        m.variant = spec.kind == ModelKind::s_mixer ? Variant::s_mixer : Variant::mlp_mixer;
        m.permutation_mode = parse_permutation_mode(c.get("model.permutation_mode"));
        m.permutation_seed = c.get_u64("model.permutation_seed");
        m.S0 = s0;
        m.C0 = c0;
        m.S = c.get_size("model.S");
        m.C = c.get_size("model.C");
        m.gamma = c.get_double("model.gamma");
        m.L = c.get_size("model.L");
        m.num_classes = num_classes;
        m.bare_mode = c.get_bool("model.bare");
        m.init_seed = c.get_u64("model.init_seed");
        m.validate();
    }
    return spec;
}

inline TrainConfig train_from_config(const Config& c) {
    TrainConfig t;
    t.learning_rate = c.get_double("train.lr");
    t.lr_floor = c.get_double("train.lr_floor");
    t.momentum = c.get_double("train.momentum");
    t.epochs = c.get_size("train.epochs");
    t.batch_size = c.get_size("train.batch_size");
    t.shuffle_seed = c.get_u64("train.shuffle_seed");
    t.validate();
    return t;
}

struct RunOutcome {
    std::string fingerprint;
    std::vector<EpochMetrics> history;
    ModelParams params;
    std::vector<ResultRecord> records;
    double final_test_acc = 0.0;
};

// Trains one config on an already loaded split. Records: one "epoch" per
// epoch and a closing "train_summary".
inline RunOutcome run_training(const Config& c, const DataSplit& data) {
    const ModelSpec spec = model_from_config(c, data.num_classes);
    const TrainConfig tcfg = train_from_config(c);
    RunOutcome out;
    out.fingerprint = c.fingerprint();
    TrainResult tr;
    if (spec.kind == ModelKind::sw_mlp)
        tr = train(spec.sw, init_params(spec.sw), data.train, data.test, tcfg);
    else
        tr = train(spec.mixer, init_params(spec.mixer), data.train, data.test, tcfg);
    for (const auto& m : tr.history) out.records.push_back({out.fingerprint, "epoch", to_json(m)});
    out.history = std::move(tr.history);
    out.params = std::move(tr.params);
    out.final_test_acc = out.history.empty() ? 0.0 : out.history.back().test_acc;
    json summary = {{"model", c.get("model.kind")},
                    {"trainable_parameters", out.params.trainable_count()},
                    {"train_size", data.train.size()},
                    {"test_size", data.test.size()},
                    {"epochs", out.history.size()},
                    {"final_test_acc", out.final_test_acc},
                    {"final_train_acc", out.history.empty() ? 0.0 : out.history.back().train_acc}};
    if (spec.kind != ModelKind::sw_mlp) {
        summary["S"] = spec.mixer.S;
        summary["C"] = spec.mixer.C;
        summary["permutation_mode"] = to_string(spec.mixer.permutation_mode);
        std::size_t mixing = 0;
        for (std::size_t b = 0; b < spec.mixer.L; ++b) mixing += block_mixing_nnz(spec.mixer, b);
        summary["mixing_nonzeros"] = mixing;
    }
    out.records.push_back({out.fingerprint, "train_summary", summary});
    return out;
}

inline std::string metrics_table(const std::vector<EpochMetrics>& h) {
    std::string out = "epoch\tlr\ttrain_loss\ttrain_acc\ttest_loss\ttest_acc\n";
    for (const auto& m : h) {
        out += std::to_string(m.epoch);
        for (double v : {m.lr, m.train_loss, m.train_acc, m.test_loss, m.test_acc})
            out += "\t" + pkmix::detail::format_double(v);
        out += "\n";
    }
    return out;
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw io_error("cannot write " + p.string());
    f << text;
}

// Output directory: PKMIX_OUTPUT_DIR wins over output.dir.
inline std::filesystem::path output_dir(const Config& c) {
    if (const char* env = std::getenv("PKMIX_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
    return c.get("output.dir");
}

// Writes config.txt, metrics.jsonl, metrics.tsv and checkpoint.txt under
// <dir>/<fingerprint>/.
inline std::filesystem::path write_run_files(const std::filesystem::path& dir, const Config& c,
                                             const RunOutcome& run) {
    const auto run_dir = dir / run.fingerprint;
    std::filesystem::create_directories(run_dir);
    write_text_file(run_dir / "config.txt", c.serialize());
    {
        std::ofstream f(run_dir / "metrics.jsonl", std::ios::binary);
        RecordWriter w(f);
        w.emit_all(run.records);
    }
    write_text_file(run_dir / "metrics.tsv", metrics_table(run.history));
    std::ofstream ck(run_dir / "checkpoint.txt", std::ios::binary);
    write_checkpoint(ck, c.serialize(), run.params);
    return run_dir;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
    Config config;
    std::string label;  // e.g. "C=16 S=16 mode=normal seed=1"
    std::size_t C = 0, S = 0;
    double gamma = 1.0;
    std::size_t patch = 0;
    std::string mode;
    std::uint64_t seed = 0;
};

inline void apply_seed(Config& c, std::uint64_t seed) {
    const std::string s = std::to_string(seed);
    c.set("model.init_seed", s);
    c.set("model.permutation_seed", s);
    c.set("model.mask_seed", s);
    c.set("train.shuffle_seed", s);
}

// Expands sweep.kind over sweep.modes x sweep.seeds:
//   pairs:   integer (C, S) pairs at sweep.omega, sweep.gamma
//   gamma:   C over sweep.candidates with S = sweep.width / C and gamma from
//            the fixed-width formula (MLP-Mixer); infeasible gamma < 1 cells
//            are left out
//   patches: model.patch over sweep.patches at the optimal square pair
inline std::vector<SweepCell> expand_sweep(const Config& base) {
    const std::string kind = base.get("sweep.kind");
    const double omega = base.get_double("sweep.omega");
    const double gamma = base.get_double("sweep.gamma");
    const auto modes = base.get_list("sweep.modes");
    const auto seeds = base.get_size_list("sweep.seeds");
    if (modes.empty() || seeds.empty()) throw config_error("sweep needs at least one mode and one seed");
    for (const auto& m : modes) parse_permutation_mode(m);
    struct Shape {
        std::size_t C, S;
        double gamma;
        std::size_t patch;
    };
    std::vector<Shape> shapes;
    const std::size_t patch = base.get_size("model.patch");
    if (kind == "pairs") {
        for (const auto& p : sizing::integer_pairs(omega, gamma, base.get_size_list("sweep.candidates")))
            shapes.push_back({p.C, p.S, gamma, patch});
    } else if (kind == "gamma") {
        const std::size_t m = base.get_size("sweep.width");
        for (std::size_t C : base.get_size_list("sweep.candidates")) {
            if (C == 0 || m % C != 0) throw config_error("sweep.candidates must divide sweep.width");
            const double g = sizing::gamma_given(static_cast<double>(m), static_cast<double>(C), omega);
            if (g >= 1.0) shapes.push_back({C, m / C, g, patch});
        }
    } else if (kind == "patches") {
        const auto side = static_cast<std::size_t>(std::llround(sizing::optimal(omega, gamma).C));
        for (std::size_t p : base.get_size_list("sweep.patches")) shapes.push_back({side, side, gamma, p});
    } else {
        throw config_error("unknown sweep.kind '" + kind + "' (expected pairs, gamma or patches)");
    }
    std::vector<SweepCell> cells;
    for (const auto& sh : shapes)
        for (const auto& mode : modes)
            for (std::uint64_t seed : seeds) {
                SweepCell cell;
                cell.config = base;
                cell.config.set("model.C", std::to_string(sh.C));
                cell.config.set("model.S", std::to_string(sh.S));
                cell.config.set("model.gamma", pkmix::detail::format_double(sh.gamma));
                cell.config.set("model.patch", std::to_string(sh.patch));
                cell.config.set("model.permutation_mode", mode);
                if (kind == "gamma") cell.config.set("model.kind", "mlp_mixer");
                apply_seed(cell.config, seed);
                cell.C = sh.C;
                cell.S = sh.S;
                cell.gamma = sh.gamma;
                cell.patch = sh.patch;
                cell.mode = mode;
                cell.seed = seed;
                cell.label = "C=" + std::to_string(sh.C) + " S=" + std::to_string(sh.S) + " mode=" + mode +
                             " seed=" + std::to_string(seed);
                cells.push_back(std::move(cell));
            }
    return cells;
}

struct CellResult {
    std::optional<RunOutcome> run;
    std::string error;
};

struct TableRow {
    double omega = 0.0;
    std::size_t C = 0, S = 0, patch = 0;
    double gamma = 1.0;
    std::string mode;
    std::size_t seeds = 0;
    double mean_acc = 0.0;
    double median_acc = 0.0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

struct SweepOutcome {
    std::vector<SweepCell> cells;
    std::vector<CellResult> results;
    std::vector<TableRow> table;  // one row per (C, S, gamma, patch, mode), in cell order
    std::vector<ResultRecord> records;
    std::size_t failures = 0;
};

// Runs every cell, up to `workers` at once (0 = one per cell). Each cell
// owns its data; records come out in cell order whatever the schedule.
inline SweepOutcome run_sweep(const Config& base, std::size_t workers = 0) {
    SweepOutcome out;
    out.cells = expand_sweep(base);
    out.results.resize(out.cells.size());
    const ImageSet images = load_images(base.get("data.source"), base.get_size("data.height"),
                                        base.get_size("data.width"), base.get_size("data.classes"),
                                        base.get_size("model.patch"));
    const double test_fraction = base.get_double("data.test_fraction");
    const std::uint64_t split_seed = base.get_u64("data.split_seed");
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < out.cells.size();) {
            try {
                const SweepCell& cell = out.cells[i];
                const DataSplit split = split_dataset(images, test_fraction, split_seed, cell.patch);
                out.results[i].run = run_training(cell.config, split);
            } catch (const std::exception& e) {
                out.results[i].error = e.what();
            }
        }
    };
    std::size_t n_workers = workers == 0 ? out.cells.size() : std::min(workers, out.cells.size());
    n_workers = std::max<std::size_t>(n_workers, 1);
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    const std::string sweep_fp = base.fingerprint();
    const double omega = base.get_double("sweep.omega");
    for (std::size_t i = 0; i < out.cells.size(); ++i) {
        const SweepCell& cell = out.cells[i];
        const CellResult& r = out.results[i];
        if (r.run) {
            out.records.insert(out.records.end(), r.run->records.begin(), r.run->records.end());
        } else {
            ++out.failures;
            out.records.push_back({cell.config.fingerprint(), "cell_error", {{"cell", cell.label}, {"error", r.error}}});
        }
    }
    // Aggregate across seeds only; every row shares the sweep's single omega.
    for (std::size_t i = 0; i < out.cells.size(); ++i) {
        const SweepCell& cell = out.cells[i];
        const auto same = [&](const TableRow& row) {
            return row.C == cell.C && row.S == cell.S && row.gamma == cell.gamma && row.patch == cell.patch &&
                   row.mode == cell.mode;
        };
        if (std::any_of(out.table.begin(), out.table.end(), same)) continue;
        TableRow row{omega, cell.C, cell.S, cell.patch, cell.gamma, cell.mode};
        std::vector<double> accs;
        for (std::size_t k = i; k < out.cells.size(); ++k) {
            const SweepCell& o = out.cells[k];
            if (o.C == cell.C && o.S == cell.S && o.gamma == cell.gamma && o.patch == cell.patch &&
                o.mode == cell.mode && out.results[k].run)
                accs.push_back(out.results[k].run->final_test_acc);
        }
        row.seeds = accs.size();
        row.mean_acc = accs.empty() ? 0.0 : std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
        row.median_acc = median(accs);
        out.table.push_back(row);
    }
    for (const auto& row : out.table)
        out.records.push_back({sweep_fp,
                               "sweep_row",
                               {{"omega", row.omega},
                                {"C", row.C},
                                {"S", row.S},
                                {"gamma", row.gamma},
                                {"patch", row.patch},
                                {"mode", row.mode},
                                {"width", row.C * row.S},
                                {"aspect_C_over_S", static_cast<double>(row.C) / static_cast<double>(row.S)},
                                {"seeds", row.seeds},
                                {"mean_test_acc", row.mean_acc},
                                {"median_test_acc", row.median_acc}}});
    out.records.push_back({sweep_fp, "sweep_summary", {{"cells", out.cells.size()}, {"failures", out.failures}}});
    return out;
}

// Flat tables for plotting. By width: one line per row. By aspect: same rows
// sorted by C / S.
inline std::string sweep_table_by_width(const std::vector<TableRow>& rows) {
    std::vector<TableRow> sorted = rows;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const TableRow& a, const TableRow& b) { return a.C * a.S < b.C * b.S; });
    std::string out = "omega\tpatch\tmode\tC\tS\tgamma\twidth\tseeds\tmean_test_acc\tmedian_test_acc\n";
    for (const auto& r : sorted)
        out += pkmix::detail::format_double(r.omega) + "\t" + std::to_string(r.patch) + "\t" + r.mode + "\t" +
               std::to_string(r.C) + "\t" + std::to_string(r.S) + "\t" + pkmix::detail::format_double(r.gamma) +
               "\t" + std::to_string(r.C * r.S) + "\t" + std::to_string(r.seeds) + "\t" +
               pkmix::detail::format_double(r.mean_acc) + "\t" + pkmix::detail::format_double(r.median_acc) + "\n";
    return out;
}

inline std::string sweep_table_by_aspect(const std::vector<TableRow>& rows) {
    std::vector<TableRow> sorted = rows;
    const auto ratio = [](const TableRow& r) { return static_cast<double>(r.C) / static_cast<double>(r.S); };
    std::stable_sort(sorted.begin(), sorted.end(),
                     [&](const TableRow& a, const TableRow& b) { return ratio(a) < ratio(b); });
    std::string out = "omega\tpatch\tmode\tC_over_S\tC\tS\tseeds\tmean_test_acc\tmedian_test_acc\n";
    for (const auto& r : sorted)
        out += pkmix::detail::format_double(r.omega) + "\t" + std::to_string(r.patch) + "\t" + r.mode + "\t" +
               pkmix::detail::format_double(ratio(r)) + "\t" + std::to_string(r.C) + "\t" + std::to_string(r.S) +
               "\t" + std::to_string(r.seeds) + "\t" + pkmix::detail::format_double(r.mean_acc) + "\t" +
               pkmix::detail::format_double(r.median_acc) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Spectrum studies

struct ASweepRow {
    double a = 0.0;
    std::size_t m = 0;
    double p = 1.0;
    double mean_largest = 0.0;
    std::vector<double> largest;  // per trial
};

// Trial t at exponent index i uses seed derive_seed(seed, i * trials + t).
// on_trial, if set, sees every full report.
inline std::vector<ASweepRow> spectrum_a_sweep(
    double omega, const std::vector<double>& as, std::size_t trials, std::uint64_t seed,
    std::size_t width_cap = default_spectrum_width_cap,
    const std::function<void(const SpectrumReport&)>& on_trial = {}) {
    if (trials == 0) throw value_error("spectrum sweep needs at least one trial");
    std::vector<ASweepRow> rows;
    for (std::size_t i = 0; i < as.size(); ++i) {
        ASweepRow row;
        row.a = as[i];
        const auto shape = sparse_weight_shape(omega, as[i]);
        row.m = shape.m;
        row.p = shape.p;
        for (std::size_t t = 0; t < trials; ++t) {
            const auto r = sparse_spectrum_trial(omega, as[i], derive_seed(seed, i * trials + t), width_cap);
            if (on_trial) on_trial(r);
            row.largest.push_back(r.largest);
        }
        row.mean_largest = std::accumulate(row.largest.begin(), row.largest.end(), 0.0) / static_cast<double>(trials);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline bool strictly_increasing(const std::vector<ASweepRow>& rows) {
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (!(rows[i].mean_largest > rows[i - 1].mean_largest)) return false;
    return true;
}

// Mean largest normalized singular value of dense Gaussian rows x cols draws.
inline double dense_edge(std::size_t rows, std::size_t cols, std::size_t trials, std::uint64_t seed) {
    if (trials == 0) throw value_error("dense edge check needs at least one trial");
    double sum = 0.0;
    for (std::size_t t = 0; t < trials; ++t)
        sum += normalized_spectrum(dense_gaussian(rows, cols, derive_seed(seed, t))).largest;
    return sum / static_cast<double>(trials);
}

// Largest deviation between pk_spectrum and the solver run on the
// materialized effective weight, over n1 in [1, max_n1] and random W.
inline double pk_duplication_deviation(std::size_t max_n1, std::uint64_t seed, std::size_t max_dim = 5) {
    Rng rng(seed);
    double dev = 0.0;
    for (std::size_t n1 = 1; n1 <= max_n1; ++n1) {
        const std::size_t k = 1 + static_cast<std::size_t>(rng.below(max_dim));
        const std::size_t n2 = 1 + static_cast<std::size_t>(rng.below(max_dim));
        PKLayerSpec s;
        s.n1 = n1;
        s.n2 = n2;
        s.k = k;
        s.weight = Matrix(k, n2);
        for (double& v : s.weight.data()) v = rng.normal();
        s.j_in = random_permutation(n1 * n2, rng.next_u64());
        s.j_out = random_permutation(n1 * k, rng.next_u64());
        s.activation = Activation::linear;
        const Vector fast = pk_spectrum(s.weight, n1, s.j_in, s.j_out);
        const Vector dense = singular_values(effective_weight(s));
        dev = std::max(dev, max_abs_diff(fast, dense));
    }
    return dev;
}

} // namespace pkmix::harness
