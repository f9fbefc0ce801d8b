// pkmix: command-line front end.
//
//   pkmix sizing   --omega 262144 [--gamma 1] [--candidates 16,32] [--curve]
//   pkmix equiv    [--seed 1] [--suite vec|pk|mlp|monarch] [--nonlinear-middle]
//   pkmix train    CONFIG [--set key=value ...]
//   pkmix sweep    CONFIG [--set key=value ...] [--workers N]
//   pkmix spectrum [--omega 1000] [--a 0,0.5,1,1.5] [--trials 5] [--check]
//   pkmix dataset gen --task patch-pattern --n 256 --output FILE
//
// Exit status: 0 success, 1 suite failure or runtime error, 2 usage error.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pkmix/harness/experiment.hpp"
#include "pkmix/pkmix.hpp"

namespace {

using namespace pkmix;
using namespace pkmix::harness;

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_usage = 2;

std::string fmt(double v) { return pkmix::detail::format_double(v); }

// JSONL records to a file, or nowhere when no path was given.
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (path.empty()) return;
        file_.open(path, std::ios::binary);
        if (!file_) throw io_error("cannot write records to " + path);
        writer_ = std::make_unique<RecordWriter>(file_);
    }
    void emit(const std::string& fp, const std::string& kind, json payload) {
        if (writer_) writer_->emit(fp, kind, std::move(payload));
    }

private:
    std::ofstream file_;
    std::unique_ptr<RecordWriter> writer_;
};

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot read config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
    Config c = load_experiment_config(read_file(path));
    for (const auto& o : overrides) {
        if (o.find('=') == std::string::npos) throw config_error("--set expects key=value, got '" + o + "'");
        c.merge(Config::parse(o), true);
    }
    return c;
}

// ---------------------------------------------------------------------------

struct SizingArgs {
    double omega = 0.0;
    double gamma = 1.0;
    std::vector<std::size_t> candidates;
    bool curve = false;
    std::size_t curve_max = 0;
    std::vector<double> sw_p;
    std::string records;
};

int cmd_sizing(const SizingArgs& a) {
    if (!(a.omega > 0.0) || !(a.gamma > 0.0)) throw config_error("--omega and --gamma must be positive");
    const auto opt = sizing::optimal(a.omega, a.gamma);
    std::vector<std::size_t> cands = a.candidates;
    if (cands.empty()) {
        // Powers of two up to the optimum, and the optimum itself.
        for (std::size_t c = 1; static_cast<double>(c) <= opt.C; c *= 2) cands.push_back(c);
        const auto star = static_cast<std::size_t>(std::llround(opt.C));
        if (star > 0 && (cands.empty() || cands.back() != star)) cands.push_back(star);
    }
    const auto rep = sizing::report(a.omega, a.gamma, cands);

    Config q;
    q.set("sizing.omega", fmt(a.omega));
    q.set("sizing.gamma", fmt(a.gamma));
    std::string list;
    for (std::size_t c : cands) list += (list.empty() ? "" : ",") + std::to_string(c);
    q.set("sizing.candidates", list);
    const std::string fp = q.fingerprint();
    Sink sink(a.records);
    sink.emit(fp, "sizing_report", to_json(rep));

    std::cout << "omega " << fmt(a.omega) << " gamma " << fmt(a.gamma) << "\n";
    std::cout << "optimum C=" << fmt(opt.C) << " S=" << fmt(opt.S) << " m=" << fmt(opt.m_max) << "\n";
    std::cout << "width bounds " << fmt(rep.bounds.lower) << " .. " << fmt(rep.bounds.upper) << "\n";
    std::cout << "C\tS\tachieved_omega\trelative_error\twidth\tdensity\n";
    for (const auto& p : rep.pairs)
        std::cout << p.C << "\t" << p.S << "\t" << fmt(p.achieved_omega) << "\t" << fmt(p.relative_error) << "\t"
                  << p.width << "\t" << fmt(p.density) << "\n";
    if (!a.sw_p.empty()) {
        std::cout << "p\tsw_width\n";
        for (double p : a.sw_p) {
            const std::size_t w = sizing::sw_width(a.omega, p, a.gamma);
            std::cout << fmt(p) << "\t" << w << "\n";
            sink.emit(fp, "sw_width", {{"p", p}, {"gamma", a.gamma}, {"width", w}});
        }
    }
    if (a.curve) {
        const std::size_t c_max = a.curve_max ? a.curve_max : 3 * static_cast<std::size_t>(opt.C) + 1;
        std::cout << "curve C\tS\tm\tdensity\n";
        json pts = json::array();
        for (const auto& pt : sizing::width_curve(a.omega, a.gamma, c_max)) {
            std::cout << pt.C << "\t" << fmt(pt.S) << "\t" << fmt(pt.m) << "\t" << fmt(pt.density) << "\n";
            pts.push_back({{"C", pt.C}, {"S", pt.S}, {"m", pt.m}, {"density", pt.density}});
        }
        sink.emit(fp, "width_curve", {{"omega", a.omega}, {"gamma", a.gamma}, {"points", pts}});
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------

struct EquivArgs {
    std::uint64_t seed = 1;
    std::vector<std::string> suites;
    bool monarch = false;
    bool nonlinear_middle = false;
    std::string records;
};

int cmd_equiv(const EquivArgs& a) {
    std::vector<std::string> suites = a.suites;
    if (a.monarch || a.nonlinear_middle) suites = {"monarch"};
    if (suites.empty() || (suites.size() == 1 && suites[0] == "all")) suites = {"vec", "pk", "mlp", "monarch"};

    Config q;
    q.set("equiv.seed", std::to_string(a.seed));
    q.set("equiv.nonlinear_middle", a.nonlinear_middle ? "true" : "false");
    std::string list;
    for (const auto& s : suites) list += (list.empty() ? "" : ",") + s;
    q.set("equiv.suites", list);
    const std::string fp = q.fingerprint();
    Sink sink(a.records);

    bool all_ok = true;
    const auto report = [&](const SuiteResult& r, bool ok, const std::string& note) {
        std::cout << (ok ? "PASS " : "FAIL ") << r.name << " cases=" << r.cases << " max_deviation=" << fmt(r.max_deviation)
                  << " tolerance=" << fmt(r.tolerance) << note << "\n";
        sink.emit(fp, "equivalence",
                  {{"suite", r.name}, {"cases", r.cases}, {"max_deviation", r.max_deviation}, {"tolerance", r.tolerance},
                   {"passed", ok}});
        all_ok = all_ok && ok;
    };
    for (const auto& s : suites) {
        if (s == "vec") {
            const auto r = vec_identity_suite(a.seed);
            report(r, r.passed, "");
        } else if (s == "pk") {
            const auto r = pk_forward_suite(a.seed);
            report(r, r.passed, "");
        } else if (s == "mlp") {
            const auto r = effective_mlp_suite(a.seed);
            report(r.forward, r.forward.passed, "");
            report(r.gradient, r.gradient.passed, "");
        } else if (s == "monarch") {
            if (a.nonlinear_middle) {
                // Judged as an equivalence claim at the linear tolerance; it cannot hold.
                auto r = monarch_suite(a.seed, true);
                r.tolerance = 1e-12;
                report(r, r.max_deviation < r.tolerance, " (expected: a nonlinear middle has no Monarch form)");
            } else {
                const auto r = monarch_suite(a.seed, false);
                report(r, r.passed, "");
            }
        } else {
            throw config_error("unknown suite '" + s + "' (expected vec, pk, mlp, monarch or all)");
        }
    }
    return all_ok ? exit_ok : exit_failure;
}

// ---------------------------------------------------------------------------

struct RunArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::size_t workers = 0;
    bool workers_set = false;
    bool quiet = false;
};

int cmd_train(const RunArgs& a) {
    const Config c = load_config(a.config, a.overrides);
    const DataSplit data = load_dataset(c);
    const RunOutcome run = run_training(c, data);
    const auto dir = write_run_files(output_dir(c), c, run);
    if (!a.quiet) std::cout << metrics_table(run.history);
    std::cout << "final test accuracy " << fmt(run.final_test_acc) << "\n";
    std::cout << "wrote " << dir.string() << "\n";
    return exit_ok;
}

int cmd_sweep(const RunArgs& a) {
    const Config c = load_config(a.config, a.overrides);
    const std::size_t workers = a.workers_set ? a.workers : c.get_size("sweep.workers");
    const SweepOutcome out = run_sweep(c, workers);
    const auto dir = output_dir(c) / ("sweep-" + c.fingerprint());
    std::filesystem::create_directories(dir);
    write_text_file(dir / "config.txt", c.serialize());
    {
        std::ofstream f(dir / "records.jsonl", std::ios::binary);
        RecordWriter w(f);
        w.emit_all(out.records);
    }
    write_text_file(dir / "by_width.tsv", sweep_table_by_width(out.table));
    write_text_file(dir / "by_aspect.tsv", sweep_table_by_aspect(out.table));
    if (!a.quiet) std::cout << sweep_table_by_width(out.table);
    for (std::size_t i = 0; i < out.cells.size(); ++i)
        if (!out.results[i].run) std::cerr << "cell failed: " << out.cells[i].label << ": " << out.results[i].error << "\n";
    std::cout << out.cells.size() << " cells, " << out.failures << " failed\n";
    std::cout << "wrote " << dir.string() << "\n";
    return out.failures == 0 ? exit_ok : exit_failure;
}

// ---------------------------------------------------------------------------

struct SpectrumArgs {
    double omega = 1000.0;
    std::vector<double> as{0.0, 0.5, 1.0, 1.5};
    std::size_t trials = 5;
    std::uint64_t seed = 1;
    std::size_t cap = default_spectrum_width_cap;
    bool values = false;
    bool dense = false;
    std::size_t dense_size = 256;
    std::size_t dense_trials = 20;
    std::size_t pk_dup = 0;
    bool check = false;
    std::string records;
};

int cmd_spectrum(const SpectrumArgs& a) {
    Config q;
    q.set("spectrum.omega", fmt(a.omega));
    std::string list;
    for (double v : a.as) list += (list.empty() ? "" : ",") + fmt(v);
    q.set("spectrum.a", list);
    q.set("spectrum.trials", std::to_string(a.trials));
    q.set("spectrum.seed", std::to_string(a.seed));
    q.set("spectrum.cap", std::to_string(a.cap));
    q.set("spectrum.values", a.values ? "true" : "false");
    q.set("spectrum.dense_edge", a.dense ? std::to_string(a.dense_size) + "x" + std::to_string(a.dense_trials) : "off");
    q.set("spectrum.pk_dup", std::to_string(a.pk_dup));
    const std::string fp = q.fingerprint();
    Sink sink(a.records);

    bool ok = true;
    const auto rows = spectrum_a_sweep(a.omega, a.as, a.trials, a.seed, a.cap, [&](const SpectrumReport& r) {
        sink.emit(fp, "spectrum_trial", to_json(r, a.values));
    });
    std::cout << "a\tm\tp\tmean_largest\n";
    for (const auto& r : rows) {
        std::cout << fmt(r.a) << "\t" << r.m << "\t" << fmt(r.p) << "\t" << fmt(r.mean_largest) << "\n";
        sink.emit(fp, "spectrum_row",
                  {{"a", r.a}, {"m", r.m}, {"p", r.p}, {"trials", r.largest.size()}, {"mean_largest", r.mean_largest},
                   {"largest", r.largest}});
    }
    if (rows.size() > 1) {
        const bool mono = strictly_increasing(rows);
        std::cout << "largest value strictly increasing in a: " << (mono ? "yes" : "no") << "\n";
        ok = ok && mono;
    }
    if (a.dense) {
        const double edge = dense_edge(a.dense_size, a.dense_size, a.dense_trials, a.seed);
        const bool in = edge >= 1.90 && edge <= 2.15;
        std::cout << "dense " << a.dense_size << "x" << a.dense_size << " mean largest " << fmt(edge)
                  << (in ? " (within 1.90..2.15)" : " (outside 1.90..2.15)") << "\n";
        sink.emit(fp, "dense_edge", {{"size", a.dense_size}, {"trials", a.dense_trials}, {"mean_largest", edge}});
        ok = ok && in;
    }
    if (a.pk_dup > 0) {
        const double dev = pk_duplication_deviation(a.pk_dup, a.seed);
        std::cout << "pk duplication max deviation " << fmt(dev) << " for n1 <= " << a.pk_dup << "\n";
        sink.emit(fp, "pk_duplication", {{"max_n1", a.pk_dup}, {"max_deviation", dev}});
        ok = ok && dev < 1e-10;
    }
    return (!a.check || ok) ? exit_ok : exit_failure;
}

// ---------------------------------------------------------------------------

struct DatasetArgs {
    std::string task = "patch-pattern";
    std::uint64_t seed = 1;
    std::size_t n = 256;
    std::size_t height = 16, width = 16, patch = 4, classes = 2;
    std::string format = "text";
    std::string output;
};

int cmd_dataset_gen(const DatasetArgs& a) {
    const SyntheticOptions o{a.height, a.width, a.patch, a.classes};
    const auto images = synthetic_task(parse_synthetic_kind(a.task), a.seed, a.n, o);
    std::ofstream f(a.output, std::ios::binary);
    if (!f) throw io_error("cannot write " + a.output);
    if (a.format == "text")
        write_text_images(f, images);
    else if (a.format == "binary")
        write_binary_images(f, images);
    else
        throw config_error("unknown --format '" + a.format + "' (expected text or binary)");
    std::cout << "wrote " << images.size() << " images to " << a.output << "\n";
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Permuted-Kronecker mixer toolkit"};
    app.require_subcommand(1);
    std::function<int()> action;

    SizingArgs sz;
    auto* sizing_cmd = app.add_subcommand("sizing", "Width/aspect sizing at a fixed nonzero budget");
    sizing_cmd->add_option("--omega", sz.omega, "Nonzero budget per layer")->required();
    sizing_cmd->add_option("--gamma", sz.gamma, "Expansion factor");
    sizing_cmd->add_option("--candidates", sz.candidates, "Candidate C values")->delimiter(',');
    sizing_cmd->add_flag("--curve", sz.curve, "Print the m(C) curve");
    sizing_cmd->add_option("--curve-max", sz.curve_max, "Largest C on the curve");
    sizing_cmd->add_option("--sw-p", sz.sw_p, "Densities for the sparse-weight baseline width")->delimiter(',');
    sizing_cmd->add_option("--records", sz.records, "JSONL output file");
    sizing_cmd->callback([&] { action = [&] { return cmd_sizing(sz); }; });

    EquivArgs eq;
    auto* equiv_cmd = app.add_subcommand("equiv", "Run the equivalence suites");
    equiv_cmd->add_option("--seed", eq.seed);
    equiv_cmd->add_option("--suite", eq.suites, "vec, pk, mlp, monarch or all")->delimiter(',');
    equiv_cmd->add_flag("--monarch", eq.monarch, "Only the Monarch suite");
    equiv_cmd->add_flag("--nonlinear-middle", eq.nonlinear_middle, "Monarch suite with a GELU between the products");
    equiv_cmd->add_option("--records", eq.records, "JSONL output file");
    equiv_cmd->callback([&] { action = [&] { return cmd_equiv(eq); }; });

    RunArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train one model from a config file");
    train_cmd->add_option("config", tr.config, "Config file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--set", tr.overrides, "Override key=value");
    train_cmd->add_flag("--quiet", tr.quiet, "Skip the metrics table");
    train_cmd->callback([&] { action = [&] { return cmd_train(tr); }; });

    RunArgs sw;
    auto* sweep_cmd = app.add_subcommand("sweep", "Run a grid of training cells");
    sweep_cmd->add_option("config", sw.config, "Config file")->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--set", sw.overrides, "Override key=value");
    auto* workers_opt = sweep_cmd->add_option("--workers", sw.workers, "Concurrent cells (0 = one per cell)");
    sweep_cmd->add_flag("--quiet", sw.quiet, "Skip the table");
    sweep_cmd->callback([&] {
        sw.workers_set = workers_opt->count() > 0;
        action = [&] { return cmd_sweep(sw); };
    });

    SpectrumArgs sp;
    auto* spectrum_cmd = app.add_subcommand("spectrum", "Singular-value studies of sparse random weights");
    spectrum_cmd->add_option("--omega", sp.omega);
    spectrum_cmd->add_option("--a", sp.as, "Sparsity exponents")->delimiter(',');
    spectrum_cmd->add_option("--trials", sp.trials);
    spectrum_cmd->add_option("--seed", sp.seed);
    spectrum_cmd->add_option("--cap", sp.cap, "Largest width allowed");
    spectrum_cmd->add_flag("--values", sp.values, "Store all singular values in the records");
    spectrum_cmd->add_flag("--dense-edge", sp.dense, "Check the dense square edge");
    spectrum_cmd->add_option("--dense-size", sp.dense_size);
    spectrum_cmd->add_option("--dense-trials", sp.dense_trials);
    spectrum_cmd->add_option("--pk-dup", sp.pk_dup, "Check Kronecker duplication for n1 up to this");
    spectrum_cmd->add_flag("--check", sp.check, "Exit 1 when a trend or check fails");
    spectrum_cmd->add_option("--records", sp.records, "JSONL output file");
    spectrum_cmd->callback([&] { action = [&] { return cmd_spectrum(sp); }; });

    DatasetArgs ds;
    auto* dataset_cmd = app.add_subcommand("dataset", "Dataset utilities");
    dataset_cmd->require_subcommand(1);
    auto* gen_cmd = dataset_cmd->add_subcommand("gen", "Write a synthetic dataset file");
    gen_cmd->add_option("--task", ds.task, "patch-pattern or gaussian-blobs");
    gen_cmd->add_option("--seed", ds.seed);
    gen_cmd->add_option("--n", ds.n);
    gen_cmd->add_option("--height", ds.height);
    gen_cmd->add_option("--width", ds.width);
    gen_cmd->add_option("--patch", ds.patch);
    gen_cmd->add_option("--classes", ds.classes);
    gen_cmd->add_option("--format", ds.format, "text or binary");
    gen_cmd->add_option("--output", ds.output)->required();
    gen_cmd->callback([&] { action = [&] { return cmd_dataset_gen(ds); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_usage;
    }
    try {
        return action ? action() : exit_usage;
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_failure;
    }
}
