#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "pkmix/checkpoint.hpp"
#include "pkmix/harness/experiment.hpp"

using namespace pkmix;
using namespace pkmix::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pkmix_harness_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

Config blobs_config() {
    return load_experiment_config(R"(
model.S = 4
model.C = 4
model.patch = 4
data.source = synthetic:gaussian-blobs,2,64
data.height = 8
data.width = 8
data.classes = 2
train.epochs = 3
train.batch_size = 16
)");
}

std::string dump(const std::vector<ResultRecord>& rs) {
    std::ostringstream os;
    RecordWriter w(os);
    w.emit_all(rs);
    return os.str();
}

} // namespace

TEST_CASE("config text", "[harness][config]") {
    const Config c = Config::parse("# comment\n\n  a.b = 1 \nname=hello world\nlist = 1, 2,3\nflag = true\n");
    CHECK(c.get("a.b") == "1");
    CHECK(c.get("name") == "hello world");
    CHECK(c.get_size_list("list") == std::vector<std::size_t>{1, 2, 3});
    CHECK(c.get_bool("flag"));
    CHECK(c.get_double("a.b") == 1.0);
    CHECK(c.serialize() == "a.b = 1\nflag = true\nlist = 1, 2,3\nname = hello world\n");
    CHECK(Config::parse(c.serialize()).values() == c.values());
    CHECK_THROWS_AS(c.get("missing"), config_error);
    CHECK_THROWS_AS(c.get_double("name"), config_error);
    CHECK_THROWS_AS(c.get_bool("name"), config_error);
    CHECK_THROWS_AS(c.get_u64("name"), config_error);
    CHECK(message_of([] { Config::parse("a = 1\nno equals here\n"); }).find("line 2") != std::string::npos);
    CHECK_THROWS_AS(Config::parse(" = 3"), config_error);
}

TEST_CASE("fingerprints track the serialized form", "[harness][config]") {
    const Config a = Config::parse("x = 1\ny = 2\n");
    const Config b = Config::parse("y = 2\n# reordered\nx = 1\n");
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(a.fingerprint().size() == 16);
    Config c = a;
    c.set("x", "3");
    CHECK(c.fingerprint() != a.fingerprint());
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("experiment configs merge strictly", "[harness][config]") {
    const Config c = load_experiment_config("train.epochs = 7\n");
    CHECK(c.get_size("train.epochs") == 7);
    CHECK(c.get("model.kind") == "s_mixer");
    CHECK_THROWS_AS(load_experiment_config("train.epoch = 7\n"), config_error);
    Config d = experiment_defaults();
    d.merge(Config::parse("unknown = 1"), false);
    CHECK(d.get("unknown") == "1");
    CHECK_THROWS_AS(model_from_config(load_experiment_config("model.kind = cnn"), 4), config_error);
    CHECK_THROWS_AS(model_from_config(load_experiment_config("model.patch = 3"), 4), config_error);
    CHECK_THROWS_AS(model_from_config(load_experiment_config("model.permutation_mode = shuffled"), 4), config_error);
    const auto spec = model_from_config(experiment_defaults(), 4);
    CHECK(spec.mixer.S0 == 16);
    CHECK(spec.mixer.C0 == 48);
    const auto sw = model_from_config(load_experiment_config("model.kind = sw_mlp\nmodel.p = 0.5"), 4);
    CHECK(sw.kind == ModelKind::sw_mlp);
    CHECK(sw.sw.p == 0.5);
}

TEST_CASE("synthetic tasks are deterministic and balanced", "[harness][dataset]") {
    const SyntheticOptions o;
    const auto a = synthetic_task(SyntheticKind::patch_pattern, 5, 103, o);
    const auto b = synthetic_task(SyntheticKind::patch_pattern, 5, 103, o);
    const auto prefix = synthetic_task(SyntheticKind::patch_pattern, 5, 10, o);
    const auto other = synthetic_task(SyntheticKind::patch_pattern, 6, 10, o);
    REQUIRE(a.size() == 103);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].pixels == b[i].pixels);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(prefix[i].pixels == a[i].pixels);
        CHECK(other[i].pixels != a[i].pixels);
    }
    std::vector<std::size_t> counts(4, 0);
    for (const auto& img : a) ++counts[img.label];
    for (std::size_t c : counts) CHECK(std::abs(static_cast<double>(c) - 103.0 / 4) <= 1.0);

    SyntheticOptions blobs = o;
    blobs.num_classes = 5;
    std::vector<std::size_t> bc(5, 0);
    for (const auto& img : synthetic_task(SyntheticKind::gaussian_blobs, 1, 52, blobs)) {
        ++bc[img.label];
        for (double v : img.pixels) CHECK((v >= 0.0 && v <= 1.0));
    }
    for (std::size_t c : bc) CHECK(std::abs(static_cast<double>(c) - 52.0 / 5) <= 1.0);

    SyntheticOptions bad = o;
    bad.height = 12;
    CHECK_THROWS_AS(synthetic_task(SyntheticKind::patch_pattern, 1, 4, bad), value_error);
    CHECK_THROWS_AS(parse_synthetic_kind("spirals"), config_error);
}

TEST_CASE("the quadrant rule recovers every label", "[harness][dataset]") {
    for (std::size_t patch : {2, 4}) {
        SyntheticOptions o;
        o.patch = patch;
        const auto images = synthetic_task(SyntheticKind::patch_pattern, 11, 400, o);
        std::size_t correct = 0;
        for (const auto& img : images) correct += patch_pattern_rule(img, patch) == img.label;
        CHECK(correct == images.size());
    }
    Image blank{16, 16, Vector(16 * 16 * 3, 0.5), 0};
    CHECK_THROWS_AS(patch_pattern_rule(blank, 4), value_error);
}

TEST_CASE("text and binary files round trip", "[harness][dataset]") {
    SyntheticOptions o;
    o.height = o.width = 8;
    o.patch = 2;
    const auto images = synthetic_task(SyntheticKind::patch_pattern, 3, 12, o);

    std::stringstream text;
    write_text_images(text, images);
    const ImageSet t = read_text_images(text, 8, 8, 4);
    REQUIRE(t.images.size() == images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        CHECK(t.images[i].label == images[i].label);
        CHECK(t.images[i].pixels == images[i].pixels);
    }

    std::stringstream bin(std::ios::in | std::ios::out | std::ios::binary);
    write_binary_images(bin, images);
    CHECK(bin.str().size() == images.size() * (1 + 8 * 8 * 3));
    const ImageSet b = read_binary_images(bin, 8, 8, 4);
    REQUIRE(b.images.size() == images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        CHECK(b.images[i].label == images[i].label);
        for (std::size_t k = 0; k < images[i].pixels.size(); ++k)
            CHECK(b.images[i].pixels[k] == std::lround(images[i].pixels[k] * 255.0) / 255.0);
    }

    // Planar layout: byte 1 is the red value of pixel (0, 0), byte 1 + H W its green.
    std::string raw(1 + 2 * 2 * 3, '\0');
    raw[0] = 1;
    raw[1] = static_cast<char>(255);
    raw[1 + 4] = static_cast<char>(51);
    std::istringstream rs(raw);
    const ImageSet one = read_binary_images(rs, 2, 2, 2);
    REQUIRE(one.images.size() == 1);
    CHECK(one.images[0].at(0, 0, 0) == 1.0);
    CHECK(one.images[0].at(0, 0, 1) == 0.2);
    CHECK(one.images[0].at(0, 1, 0) == 0.0);
}

TEST_CASE("malformed dataset rows are reported by row", "[harness][dataset]") {
    const std::string good = "1 0 0.5 1 0.25 0.25 0.25 0 0 0 1 1 1";
    {
        std::istringstream is("# header\n" + good + "\n\n" + good + ",0.5\n");
        const std::string msg = message_of([&] { read_text_images(is, 2, 2, 2); });
        CHECK(msg.find("row 4") != std::string::npos);
        CHECK(msg.find("expected 13") != std::string::npos);
    }
    {
        std::istringstream is("5" + good.substr(1) + "\n");
        CHECK(message_of([&] { read_text_images(is, 2, 2, 2); }).find("out of range") != std::string::npos);
    }
    {
        std::istringstream is(good + "\n" + good.substr(0, good.size() - 1) + "2\n");
        const std::string msg = message_of([&] { read_text_images(is, 2, 2, 2); });
        CHECK(msg.find("row 2") != std::string::npos);
        CHECK(msg.find("outside [0, 1]") != std::string::npos);
    }
    {
        std::istringstream is("x" + good.substr(1) + "\n");
        CHECK_THROWS_AS(read_text_images(is, 2, 2, 2), value_error);
    }
    std::istringstream comma("0," + good.substr(2) + "\n");
    CHECK(read_text_images(comma, 2, 2, 2).images.size() == 1);

    std::istringstream truncated(std::string(5, '\0'));
    CHECK(message_of([&] { read_binary_images(truncated, 2, 2, 2); }).find("truncated") != std::string::npos);
    std::istringstream badlabel(std::string(1, '\7') + std::string(12, '\0'));
    CHECK_THROWS_AS(read_binary_images(badlabel, 2, 2, 2), value_error);

    CHECK_THROWS_AS(load_images("synthetic:patch-pattern,1", 16, 16, 4, 4), config_error);
    CHECK_THROWS_AS(load_images("http://x", 16, 16, 4, 4), config_error);
    CHECK_THROWS_AS(load_images("nocolon", 16, 16, 4, 4), config_error);
    CHECK_THROWS_AS(load_images("text:/nonexistent/file.txt", 16, 16, 4, 4), io_error);
}

TEST_CASE("train/test split", "[harness][dataset]") {
    const ImageSet set = load_images("synthetic:patch-pattern,1,100", 16, 16, 4, 4);
    const DataSplit a = split_dataset(set, 0.25, 9, 4);
    const DataSplit b = split_dataset(set, 0.25, 9, 4);
    const DataSplit c = split_dataset(set, 0.25, 10, 4);
    CHECK(a.train.size() == 75);
    CHECK(a.test.size() == 25);
    CHECK(a.test_indices == b.test_indices);
    CHECK(a.test_indices != c.test_indices);
    CHECK(std::is_sorted(a.test_indices.begin(), a.test_indices.end()));
    for (std::size_t i = 0; i < a.test.size(); ++i) {
        CHECK(a.test.inputs[i] == patchify(set.images[a.test_indices[i]], 4));
        CHECK(a.test.labels[i] == set.images[a.test_indices[i]].label);
    }
    CHECK(a.train.inputs[0] == b.train.inputs[0]);
    CHECK(split_dataset(set, 0.0, 1, 4).test.size() == 0);
    CHECK_THROWS_AS(split_dataset(set, 1.0, 1, 4), config_error);
    CHECK_THROWS_AS(split_dataset(ImageSet{}, 0.5, 1, 4), value_error);
}

TEST_CASE("checkpoints round trip exactly", "[harness][checkpoint]") {
    MixerConfig cfg;
    cfg.variant = Variant::mlp_mixer;
    cfg.permutation_mode = PermutationMode::random;
    cfg.S0 = 4;
    cfg.C0 = 12;
    cfg.S = 3;
    cfg.C = 5;
    cfg.gamma = 2;
    cfg.L = 2;
    cfg.num_classes = 3;
    const ModelParams p = init_params(cfg);
    std::stringstream ss;
    write_checkpoint(ss, "a = 1\nb = 2\n", p);
    const Checkpoint back = read_checkpoint(ss);
    CHECK(back.config_text == "a = 1\nb = 2\n");
    CHECK(back.params == p);
    for (const auto& t : p.tensors()) CHECK(back.params.tensor(t.name).trainable == t.trainable);

    SWMLPConfig sw;
    sw.m = 10;
    sw.p = 0.3;
    sw.S0 = 4;
    sw.C0 = 12;
    const ModelParams q = init_params(sw);
    std::stringstream s2;
    write_checkpoint(s2, "", q);
    CHECK(read_checkpoint(s2).params == q);

    std::istringstream bad("not a checkpoint\n");
    CHECK_THROWS_AS(read_checkpoint(bad), value_error);
    std::string text = ss.str();
    std::istringstream cut(text.substr(0, text.size() - 4));
    CHECK_THROWS_AS(read_checkpoint(cut), value_error);
}

TEST_CASE("record lines", "[harness][records]") {
    std::ostringstream os;
    RecordWriter w(os);
    w.emit("00000000000000ff", "test", {{"x", 1}});
    w.emit("00000000000000ff", "test", {{"x", 2.5}});
    std::istringstream is(os.str());
    std::size_t n = 0;
    for (std::string line; std::getline(is, line); ++n) {
        const json j = json::parse(line);
        CHECK(j["fingerprint"] == "00000000000000ff");
        CHECK(j["kind"] == "test");
        CHECK(j["seq"] == n);
        CHECK(j.contains("payload"));
    }
    CHECK(n == 2);
}

TEST_CASE("training runs are traceable and repeatable", "[harness][experiment]") {
    const Config c = blobs_config();
    const DataSplit data = load_dataset(c);
    const RunOutcome a = run_training(c, data);
    const RunOutcome b = run_training(c, data);
    REQUIRE(a.records.size() == 4);
    for (const auto& r : a.records) CHECK(r.fingerprint == c.fingerprint());
    CHECK(a.records.back().kind == "train_summary");
    CHECK(a.records.back().payload["mixing_nonzeros"] == 2 * sizing::omega(4, 4, 1));
    CHECK(dump(a.records) == dump(b.records));
    CHECK(a.params == b.params);

    const fs::path dir = scratch("run");
    const auto run_dir = write_run_files(dir, c, a);
    for (const char* f : {"config.txt", "metrics.jsonl", "metrics.tsv", "checkpoint.txt"}) CHECK(fs::exists(run_dir / f));
    CHECK(slurp(run_dir / "metrics.jsonl") == dump(a.records));
    CHECK(load_experiment_config(slurp(run_dir / "config.txt")).fingerprint() == c.fingerprint());
    std::ifstream ck(run_dir / "checkpoint.txt");
    CHECK(read_checkpoint(ck).params == a.params);

    ::setenv("PKMIX_OUTPUT_DIR", "/tmp/elsewhere", 1);
    CHECK(output_dir(c) == fs::path("/tmp/elsewhere"));
    ::unsetenv("PKMIX_OUTPUT_DIR");
    CHECK(output_dir(c) == fs::path("out"));
}

TEST_CASE("sweep expansion", "[harness][sweep]") {
    Config c = experiment_defaults();
    c.set("sweep.candidates", "4,8,16");
    c.set("sweep.seeds", "1,2");
    const auto cells = expand_sweep(c);
    // (4,43), (8,?), (16,16) and two mirrors, two modes, two seeds.
    CHECK(cells.size() == 5 * 2 * 2);
    for (const auto& cell : cells) {
        CHECK(cell.config.get_size("model.C") == cell.C);
        CHECK(cell.config.get_size("train.shuffle_seed") == cell.seed);
        CHECK(cell.config.get("model.permutation_mode") == cell.mode);
        CHECK(std::abs(sizing::omega(cell.S, cell.C, 1) - 4096) / 4096 < 0.05);
    }
    c.set("sweep.kind", "gamma");
    c.set("sweep.width", "256");
    c.set("sweep.omega", "8192");
    c.set("sweep.candidates", "4,8,16,32,64");
    const auto g = expand_sweep(c);
    for (const auto& cell : g) {
        CHECK(cell.C * cell.S == 256);
        CHECK(cell.gamma >= 1.0);
        CHECK(cell.config.get("model.kind") == "mlp_mixer");
    }
    // gamma = 2 omega / (m (C + S)) drops below 1 at C = 4 and C = 64.
    CHECK(g.size() == 3 * 2 * 2);
    c.set("sweep.candidates", "3");
    CHECK_THROWS_AS(expand_sweep(c), config_error);
    c.set("sweep.kind", "patches");
    c.set("sweep.omega", "4096");
    const auto p = expand_sweep(c);
    CHECK(p.size() == 3 * 2 * 2);
    for (const auto& cell : p) CHECK(cell.C == 16);
    c.set("sweep.kind", "grid");
    CHECK_THROWS_AS(expand_sweep(c), config_error);
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("a one-cell sweep is a training run", "[harness][sweep]") {
    Config c = blobs_config();
    // omega(4, 4, 1) = 64: the square pair has no distinct mirror.
    c.set("sweep.omega", "64");
    c.set("sweep.candidates", "4");
    c.set("sweep.modes", "normal");
    c.set("sweep.seeds", "1");
    const SweepOutcome s = run_sweep(c, 1);
    REQUIRE(s.cells.size() == 1);
    REQUIRE(s.results[0].run);
    const RunOutcome direct = run_training(s.cells[0].config, load_dataset(s.cells[0].config));
    CHECK(dump(s.results[0].run->records) == dump(direct.records));
    CHECK(s.failures == 0);
    REQUIRE(s.table.size() == 1);
    CHECK(s.table[0].median_acc == direct.final_test_acc);
    CHECK(s.records.back().kind == "sweep_summary");
}

TEST_CASE("sweeps record failures and carry on", "[harness][sweep]") {
    Config c = blobs_config();
    c.set("sweep.omega", "64");
    c.set("sweep.candidates", "4");
    c.set("sweep.seeds", "1,2");
    c.set("train.lr", "1e200");
    const SweepOutcome s = run_sweep(c);
    CHECK(s.cells.size() == 4);
    CHECK(s.failures == 4);
    std::size_t errors = 0;
    for (const auto& r : s.records) errors += r.kind == "cell_error";
    CHECK(errors == 4);
    CHECK(s.table.size() == 2);
    for (const auto& row : s.table) CHECK(row.seeds == 0);
}

TEST_CASE("parallel and serial sweeps agree", "[harness][sweep]") {
    Config c = blobs_config();
    c.set("sweep.omega", "64");
    c.set("sweep.candidates", "4");
    c.set("sweep.seeds", "1,2,3");
    CHECK(dump(run_sweep(c, 1).records) == dump(run_sweep(c, 0).records));
}

TEST_CASE("token mixing is needed for the quadrant task", "[harness][ablation]") {
    const Config c = load_experiment_config("train.lr = 0.1\ntrain.epochs = 30\n");
    const DataSplit data = load_dataset(c);
    const ModelSpec spec = model_from_config(c, data.num_classes);
    REQUIRE(spec.mixer.S == spec.mixer.S0);
    const TrainConfig t = train_from_config(c);

    const auto full = train(spec.mixer, init_params(spec.mixer), data.train, data.test, t);
    CHECK(full.history.back().test_acc > 0.9);

    // Every token map fixed to the identity: the body works per patch, and the
    // token mean erases where the texture sits.
    ModelParams frozen = init_params(spec.mixer);
    for (auto& tensor : frozen.mutable_tensors())
        if (tensor.name == "b0.skip.w" || tensor.name.find(".token.w") != std::string::npos) {
            tensor.value = Matrix::identity(spec.mixer.S);
            tensor.trainable = false;
        }
    const auto channel_only = train(spec.mixer, frozen, data.train, data.test, t);
    CHECK(std::abs(channel_only.history.back().test_acc - 0.25) < 0.1);
}

TEST_CASE("command-line exit codes", "[harness][cli]") {
    const char* cli = std::getenv("PKMIX_CLI");
    if (cli == nullptr) SKIP("PKMIX_CLI not set");
    const fs::path dir = scratch("cli");
    const auto run = [&](const std::string& args) {
        const std::string cmd = std::string(cli) + " " + args + " > " + (dir / "stdout.txt").string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    CHECK(run("equiv") == 0);
    CHECK(slurp(dir / "stdout.txt").find("FAIL") == std::string::npos);
    CHECK(run("equiv --seed 2") == 0);
    CHECK(run("equiv --monarch --nonlinear-middle") == 1);
    CHECK(slurp(dir / "stdout.txt").find("FAIL monarch") != std::string::npos);
    CHECK(run("equiv --suite nope") == 2);
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("sizing") == 2);
    CHECK(run("sizing --omega abc") == 2);
    CHECK(run("sizing --omega 262144 --candidates 16,32,48,64 --records " + (dir / "sizing.jsonl").string()) == 0);
    CHECK(slurp(dir / "stdout.txt").find("173\t16") != std::string::npos);
    const json rec = json::parse(slurp(dir / "sizing.jsonl"));
    CHECK(rec["payload"]["pairs"].size() == 7);
    CHECK(run("spectrum --omega 100 --a 0,1 --trials 2 --pk-dup 3 --check") == 0);
    CHECK(run("spectrum --omega 100 --a 0 --cap 5") == 1);

    const fs::path data = dir / "blobs.txt";
    CHECK(run("dataset gen --task gaussian-blobs --n 40 --height 8 --width 8 --output " + data.string()) == 0);
    CHECK(run("dataset gen --task spirals --output " + data.string() + ".x") == 2);
    CHECK(run("dataset") == 2);
    {
        std::ofstream f(dir / "train.cfg");
        f << "model.S = 4\nmodel.C = 4\ndata.height = 8\ndata.width = 8\ndata.classes = 2\n";
        f << "data.source = text:" << data.string() << "\ntrain.epochs = 2\ntrain.batch_size = 8\n";
        f << "output.dir = " << (dir / "out").string() << "\n";
    }
    const std::string cfg = (dir / "train.cfg").string();
    CHECK(run("train " + cfg + " --quiet") == 0);
    CHECK(run("train " + cfg + " --set train.epoch=3") == 2);
    CHECK(run("train " + cfg + " --set train.lr=1e200") == 1);
    CHECK(run("train " + cfg + " --set data.source=text:/nonexistent/data.txt") == 1);
    CHECK(run("train /nonexistent.cfg") == 2);
    CHECK(run("sweep " + cfg + " --set sweep.omega=64 --set sweep.candidates=4 --set sweep.seeds=1 --quiet") == 0);
    CHECK(run("sweep " + cfg + " --set sweep.omega=64 --set sweep.candidates=4 --set sweep.seeds=1 --set train.lr=1e200") ==
          1);
}
