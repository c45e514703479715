#include "ruelle/commands.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

using namespace ruelle;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("ruelle_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    const fs::path f = dir / "config.json";
    write_text(f, text);
    return f;
}

std::string slurp(const fs::path& f) {
    std::ifstream in(f, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Json read_json(const fs::path& f) {
    std::ifstream in(f);
    return Json::parse(in);
}

int run_lab(const std::string& args) {
    const std::string cmd = std::string(RUELLE_LAB_EXE) + " " + args + " --quiet 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small aniso run that finishes in a few seconds.
RunConfig quick_aniso() {
    RunConfig c = default_config("aniso");
    c.n_max_aniso = 6;
    c.aniso.grid = 512;
    c.aniso.matrix_n_max = 4;
    c.aniso.young_trials = 10;
    c.aniso.kernel_decay = false;
    return c;
}

}  // namespace

TEST(Config, DefaultsPerCommand) {
    EXPECT_EQ(default_config("resonances").map.id, "cat");
    EXPECT_EQ(default_config("bounds").weight.id, "one");
    const RunConfig a = default_config("aniso");
    EXPECT_EQ(a.map.id, "chart");
    EXPECT_EQ(a.weight.id, "bump");
    EXPECT_EQ(a.p, 1);
    EXPECT_EQ(a.q, -1);
    EXPECT_EQ(a.N_det, 12);
    EXPECT_EQ(a.m_max, 10);
    EXPECT_EQ(a.n_freq, 32);
}

TEST(Config, CommentsAndInfinityParse) {
    const fs::path d = scratch("parse");
    const fs::path f = write_config(d, R"({
        // exponents
        "p": 2, "q": -0.5,
        /* block comment */
        "bounds": {"t_grid": [1, "inf"]},
        "map": {"id": "perturbed_cat", "eps": 0.01}
    })");
    const RunConfig c = load_config("bounds", f);
    EXPECT_EQ(c.p, 2);
    EXPECT_EQ(c.q, -0.5);
    ASSERT_EQ(c.bounds.t_grid.size(), 2u);
    EXPECT_TRUE(std::isinf(c.bounds.t_grid[1]));
    EXPECT_EQ(c.map.id, "perturbed_cat");
    EXPECT_EQ(to_json(c)["bounds"]["t_grid"][1], "inf");
}

TEST(Config, ShippedExamplesParse) {
    const fs::path dir = RUELLE_CONFIG_DIR;
    for (auto [file, command] : {std::pair{"resonances_perturbed.json", "resonances"}, {"bounds_cat.json", "bounds"},
                                 {"aniso_chart.json", "aniso"}}) {
        RunConfig c = load_config(command, dir / file);
        EXPECT_NO_THROW(validate(c)) << file;
        EXPECT_TRUE(c.warnings.empty()) << file;
    }
    // The bounds and aniso examples spell out the defaults.
    EXPECT_EQ(config_hash(load_config("bounds", dir / "bounds_cat.json")), config_hash(default_config("bounds")));
    EXPECT_EQ(config_hash(load_config("aniso", dir / "aniso_chart.json")), config_hash(default_config("aniso")));
}

TEST(Config, UnknownKeysAreRejected) {
    const fs::path d = scratch("unknown");
    EXPECT_THROW(load_config("bounds", write_config(d, R"({"pp": 1})")), ConfigError);
    EXPECT_THROW(load_config("bounds", write_config(d, R"({"aniso": {"gird": 512}})")), ConfigError);
    EXPECT_THROW(load_config("bounds", write_config(d, R"({"N_det": 3.5})")), ConfigError);
    EXPECT_THROW(load_config("bounds", write_config(d, R"({"p": 1,})")), ConfigError);
    EXPECT_THROW(load_config("bounds", d / "missing.json"), ConfigError);
}

TEST(Config, HashIsStableAndIgnoresOutputDir) {
    RunConfig a = default_config("bounds"), b = a;
    b.output_dir = "elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
    b.seed = 2;
    EXPECT_NE(config_hash(a), config_hash(b));
    b = a;
    b.aniso.iterates = {10, 12};
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, HashRoundTripsThroughJson) {
    RunConfig a = default_config("aniso");
    a.weight.center = Vec2(0.1, -0.2);
    a.bounds.t_grid = {1.5, std::numeric_limits<double>::infinity()};
    const fs::path d = scratch("roundtrip");
    const RunConfig b = load_config("aniso", write_config(d, to_json(a).dump()));
    EXPECT_EQ(config_hash(a), config_hash(b));
}

TEST(Config, ExponentsOutsideTheAdmissibleRangeAreErrors) {
    for (auto [p, q] : {std::pair{-1.0, -1.0}, {1.0, 0.0}, {0.0, -1.0}, {1.0, 1.0}}) {
        RunConfig c = default_config("bounds");
        c.p = p;
        c.q = q;
        EXPECT_THROW(validate(c), ConfigError) << p << " " << q;
    }
    RunConfig coarse = default_config("bounds");
    coarse.p = coarse.q = 0;
    EXPECT_NO_THROW(validate(coarse));
}

TEST(Config, SmoothnessBudgetOnlyWarns) {
    RunConfig c = default_config("resonances");
    validate(c);
    EXPECT_TRUE(c.warnings.empty());
    c.map.smoothness = 3;  // r - 1 = 2 = p - q
    validate(c);
    ASSERT_EQ(c.warnings.size(), 1u);
    c.p = 0.5;
    c.q = -0.25;
    validate(c);
    EXPECT_TRUE(c.warnings.empty());

    c.p = 1;
    c.q = -1;
    const fs::path d = scratch("warn");
    const CommandResult r = cmd_resonances(c, d);
    EXPECT_EQ(r.exit_code, kExitPass);
    EXPECT_EQ(read_json(d / "match.json")["warnings"].size(), 1u);
}

TEST(Config, BadCountsAndIdsAreErrors) {
    auto bad = [](auto mutate) {
        RunConfig c = default_config("bounds");
        mutate(c);
        return c;
    };
    RunConfig c1 = bad([](RunConfig& c) { c.N_det = 0; });
    RunConfig c2 = bad([](RunConfig& c) { c.map.id = "horseshoe"; });
    RunConfig c3 = bad([](RunConfig& c) { c.bounds.t_grid = {0.5}; });
    RunConfig c4 = bad([](RunConfig& c) { c.aniso.grid = 511; });
    RunConfig c5 = bad([](RunConfig& c) { c.map.smoothness = 1; });
    for (RunConfig* c : {&c1, &c2, &c3, &c4, &c5}) EXPECT_THROW(validate(*c), ConfigError);
    RunConfig chart = default_config("aniso");
    chart.weight.id = "one";
    EXPECT_THROW(validate(chart), ConfigError);
    EXPECT_THROW(make_torus_system(default_config("aniso")), ConfigError);
    EXPECT_THROW(make_chart_model(default_config("bounds")), ConfigError);
}

TEST(Writers, NumbersAreExactAndHeadersCarryHashAndSeed) {
    EXPECT_EQ(fmt(0.1), "0.10000000000000001");
    EXPECT_EQ(std::stod(fmt(1.0 / 3.0)), 1.0 / 3.0);
    EXPECT_EQ(fmt(std::numeric_limits<double>::infinity()), "inf");
    RunConfig c = default_config("bounds");
    c.seed = 7;
    CsvWriter w(c, {"a", "b"});
    w.row({"1", "2"});
    EXPECT_EQ(w.text(), "# config_hash=" + config_hash(c) + " seed=7\na,b\n1,2\n");
    EXPECT_THROW(w.row({"1"}), PreconditionViolated);
    const Json j = finish_report(c, {{"x", 1}});
    EXPECT_EQ(j.begin().key(), "_header");
    EXPECT_EQ(j["_header"], header_text(c));
}

TEST(Writers, FailureClassification) {
    EXPECT_EQ(classify_failure(CrossCheckFailed("x")).first, kExitCheckFailed);
    EXPECT_EQ(classify_failure(MissingArtifacts("x")).first, kExitConfigError);
    EXPECT_EQ(classify_failure(GridTooCoarse("x")).first, kExitConfigError);
    EXPECT_EQ(classify_failure(SingularResolvent("x")).first, kExitNumericalFailure);
    EXPECT_EQ(classify_failure(EmptyConstraintSet("x")).first, kExitNumericalFailure);
    const Json line = Json::parse(failure_line("ConfigError", 3, "bad"));
    EXPECT_EQ(line["exit_code"], 3);
    EXPECT_EQ(line["error"], "ConfigError");
}

TEST(Resonances, CatMatchesOnlyTheLeadingPair) {
    const fs::path d = scratch("res_cat");
    const CommandResult r = cmd_resonances(default_config("resonances"), d);
    EXPECT_EQ(r.exit_code, kExitPass);
    const Json m = read_json(d / "match.json");
    ASSERT_EQ(m["pairs"].size(), 1u);
    EXPECT_NEAR(m["pairs"][0]["zero"][0].get<double>(), 1.0, 1e-12);
    EXPECT_TRUE(m["bijective"].get<bool>());
    const Json det = read_json(d / "determinant.json");
    const auto coeffs = det["coeffs"].get<std::vector<double>>();
    EXPECT_EQ(coeffs.size(), 13u);
    EXPECT_EQ(coeffs[0], 1);
    EXPECT_NEAR(coeffs[1], -1, 1e-12);
    for (std::size_t k = 2; k < coeffs.size(); ++k) EXPECT_NEAR(coeffs[k], 0, 1e-9) << k;
    const std::string traces = slurp(d / "traces.csv");
    EXPECT_EQ(traces.rfind("# config_hash=", 0), 0u);
    EXPECT_NE(traces.find("\n5,1,"), std::string::npos);
}

TEST(Resonances, ReportIsByteIdenticalOnRerun) {
    const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
    RunConfig c = default_config("resonances");
    cmd_resonances(c, a);
    cmd_resonances(c, b);
    for (const char* f : {"traces.csv", "determinant.json", "match.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Bounds, NegativeControlFailsTheCrossCheck) {
    RunConfig c = default_config("bounds");
    c.m_max = 8;
    c.mc_samples = 1000;
    c.bounds.cover_max = 4;
    const fs::path ok = scratch("bounds_ok"), bad = scratch("bounds_bad");
    const CommandResult good = cmd_bounds(c, ok);
    EXPECT_EQ(good.exit_code, kExitPass) << good.failure;
    c.bounds.negative_control = true;
    const CommandResult neg = cmd_bounds(c, bad);
    EXPECT_EQ(neg.exit_code, kExitCheckFailed);
    const Json j = read_json(bad / "bounds.json");
    EXPECT_FALSE(j["kitaev"]["pass"].get<bool>());
    EXPECT_NEAR(j["kitaev"]["log_gap"].get<double>(), std::log(1.25), 0.05);
    EXPECT_TRUE(j["inequality"]["pass"].get<bool>());
    const std::string csv = slurp(ok / "bounds.csv");
    EXPECT_NE(csv.find("R_tinf"), std::string::npos);
}

TEST(Aniso, QuickRunPassesAndWritesFlatTraces) {
    const fs::path d = scratch("aniso");
    const CommandResult r = cmd_aniso(quick_aniso(), d);
    EXPECT_EQ(r.exit_code, kExitPass) << r.failure;
    const Json j = read_json(d / "aniso.json");
    EXPECT_EQ(j["young"]["passed"], 10);
    EXPECT_FALSE(j["triangularity"]["vacuous"].get<bool>());
    EXPECT_LE(j["flat_trace"]["gap"].get<double>(), 1e-3);
    EXPECT_FALSE(j.contains("kernel_decay"));
    EXPECT_TRUE(fs::exists(d / "flat_traces.csv"));
}

TEST(Aniso, VanishingWeightGivesZeroTracesAndVacuousChecks) {
    RunConfig c = quick_aniso();
    c.weight.id = "constant";
    c.weight.c = 0;
    c.aniso.kernel_decay = true;
    const fs::path d = scratch("aniso_zero");
    const CommandResult r = cmd_aniso(c, d);
    EXPECT_EQ(r.exit_code, kExitPass) << r.failure;
    const Json j = read_json(d / "aniso.json");
    EXPECT_TRUE(j["triangularity"]["vacuous"].get<bool>());
    for (const auto& v : j["flat_trace"]["partial_sums"]) EXPECT_EQ(v.get<double>(), 0.0);
    EXPECT_EQ(j["flat_trace"]["target"].get<double>(), 0.0);
    for (const auto& s : j["approx_proxy"]["singular_values"]) EXPECT_EQ(s.get<double>(), 0.0);
    EXPECT_FALSE(j.contains("kernel_decay"));
}

TEST(Aniso, ReportIsByteIdenticalOnRerun) {
    const fs::path a = scratch("aniso_a"), b = scratch("aniso_b");
    cmd_aniso(quick_aniso(), a);
    cmd_aniso(quick_aniso(), b);
    for (const char* f : {"aniso.json", "flat_traces.csv"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Report, EmptyDirectoryIsMissingArtifacts) {
    const fs::path d = scratch("report_empty");
    EXPECT_THROW(cmd_report(default_config("report"), d), MissingArtifacts);
}

TEST(Report, PartialDirectoryListsGaps) {
    const fs::path d = scratch("report_partial");
    cmd_resonances(default_config("resonances"), d);
    const CommandResult r = cmd_report(default_config("report"), d);
    const Json s = read_json(d / "summary.json");
    EXPECT_EQ(s["gaps"], Json({"bounds.json", "aniso.json"}));
    EXPECT_TRUE(s["all_pass"].get<bool>());
    EXPECT_TRUE(fs::exists(d / "plot_spectrum.dat"));
    EXPECT_FALSE(fs::exists(d / "plot_log_bounds.dat"));
    EXPECT_EQ(r.files.size(), 2u);
}

TEST(Report, FullDirectoryMergesEverySource) {
    const fs::path d = scratch("report_full");
    RunConfig b = default_config("bounds");
    b.m_max = 6;
    b.mc_samples = 500;
    b.bounds.cover_max = 4;
    cmd_resonances(default_config("resonances"), d);
    cmd_bounds(b, d);
    cmd_aniso(quick_aniso(), d);
    cmd_report(default_config("report"), d);
    const Json s = read_json(d / "summary.json");
    EXPECT_TRUE(s["gaps"].empty());
    EXPECT_EQ(s["plots"].size(), 4u);
    for (const char* f : {"plot_log_bounds.dat", "plot_spectrum.dat", "plot_flat_traces.dat", "plot_singular_values.dat"})
        EXPECT_EQ(slurp(d / f).rfind("# config_hash=", 0), 0u) << f;
    EXPECT_EQ(s["sources"]["aniso.json"], header_text(quick_aniso()));
}

TEST(Executable, ExitCodes) {
    const fs::path d = scratch("exe");
    EXPECT_EQ(run_lab("resonances --out " + (d / "ok").string()), 0);
    EXPECT_TRUE(fs::exists(d / "ok" / "match.json"));
    EXPECT_EQ(run_lab("report --out " + (d / "empty").string()), kExitConfigError);
    const fs::path bad = write_config(d, R"({"nonsense": true})");
    EXPECT_EQ(run_lab("bounds --config " + bad.string() + " --out " + d.string()), kExitConfigError);
    const fs::path neg = d / "neg.json";
    write_text(neg, R"({"m_max": 6, "mc_samples": 500, "bounds": {"cover_max": 4, "negative_control": true}})");
    EXPECT_EQ(run_lab("bounds --config " + neg.string() + " --out " + (d / "neg").string()), kExitCheckFailed);
    EXPECT_NE(run_lab("frobnicate"), 0);
}

TEST(Executable, SeedOverrideReachesHeaders) {
    const fs::path d = scratch("exe_seed");
    ASSERT_EQ(run_lab("resonances --seed 5 --out " + d.string()), 0);
    RunConfig c = default_config("resonances");
    c.seed = 5;
    EXPECT_EQ(read_json(d / "match.json")["_header"], header_text(c));
}
