#include "ruelle/commands.hpp"

#include <CLI11.hpp>

using namespace ruelle;

int main(int argc, char** argv) {
    CLI::App app{"Transfer operator resonances, growth bounds and anisotropic space checks on the two-torus"};
    app.require_subcommand(1);

    std::optional<std::string> config_path, out_dir;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
    const std::pair<const char*, const char*> cmds[] = {
        {"resonances", "determinant zeros matched against collocation eigenvalues"},
        {"bounds", "growth-rate routes, cross-check and inequality table"},
        {"aniso", "anisotropic-space checks on the chart model"},
        {"report", "merge reports in the output directory and emit plot data"}};
    for (const auto& [name, help] : cmds) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "JSON config file (comments allowed)");
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
        sub->add_flag("--quiet", quiet, "suppress progress messages");
    }
    CLI11_PARSE(app, argc, argv);

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        RunConfig cfg = load_config(command, config_path ? std::optional<fs::path>(*config_path) : std::nullopt);
        if (seed) cfg.seed = *seed;
        if (out_dir) cfg.output_dir = *out_dir;
        const Log log(quiet);
        CommandResult r;
        if (command == "resonances") r = cmd_resonances(cfg, cfg.output_dir, log);
        else if (command == "bounds") r = cmd_bounds(cfg, cfg.output_dir, log);
        else if (command == "aniso") r = cmd_aniso(cfg, cfg.output_dir, log);
        else r = cmd_report(cfg, cfg.output_dir, log);
        if (r.exit_code != kExitPass) std::cerr << failure_line("CheckFailed", r.exit_code, r.failure) << '\n';
        return r.exit_code;
    } catch (const Error& e) {
        const auto [code, kind] = classify_failure(e);
        std::cerr << failure_line(kind, code, e.what()) << '\n';
        return code;
    }
}
