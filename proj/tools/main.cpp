#include "rankguard/errors.hpp"
#include "rankguard/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Options {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> horizon;
};

void add_common(CLI::App* cmd, Options& opt) {
    cmd->add_option("--config", opt.config_path,
                    "Run configuration (JSON); frozen defaults apply without it")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", opt.out_dir, "Output directory (overrides the config)");
    cmd->add_option("--seed", opt.seed, "Master seed (overrides the config)");
    cmd->add_option("--horizon", opt.horizon,
                    "Uncertainty horizon in trading days (overrides the config)")
        ->check(CLI::IsMember({20, 60, 90}));
}

rankguard::config::RunConfig resolve(const Options& opt) {
    using namespace rankguard;
    config::RunConfig cfg = opt.config_path.empty()
                                ? config::default_run_config()
                                : config::load_run_config(opt.config_path);
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.horizon) cfg.uq_horizon = *opt.horizon;
    config::validate_run_config(cfg);
    return cfg;
}

int run_verb(const std::string& verb, const Options& opt) {
    using namespace rankguard;
    try {
        if (verb == "report") {
            std::string dir = opt.out_dir;
            if (dir.empty()) {
                dir = opt.config_path.empty()
                          ? config::default_run_config().out_dir
                          : config::load_run_config(opt.config_path).out_dir;
            }
            std::cout << pipeline::render_report(dir);
            return 0;
        }
        const config::RunConfig cfg = resolve(opt);
        pipeline::RunArtifacts art;
        if (verb == "generate") {
            art = pipeline::cmd_generate(cfg);
        } else if (verb == "run") {
            art = pipeline::cmd_run(cfg);
        } else if (verb == "eval-gate") {
            art = pipeline::cmd_eval_gate(cfg);
        } else {
            art = pipeline::cmd_conformal(cfg);
        }
        for (const auto& w : art.warnings) std::cerr << "warning: " << w << '\n';
        std::cout << verb << ": wrote " << art.files.size() << " files to " << art.out_dir
                  << '\n';
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 4;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rankguard: uncertainty, regime gating, and deployment policies for a "
                 "cross-sectional rank signal"};
    app.require_subcommand(1);
    Options opt;

    CLI::App* generate =
        app.add_subcommand("generate", "Materialize the scripted synthetic panel");
    CLI::App* run = app.add_subcommand("run", "Full pipeline: uncertainty stack, gate, "
                                              "policies, conformal, summary");
    CLI::App* eval_gate =
        app.add_subcommand("eval-gate", "Regime gate vs stress-proxy baselines");
    CLI::App* conformal =
        app.add_subcommand("conformal", "Conformal interval calibration and coverage");
    CLI::App* report =
        app.add_subcommand("report", "Render an existing run directory's summary");
    for (CLI::App* cmd : {generate, run, eval_gate, conformal, report}) {
        add_common(cmd, opt);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // malformed invocations count as config errors
    }

    for (const CLI::App* cmd : {generate, run, eval_gate, conformal, report}) {
        if (cmd->parsed()) return run_verb(cmd->get_name(), opt);
    }
    return 2;
}
