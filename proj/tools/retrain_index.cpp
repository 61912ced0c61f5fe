// retrain-index: pipeline CLI. Subcommands mirror the analysis stages; each
// reads a declarative config, writes versioned artifacts under the output
// directory, and records a replayable manifest.
//
// Exit codes: 0 success, 1 internal error, 2 missing artifact, 3 config error.

#include "retrain/parallel.hpp"
#include "retrain/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::string format;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = -1;
};

void add_common_options(CLI::App* cmd, CliOptions& opts) {
    cmd->add_option("--config", opts.config_path, "Run configuration JSON")->required();
    cmd->add_option("--out", opts.out_dir, "Output directory (overrides config)");
    cmd->add_option("--format", opts.format, "Table format: csv|json|latex")
        ->check(CLI::IsMember({"csv", "json", "latex"}));
    cmd->add_option_function<std::uint64_t>(
        "--seed",
        [&opts](std::uint64_t v) {
            opts.seed = v;
            opts.seed_set = true;
        },
        "Seed override for stochastic stages");
    cmd->add_option("--threads", opts.threads, "Worker threads (0 = hardware)");
}

retrain::RunConfig load_config(const CliOptions& opts) {
    std::ifstream in(opts.config_path);
    if (!in) {
        throw retrain::MissingArtifactError("config file not found: " + opts.config_path);
    }
    nlohmann::json raw;
    try {
        in >> raw;
    } catch (const nlohmann::json::exception& e) {
        throw retrain::ConfigError("config parse error in " + opts.config_path + ": " +
                                   e.what());
    }
    // Flag overrides beat the environment, which beats the config file.
    if (const char* env_out = std::getenv("RETRAIN_INDEX_OUT");
        env_out != nullptr && *env_out != '\0') {
        raw["out_dir"] = env_out;
    }
    if (!opts.out_dir.empty()) {
        raw["out_dir"] = opts.out_dir;
    }
    if (!opts.format.empty()) {
        raw["format"] = opts.format;
    }
    if (opts.seed_set) {
        raw["seed"] = opts.seed;
    }
    if (opts.threads >= 0) {
        raw["threads"] = opts.threads;
    }
    return retrain::parse_run_config(raw);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retrainability index estimation pipeline"};
    app.require_subcommand(1);

    CliOptions opts;
    const std::vector<std::pair<std::string, std::string>> stages = {
        {"synth", "Generate a synthetic dataset with planted ground truth"},
        {"ingest", "Load, validate, restrict, resolve, and deflate records"},
        {"index", "Compute occupation- and subsector-level index scores"},
        {"reweight", "Estimate calculability propensity and stabilized IPW weights"},
        {"aggregate", "Group-level tables, quartile transitions, binscatter data"},
        {"sensitivity", "Dirichlet weight-sensitivity Monte Carlo"},
        {"match", "Propensity-score matching effects and diagnostics"},
        {"report", "Bundle all emitted tables into one report directory"},
        {"pipeline", "Run every stage in order"},
    };
    for (const auto& [name, description] : stages) {
        add_common_options(app.add_subcommand(name, description), opts);
    }

    CLI11_PARSE(app, argc, argv);

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        const retrain::RunConfig cfg = load_config(opts);
        retrain::thread_count() = cfg.threads;

        if (stage == "synth") {
            retrain::run_synth_stage(cfg);
        } else if (stage == "ingest") {
            retrain::run_ingest_stage(cfg);
        } else if (stage == "index") {
            retrain::run_index_stage(cfg);
        } else if (stage == "reweight") {
            retrain::run_reweight_stage(cfg);
        } else if (stage == "aggregate") {
            retrain::run_aggregate_stage(cfg);
        } else if (stage == "sensitivity") {
            retrain::run_sensitivity_stage(cfg);
        } else if (stage == "match") {
            retrain::run_match_stage(cfg);
        } else if (stage == "report") {
            retrain::run_report_stage(cfg);
        } else if (stage == "pipeline") {
            retrain::run_pipeline(cfg);
        }
        return 0;
    } catch (const retrain::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 3;
    } catch (const retrain::MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
