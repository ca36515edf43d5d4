#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "decmet/pipeline.hpp"
#include "decmet/version.hpp"

namespace dp = decmet::pipeline;

namespace {

// One row per RunConfig key that takes a value; --force and --theil are
// presence flags below. Config files accept the same names.
const std::vector<std::pair<std::string, std::string>>& value_keys() {
    static const std::vector<std::pair<std::string, std::string>> keys = {
        {"chain_id", "chain identifier recorded in outputs"},
        {"blocks", "block stream CSV"},
        {"balances", "balance snapshot CSV"},
        {"attribution", "attribution records (CSV or JSON)"},
        {"tx_inputs", "transaction inputs CSV for co-spend clustering"},
        {"stake_keys", "address-to-stake-key CSV"},
        {"study_start", "study window start (ISO date or datetime)"},
        {"study_end", "study window end, exclusive"},
        {"resource_window", "look-back window: <n>d/<n>h/<n>s or <n>blocks"},
        {"population_window", "population window: same, factor:<k>, all_time"},
        {"frequency", "snapshot step, e.g. 7d"},
        {"threshold", "inclusion rule: none, top_k:<k>, top_percent:<p>, min_balance:<b>"},
        {"pipeline_order", "stage order; must be cluster,estimate,threshold"},
        {"layer", "auto, consensus, tokenomics, or both"},
        {"tau", "comma-separated tau thresholds in (0,1)"},
        {"cr", "comma-separated concentration-ratio sizes"},
        {"entropy_base", "entropy logarithm base (> 1)"},
        {"rotation", "factor rotation: none, varimax, promax"},
        {"promax_power", "promax target power"},
        {"outlier_treatment", "drop, winsorize, or transform_only"},
        {"box_cox", "apply Box-Cox before factoring (true/false)"},
        {"n_factors", "auto or an explicit factor count"},
        {"output_dir", "directory for results"},
        {"jobs", "worker threads for snapshot evaluation"},
    };
    return keys;
}

struct SubState {
    CLI::App* app = nullptr;
    std::string config_path;
    std::map<std::string, std::string> values;
    bool force_flag = false;
    bool theil_flag = false;

    // defaults, then the config file, then explicit flags
    dp::RunConfig build() const {
        dp::RunConfig cfg;
        if (!config_path.empty()) dp::apply_config_file(cfg, config_path);
        for (const auto& [key, help] : value_keys()) {
            (void)help;
            if (app->count("--" + key)) dp::apply_key(cfg, key, values.at(key));
        }
        if (force_flag) dp::apply_key(cfg, "force", "true");
        if (theil_flag) dp::apply_key(cfg, "theil", "true");
        return cfg;
    }
};

void add_run_options(CLI::App* sub, SubState& st) {
    st.app = sub;
    sub->add_option("--config", st.config_path, "key = value configuration file");
    for (const auto& [key, help] : value_keys()) sub->add_option("--" + key, st.values[key], help);
    sub->add_flag("--force", st.force_flag, "override safety gates and fingerprint checks");
    sub->add_flag("--theil", st.theil_flag, "include the Theil index");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blockchain decentralization measurement toolkit"};
    app.set_version_flag("--version", decmet::version());
    app.require_subcommand(1);

    SubState st_ingest, st_analyze, st_correlate, st_efa, st_report;
    std::vector<std::string> correlate_paths, efa_paths, report_paths;
    dp::SynthCli syn;

    CLI::App* sub_ingest =
        app.add_subcommand("ingest", "validate inputs and write an ingest report");
    add_run_options(sub_ingest, st_ingest);

    CLI::App* sub_analyze =
        app.add_subcommand("analyze", "compute decentralization metric series");
    add_run_options(sub_analyze, st_analyze);

    CLI::App* sub_correlate =
        app.add_subcommand("correlate", "Spearman correlation matrix over metric series");
    add_run_options(sub_correlate, st_correlate);
    sub_correlate->add_option("series", correlate_paths, "metric series CSV files")
        ->required();

    CLI::App* sub_efa =
        app.add_subcommand("efa", "exploratory factor analysis over metric series");
    add_run_options(sub_efa, st_efa);
    sub_efa->add_option("series", efa_paths, "metric series CSV files")->required();

    CLI::App* sub_synth = app.add_subcommand("synth", "generate synthetic block streams");
    sub_synth->add_option("--chain_id", syn.chain_id, "chain identifier for the output");
    sub_synth->add_option("--entities", syn.entities, "number of producer entities");
    sub_synth->add_option("--shares", syn.shares,
                          "uniform, zipf:<s>, or comma-separated shares summing to 1");
    sub_synth->add_option("--blocks_per_day", syn.blocks_per_day, "expected blocks per day");
    sub_synth->add_option("--days", syn.days, "stream length in days");
    sub_synth->add_option("--seed", syn.seed, "PRNG seed");
    sub_synth->add_option("--output_dir", syn.output_dir, "directory for results");
    sub_synth->add_flag("--with_attribution", syn.with_attribution,
                        "also write an attribution CSV tagging each entity");
    sub_synth->add_option("--window_experiment", syn.window_experiment,
                          "comma-separated window lengths in days, e.g. 1,7,14");
    sub_synth->add_option("--repetitions", syn.repetitions,
                          "repetitions per window length");

    CLI::App* sub_report = app.add_subcommand("report", "tidy CSV and gnuplot script");
    add_run_options(sub_report, st_report);
    sub_report->add_option("series", report_paths, "metric series CSV files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (sub_ingest->parsed())
            return dp::cmd_ingest(st_ingest.build(), std::cout, std::cerr);
        if (sub_analyze->parsed())
            return dp::cmd_analyze(st_analyze.build(), std::cout, std::cerr);
        if (sub_correlate->parsed())
            return dp::cmd_correlate(st_correlate.build(), correlate_paths, std::cout,
                                     std::cerr);
        if (sub_efa->parsed())
            return dp::cmd_efa(st_efa.build(), efa_paths, std::cout, std::cerr);
        if (sub_synth->parsed()) return dp::cmd_synth(syn, std::cout, std::cerr);
        if (sub_report->parsed())
            return dp::cmd_report(st_report.build(), report_paths, std::cout, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
