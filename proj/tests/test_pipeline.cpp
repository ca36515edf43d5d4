#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "decmet/pipeline.hpp"
#include "decmet/synthlab.hpp"

using namespace decmet;
using namespace decmet::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "decmet_pipeline_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void put(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Instant day(int d) {
    using namespace std::chrono;
    return sys_days{year{2020} / 1 / 1} + days{d};
}

void write_series(const fs::path& path, const std::vector<double>& values) {
    std::ostringstream os;
    os << "snapshot,value,n\n";
    for (std::size_t i = 0; i < values.size(); ++i)
        os << format_instant(day(int(i))) << "," << fmt_double(values[i]) << ",5\n";
    put(path, os.str());
}

// blocks.csv for a synthetic stream, returned path plus the block count
fs::path synth_blocks(const fs::path& dir, std::uint64_t entities, double bpd,
                      std::uint64_t days_n, std::uint64_t seed) {
    SynthCli cli;
    cli.entities = entities;
    cli.blocks_per_day = bpd;
    cli.days = days_n;
    cli.seed = seed;
    cli.output_dir = dir.string();
    std::ostringstream out, err;
    REQUIRE(cmd_synth(cli, out, err) == 0);
    return dir / "blocks.csv";
}

int shell(const std::string& cmd) {
    int rc = std::system(cmd.c_str());
    if (rc == -1) return -1;
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("apply_key: every key lands, unknown keys are fatal") {
    RunConfig cfg;
    apply_key(cfg, "tau", "0.5");
    apply_key(cfg, "chain_id", "test");
    apply_key(cfg, "jobs", "8");
    REQUIRE(cfg.tau == "0.5");
    REQUIRE(cfg.chain_id == "test");
    REQUIRE(cfg.jobs == "8");
    REQUIRE_THROWS_AS(apply_key(cfg, "taus", "0.5"), ConfigError);
    REQUIRE_THROWS_AS(apply_key(cfg, "", "x"), ConfigError);
}

TEST_CASE("config file: comments, blank lines, and spacing") {
    auto dir = fresh_dir("cfgfile");
    put(dir / "run.cfg",
        "# full line comment\n"
        "\n"
        "chain_id = demo   # trailing comment\n"
        "tau=0.2,0.4\n"
        "  frequency   =   1d\n");
    RunConfig cfg;
    apply_config_file(cfg, (dir / "run.cfg").string());
    REQUIRE(cfg.chain_id == "demo");
    REQUIRE(cfg.tau == "0.2,0.4");
    REQUIRE(cfg.frequency == "1d");

    put(dir / "bad_key.cfg", "chain = demo\n");
    RunConfig c2;
    REQUIRE_THROWS_AS(apply_config_file(c2, (dir / "bad_key.cfg").string()), ConfigError);

    put(dir / "bad_line.cfg", "chain_id demo\n");
    REQUIRE_THROWS_AS(apply_config_file(c2, (dir / "bad_line.cfg").string()), ConfigError);

    REQUIRE_THROWS_AS(apply_config_file(c2, (dir / "missing.cfg").string()), ConfigError);
}

TEST_CASE("fingerprint: sensitive to measurements, blind to execution knobs") {
    RunConfig a;
    a.blocks = "b.csv";
    std::string base = config_fingerprint(a);
    REQUIRE(base.size() == 16);
    REQUIRE(base == config_fingerprint(a));  // stable

    RunConfig b = a;
    b.tau = "0.5";
    REQUIRE(config_fingerprint(b) != base);
    b = a;
    b.threshold = "top_k:10";
    REQUIRE(config_fingerprint(b) != base);
    b = a;
    b.study_start = "2020-01-01";
    REQUIRE(config_fingerprint(b) != base);

    // Where results land, how many workers run, rotation options for the
    // separate statistics stage: none of it changes what gets measured.
    b = a;
    b.output_dir = "elsewhere";
    b.jobs = "32";
    b.force = "true";
    b.rotation = "none";
    b.promax_power = "2";
    b.outlier_treatment = "drop";
    b.box_cox = "false";
    b.n_factors = "3";
    REQUIRE(config_fingerprint(b) == base);
}

TEST_CASE("build_setup: validation walls") {
    RunConfig cfg;
    cfg.blocks = "b.csv";
    REQUIRE_NOTHROW(build_setup(cfg));

    auto broken = [&](auto&& mutate) {
        RunConfig c = cfg;
        mutate(c);
        REQUIRE_THROWS_AS(build_setup(c), ConfigError);
    };
    broken([](RunConfig& c) { c.pipeline_order = "estimate,cluster,threshold"; });
    broken([](RunConfig& c) { c.pipeline_order = "cluster,estimate"; });
    broken([](RunConfig& c) { c.tau = "0"; });
    broken([](RunConfig& c) { c.tau = "1"; });
    broken([](RunConfig& c) { c.tau = "0.5,1.5"; });
    broken([](RunConfig& c) { c.tau = "abc"; });
    broken([](RunConfig& c) { c.cr = "0"; });
    broken([](RunConfig& c) { c.cr = "-3"; });
    broken([](RunConfig& c) { c.entropy_base = "1"; });
    broken([](RunConfig& c) { c.entropy_base = "0.5"; });
    broken([](RunConfig& c) { c.layer = "nonsense"; });
    broken([](RunConfig& c) { c.layer = "tokenomics"; });  // no balances path
    broken([](RunConfig& c) { c.blocks.clear(); });        // nothing to analyze
    broken([](RunConfig& c) { c.study_start = "2020-01-01"; });  // end missing
    broken([](RunConfig& c) {
        c.study_start = "2020-02-01";
        c.study_end = "2020-01-01";
    });
    broken([](RunConfig& c) {
        c.study_start = "not a date";
        c.study_end = "2020-01-01";
    });
    broken([](RunConfig& c) { c.jobs = "0"; });
    broken([](RunConfig& c) { c.jobs = "257"; });
    broken([](RunConfig& c) { c.frequency = "0d"; });
    broken([](RunConfig& c) { c.frequency = "7x"; });
    broken([](RunConfig& c) { c.resource_window = "0blocks"; });

    RunConfig ok = cfg;
    ok.tau = "0.2, 0.5";
    ok.cr = "1,3";
    ok.theil = "true";
    ok.study_start = "2020-01-01";
    ok.study_end = "2020-03-01T12:00:00Z";
    ok.resource_window = "500blocks";
    ok.jobs = "4";
    AnalyzeSetup s = build_setup(ok);
    REQUIRE(s.consensus);
    REQUIRE_FALSE(s.tokenomics);
    REQUIRE(s.mcfg.tau_values == std::vector<double>{0.2, 0.5});
    REQUIRE(s.mcfg.include_theil);
    REQUIRE(s.jobs == 4);
    REQUIRE(s.window.has_value());
    REQUIRE(std::holds_alternative<windows::BlockCountWindow>(s.wcfg.resource_window));
}

TEST_CASE("study window derivation widens past the last event") {
    LoadedInputs in;
    BlockRecord b1, b2;
    b1.height = 1;
    b1.timestamp = day(0) + std::chrono::hours{5};
    b2.height = 2;
    b2.timestamp = day(3) + std::chrono::hours{1};
    in.blocks = {b1, b2};
    StudyWindow w = derive_study_window(in, std::nullopt);
    REQUIRE(w.start == b1.timestamp);
    REQUIRE(w.end == b2.timestamp + std::chrono::seconds{1});

    BalanceRecord r;
    r.address = "a";
    r.balance = 5;
    r.snapshot_date = date_of(day(10));
    in.balances[r.snapshot_date] = {r};
    w = derive_study_window(in, std::nullopt);
    REQUIRE(w.end == day(11));  // balance date covers its whole day

    StudyWindow explicit_w{day(0), day(1)};
    REQUIRE(derive_study_window(in, explicit_w).end == day(1));

    LoadedInputs empty;
    REQUIRE_THROWS_AS(derive_study_window(empty, std::nullopt), ConfigError);
}

TEST_CASE("series csv reader: sorting, stems, and rejects") {
    auto dir = fresh_dir("series");
    put(dir / "gini.csv",
        "snapshot,value,n\n"
        "2020-01-03T00:00:00Z,0.5,10\n"
        "2020-01-01T00:00:00Z,0.25,10\n");
    MetricSeries s = read_series_csv((dir / "gini.csv").string());
    REQUIRE(s.metric_name == "gini");
    REQUIRE(s.points.size() == 2);
    REQUIRE(s.points[0].value == 0.25);  // sorted by snapshot
    REQUIRE(s.points[0].population_size == 10);

    put(dir / "no_n.csv", "snapshot,value\n2020-01-01T00:00:00Z,1.5\n");
    REQUIRE(read_series_csv((dir / "no_n.csv").string()).points[0].population_size == 0);

    put(dir / "dup.csv",
        "snapshot,value\n2020-01-01T00:00:00Z,1\n2020-01-01T00:00:00Z,2\n");
    REQUIRE_THROWS_AS(read_series_csv((dir / "dup.csv").string()), IngestError);

    put(dir / "head.csv", "time,value\n");
    REQUIRE_THROWS_AS(read_series_csv((dir / "head.csv").string()), IngestError);

    put(dir / "badval.csv", "snapshot,value\n2020-01-01T00:00:00Z,abc\n");
    REQUIRE_THROWS_AS(read_series_csv((dir / "badval.csv").string()), IngestError);

    put(dir / "badtime.csv", "snapshot,value\nyesterday,1\n");
    REQUIRE_THROWS_AS(read_series_csv((dir / "badtime.csv").string()), IngestError);

    REQUIRE_THROWS_AS(read_series_csv((dir / "absent.csv").string()), IngestError);
}

TEST_CASE("share model parser") {
    REQUIRE(std::holds_alternative<synth::Uniform>(parse_share_model("uniform")));
    auto z = parse_share_model("zipf:1.5");
    REQUIRE(std::get<synth::Zipf>(z).exponent == 1.5);
    auto e = parse_share_model("0.5,0.3,0.2");
    REQUIRE(std::get<synth::ExplicitShares>(e).shares == std::vector<double>{0.5, 0.3, 0.2});
    REQUIRE_THROWS_AS(parse_share_model("zipf:abc"), ConfigError);
    REQUIRE_THROWS_AS(parse_share_model(""), ConfigError);
    REQUIRE_THROWS_AS(parse_share_model("0.5,oops"), ConfigError);
}

TEST_CASE("parallel_for: full coverage and lowest-index error") {
    std::vector<int> hits(100, 0);
    pipeline::detail::parallel_for(hits.size(), 8, [&](std::size_t i) { ++hits[i]; });
    for (int h : hits) REQUIRE(h == 1);

    try {
        pipeline::detail::parallel_for(100, 8, [&](std::size_t i) {
            if (i == 42 || i == 77) throw std::runtime_error("boom " + std::to_string(i));
        });
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string{e.what()} == "boom 42");
    }

    // single-worker path
    std::vector<int> seq(5, 0);
    pipeline::detail::parallel_for(seq.size(), 1, [&](std::size_t i) { ++seq[i]; });
    for (int h : seq) REQUIRE(h == 1);
}

TEST_CASE("ingest command: reports, counters, exit codes") {
    auto dir = fresh_dir("ingest");
    std::ostringstream out, err;

    RunConfig none;
    none.output_dir = (dir / "o0").string();
    REQUIRE(cmd_ingest(none, out, err) == 1);
    REQUIRE(err.str().find("nothing to ingest") != std::string::npos);

    put(dir / "blocks.csv",
        "height,timestamp,reward_addresses,creator_tag\n"
        "1,2020-01-01T00:00:10Z,a,\n"
        "x,2020-01-02T00:00:10Z,b,\n"
        "3,2020-01-03T00:00:10Z,b,\n");
    put(dir / "balances.csv",
        "address,balance,snapshot_date\n"
        "a,5,2020-03-01\n"
        "b,0,2020-03-01\n"
        "c,7,2020-03-08\n");
    RunConfig cfg;
    cfg.blocks = (dir / "blocks.csv").string();
    cfg.balances = (dir / "balances.csv").string();
    cfg.output_dir = (dir / "o1").string();
    out.str("");
    err.str("");
    REQUIRE(cmd_ingest(cfg, out, err) == 0);
    auto doc = nlohmann::json::parse(slurp(dir / "o1" / "ingest_report.json"));
    REQUIRE(doc["row_error_total"] == 1);
    REQUIRE(doc["files"].size() == 2);
    REQUIRE(doc["files"][0]["label"] == "blocks");
    REQUIRE(doc["files"][0]["rows_total"] == 3);
    REQUIRE(doc["files"][0]["rows_valid"] == 2);
    REQUIRE(doc["files"][1]["zero_balance_dropped"] == 1);
    REQUIRE(out.str().find("blocks: 2/3 rows valid") != std::string::npos);

    // duplicate heights are structural, not a row error
    put(dir / "dup.csv",
        "height,timestamp,reward_addresses,creator_tag\n"
        "1,2020-01-01T00:00:10Z,a,\n"
        "1,2020-01-01T00:00:20Z,b,\n");
    RunConfig dup;
    dup.blocks = (dir / "dup.csv").string();
    dup.output_dir = (dir / "o2").string();
    err.str("");
    REQUIRE(cmd_ingest(dup, out, err) == 1);
    REQUIRE(err.str().find("error:") != std::string::npos);
}

TEST_CASE("analyze command: metric series on a known uniform stream") {
    auto dir = fresh_dir("analyze_uniform");
    auto blocks = synth_blocks(dir / "in", 4, 48.0, 21, 9);

    RunConfig cfg;
    cfg.chain_id = "synthetic";
    cfg.blocks = blocks.string();
    cfg.resource_window = "7d";
    cfg.frequency = "7d";
    cfg.population_window = "same";
    cfg.output_dir = (dir / "o1").string();
    std::ostringstream out, err;
    REQUIRE(cmd_analyze(cfg, out, err) == 0);
    REQUIRE(out.str().find("fingerprint " + config_fingerprint(cfg)) != std::string::npos);

    // 21 days, weekly cadence, last snapshot strictly before the end: 2 rows.
    auto entropy = read_series_csv((dir / "o1" / "consensus" / "entropy.csv").string());
    auto parties = read_series_csv((dir / "o1" / "consensus" / "parties.csv").string());
    REQUIRE(entropy.points.size() == 2);
    for (const auto& p : entropy.points)
        REQUIRE(p.value == Catch::Approx(2.0).margin(0.05));  // four even creators
    for (const auto& p : parties.points) REQUIRE(p.value == 4.0);

    auto manifest = nlohmann::json::parse(slurp(dir / "o1" / "run_manifest.json"));
    REQUIRE(manifest["chain_id"] == "synthetic");
    REQUIRE(manifest["fingerprint"] == config_fingerprint(cfg));
    REQUIRE(manifest["config"]["tau"] == "0.33");
    REQUIRE(manifest["config"].contains("output_dir") == false);
    REQUIRE(manifest["overlapping_windows"] == false);
    REQUIRE(manifest["low_block_snapshots"] == 0);
    REQUIRE(manifest["layers"]["consensus"]["snapshots"] == 2);
    REQUIRE(manifest["blocks_dropped_outside_window"] == 0);

    // wide.csv carries one column per metric in emission order
    std::string wide = slurp(dir / "o1" / "consensus" / "wide.csv");
    REQUIRE(wide.rfind("snapshot,entropy,gini,nakamoto,tau_0.33,cr_1,cr_3,cr_4,cr_5,hhi,parties",
                       0) == 0);
}

TEST_CASE("analyze command: reruns are byte-identical, jobs do not matter") {
    auto dir = fresh_dir("analyze_detm");
    auto blocks = synth_blocks(dir / "in", 5, 24.0, 14, 11);

    RunConfig cfg;
    cfg.blocks = blocks.string();
    cfg.resource_window = "3d";
    cfg.frequency = "3d";
    std::ostringstream sink;

    cfg.output_dir = (dir / "a").string();
    REQUIRE(cmd_analyze(cfg, sink, sink) == 0);
    cfg.output_dir = (dir / "b").string();
    REQUIRE(cmd_analyze(cfg, sink, sink) == 0);
    cfg.output_dir = (dir / "c").string();
    cfg.jobs = "4";
    REQUIRE(cmd_analyze(cfg, sink, sink) == 0);

    for (const char* rel : {"run_manifest.json", "consensus/wide.csv", "consensus/gini.csv",
                            "consensus/nakamoto.csv"}) {
        std::string a = slurp(dir / "a" / rel);
        REQUIRE_FALSE(a.empty());
        REQUIRE(a == slurp(dir / "b" / rel));
        REQUIRE(a == slurp(dir / "c" / rel));
    }
}

TEST_CASE("analyze command: fingerprint guard on reused output directories") {
    auto dir = fresh_dir("analyze_guard");
    auto blocks = synth_blocks(dir / "in", 3, 24.0, 10, 13);

    RunConfig cfg;
    cfg.blocks = blocks.string();
    cfg.resource_window = "2d";
    cfg.frequency = "2d";
    cfg.output_dir = (dir / "o").string();
    std::ostringstream out, err;
    REQUIRE(cmd_analyze(cfg, out, err) == 0);

    // same configuration: free to overwrite
    REQUIRE(cmd_analyze(cfg, out, err) == 0);

    RunConfig changed = cfg;
    changed.tau = "0.5";
    err.str("");
    REQUIRE(cmd_analyze(changed, out, err) == 1);
    REQUIRE(err.str().find("different configuration") != std::string::npos);

    changed.force = "true";
    REQUIRE(cmd_analyze(changed, out, err) == 0);
    auto manifest = nlohmann::json::parse(slurp(dir / "o" / "run_manifest.json"));
    REQUIRE(manifest["config"]["tau"] == "0.5");
}

TEST_CASE("analyze command: thresholds, overlap flag, sparse-stream warnings") {
    auto dir = fresh_dir("analyze_knobs");
    auto blocks = synth_blocks(dir / "in", 4, 4.0, 21, 17);  // ~28 blocks a week

    RunConfig cfg;
    cfg.blocks = blocks.string();
    cfg.resource_window = "7d";
    cfg.frequency = "1d";  // finer than the window: overlapping
    cfg.threshold = "top_k:1";
    cfg.output_dir = (dir / "o").string();
    std::ostringstream out, err;
    REQUIRE(cmd_analyze(cfg, out, err) == 0);

    auto parties = read_series_csv((dir / "o" / "consensus" / "parties.csv").string());
    REQUIRE_FALSE(parties.points.empty());
    for (const auto& p : parties.points) REQUIRE(p.value == 1.0);  // top_k:1 keeps one

    auto manifest = nlohmann::json::parse(slurp(dir / "o" / "run_manifest.json"));
    REQUIRE(manifest["overlapping_windows"] == true);
    REQUIRE(manifest["low_block_snapshots"].get<std::size_t>() == parties.points.size());
    REQUIRE(err.str().find("(< 150)") != std::string::npos);
}

TEST_CASE("analyze command: tokenomics layer follows the balance dates") {
    auto dir = fresh_dir("analyze_tok");
    put(dir / "balances.csv",
        "address,balance,snapshot_date\n"
        "a,5,2020-03-01\n"
        "b,7,2020-03-01\n"
        "a,6,2020-03-08\n"
        "b,6,2020-03-08\n");
    RunConfig cfg;
    cfg.balances = (dir / "balances.csv").string();
    cfg.output_dir = (dir / "o").string();
    std::ostringstream out, err;
    REQUIRE(cmd_analyze(cfg, out, err) == 0);

    auto gini = read_series_csv((dir / "o" / "tokenomics" / "gini.csv").string());
    REQUIRE(gini.points.size() == 2);
    REQUIRE(format_instant(gini.points[0].snapshot) == "2020-03-01T00:00:00Z");
    REQUIRE(gini.points[0].value == Catch::Approx(1.0 / 12.0).margin(1e-9));  // {5,7}
    REQUIRE(gini.points[1].value == 0.0);                                     // {6,6}

    auto manifest = nlohmann::json::parse(slurp(dir / "o" / "run_manifest.json"));
    REQUIRE(manifest["layers"]["tokenomics"]["snapshots"] == 2);
    REQUIRE(manifest["layers"].contains("consensus") == false);
}

TEST_CASE("analyze command: failure modes exit one") {
    auto dir = fresh_dir("analyze_fail");
    std::ostringstream out, err;

    // no computable snapshot: the study window is shorter than the window
    auto blocks = synth_blocks(dir / "in", 3, 24.0, 5, 19);
    RunConfig cfg;
    cfg.blocks = blocks.string();
    cfg.resource_window = "7d";
    cfg.frequency = "7d";
    cfg.output_dir = (dir / "o1").string();
    REQUIRE(cmd_analyze(cfg, out, err) == 1);
    REQUIRE(err.str().find("error:") != std::string::npos);

    // snapshots exist but every resource window is empty of blocks
    put(dir / "late.csv",
        "height,timestamp,reward_addresses,creator_tag\n"
        "1,2020-01-26T12:00:00Z,a,\n"
        "2,2020-01-27T12:00:00Z,a,\n"
        "3,2020-01-28T12:00:00Z,b,\n");
    RunConfig late;
    late.blocks = (dir / "late.csv").string();
    late.study_start = "2020-01-01T00:00:00Z";
    late.study_end = "2020-01-22T00:00:00Z";
    late.resource_window = "7d";
    late.frequency = "7d";
    late.output_dir = (dir / "o2").string();
    err.str("");
    REQUIRE(cmd_analyze(late, out, err) == 1);
    REQUIRE(err.str().find("no snapshot produced any metrics") != std::string::npos);

    // unreadable input
    RunConfig missing;
    missing.blocks = (dir / "absent.csv").string();
    missing.output_dir = (dir / "o3").string();
    REQUIRE(cmd_analyze(missing, out, err) == 1);
}

TEST_CASE("correlate command: matrix, strength labels, exclusions") {
    auto dir = fresh_dir("correlate");
    write_series(dir / "up.csv", {1, 2, 3, 4, 5, 6});
    write_series(dir / "down.csv", {9, 8, 7, 6, 5, 4});
    write_series(dir / "flat.csv", {2, 2, 2, 2, 2, 2});

    RunConfig cfg;
    cfg.output_dir = (dir / "o").string();
    std::ostringstream out, err;
    std::vector<std::string> paths{(dir / "up.csv").string(), (dir / "down.csv").string(),
                                   (dir / "flat.csv").string()};
    REQUIRE(cmd_correlate(cfg, paths, out, err) == 0);

    std::string matrix = slurp(dir / "o" / "correlation_matrix.csv");
    REQUIRE(matrix.rfind(",up,down", 0) == 0);
    REQUIRE(matrix.find("up,1,-1") != std::string::npos);
    REQUIRE(matrix.find("down,-1,1") != std::string::npos);
    std::string strength = slurp(dir / "o" / "correlation_strength.csv");
    REQUIRE(strength.find("very high") != std::string::npos);
    auto meta = nlohmann::json::parse(slurp(dir / "o" / "correlate_meta.json"));
    REQUIRE(meta["columns"] == nlohmann::json::array({"up", "down"}));
    REQUIRE(meta["excluded_constant"] == nlohmann::json::array({"flat"}));
    REQUIRE(meta["aligned_snapshots"] == 6);
    REQUIRE(err.str().find("'flat' is constant") != std::string::npos);

    std::vector<std::string> one{paths[0]};
    REQUIRE(cmd_correlate(cfg, one, out, err) == 1);
}

TEST_CASE("correlate command: refuses series built from overlapping windows") {
    auto dir = fresh_dir("correlate_overlap");
    write_series(dir / "up.csv", {1, 2, 3, 4});
    write_series(dir / "down.csv", {4, 3, 2, 1});
    put(dir / "run_manifest.json", "{\"overlapping_windows\": true}\n");

    RunConfig cfg;
    cfg.output_dir = (dir / "o").string();
    std::ostringstream out, err;
    std::vector<std::string> paths{(dir / "up.csv").string(), (dir / "down.csv").string()};
    REQUIRE(cmd_correlate(cfg, paths, out, err) == 1);
    REQUIRE(err.str().find("overlapping windows") != std::string::npos);

    cfg.force = "true";
    err.str("");
    REQUIRE(cmd_correlate(cfg, paths, out, err) == 0);
    REQUIRE(err.str().find("warning") != std::string::npos);
}

TEST_CASE("efa command: factor recovery over series files") {
    auto dir = fresh_dir("efa");
    stats::Matrix L(6, 2);
    for (std::size_t i = 0; i < 6; ++i) L(i, i / 3) = 0.8;
    auto data = synth::generate_factor_dataset(200, L, 0.6, 201);
    std::vector<std::string> paths;
    for (std::size_t c = 0; c < data.n_cols(); ++c) {
        std::ostringstream os;
        os << "snapshot,value,n\n";
        for (std::size_t r = 0; r < data.n_rows(); ++r)
            os << format_instant(data.rows[r]) << "," << fmt_double(data.at(r, c)) << ",6\n";
        fs::path p = dir / (data.columns[c] + ".csv");
        put(p, os.str());
        paths.push_back(p.string());
    }

    RunConfig cfg;
    cfg.output_dir = (dir / "o").string();
    std::ostringstream out, err;
    REQUIRE(cmd_efa(cfg, paths, out, err) == 0);

    auto model = nlohmann::json::parse(slurp(dir / "o" / "efa_model.json"));
    REQUIRE(model["n_factors"] == 2);
    REQUIRE(model["kmo"].get<double>() > 0.5);
    REQUIRE(model["rotation"] == "promax");
    REQUIRE(model["columns"].size() == 6);
    REQUIRE(model["transforms"].size() == 6);

    std::string eigen_csv = slurp(dir / "o" / "eigenvalues.csv");
    REQUIRE(eigen_csv.rfind("index,eigenvalue\n1,", 0) == 0);
    std::string loadings = slurp(dir / "o" / "loadings.csv");
    REQUIRE(loadings.rfind("variable,factor_1,factor_2", 0) == 0);
    REQUIRE(loadings.find("v1,") != std::string::npos);
    REQUIRE(fs::exists(dir / "o" / "factor_correlations.csv"));  // promax

    // rotation none: no factor correlation table, explicit factor count wins
    RunConfig none = cfg;
    none.output_dir = (dir / "o2").string();
    none.rotation = "none";
    none.n_factors = "1";
    REQUIRE(cmd_efa(none, paths, out, err) == 0);
    REQUIRE_FALSE(fs::exists(dir / "o2" / "factor_correlations.csv"));
    auto m2 = nlohmann::json::parse(slurp(dir / "o2" / "efa_model.json"));
    REQUIRE(m2["n_factors"] == 1);

    // duplicated series content: statistical refusal, exit 2
    fs::path dup = dir / "v1_copy.csv";
    fs::copy_file(paths[0], dup);
    auto with_dup = paths;
    with_dup.push_back(dup.string());
    RunConfig d = cfg;
    d.output_dir = (dir / "o3").string();
    err.str("");
    REQUIRE(cmd_efa(d, with_dup, out, err) == 2);
    REQUIRE(err.str().find("error:") != std::string::npos);

    std::vector<std::string> one{paths[0]};
    REQUIRE(cmd_efa(cfg, one, out, err) == 1);
}

TEST_CASE("synth command: outputs, determinism, validation") {
    auto dir = fresh_dir("synth");
    SynthCli cli;
    cli.entities = 3;
    cli.blocks_per_day = 24.0;
    cli.days = 5;
    cli.seed = 4;
    cli.with_attribution = true;
    cli.output_dir = (dir / "a").string();
    std::ostringstream out, err;
    REQUIRE(cmd_synth(cli, out, err) == 0);
    REQUIRE(out.str().find("generated") != std::string::npos);

    cli.output_dir = (dir / "b").string();
    REQUIRE(cmd_synth(cli, out, err) == 0);
    REQUIRE(slurp(dir / "a" / "blocks.csv") == slurp(dir / "b" / "blocks.csv"));
    REQUIRE(slurp(dir / "a" / "attribution.csv") == slurp(dir / "b" / "attribution.csv"));

    ingest::FileReport rep;
    auto blocks = ingest::parse_blocks_file((dir / "a" / "blocks.csv").string(), rep);
    REQUIRE_FALSE(blocks.empty());
    REQUIRE(rep.row_errors.empty());

    SynthCli bad = cli;
    bad.output_dir = (dir / "c").string();
    bad.entities = 0;
    REQUIRE(cmd_synth(bad, out, err) == 1);
    bad = cli;
    bad.shares = "0.5,0.6";
    bad.entities = 2;
    REQUIRE(cmd_synth(bad, out, err) == 1);
    bad = cli;
    bad.shares = "zipf:abc";
    REQUIRE(cmd_synth(bad, out, err) == 1);
}

TEST_CASE("synth command: window experiment table") {
    auto dir = fresh_dir("synth_exp");
    SynthCli cli;
    cli.entities = 1;
    cli.blocks_per_day = 24.0;
    cli.days = 3;
    cli.seed = 6;
    cli.window_experiment = "1d,7";
    cli.repetitions = 10;
    cli.output_dir = dir.string();
    std::ostringstream out, err;
    REQUIRE(cmd_synth(cli, out, err) == 0);
    std::string table = slurp(dir / "window_experiment.csv");
    REQUIRE(table.rfind("window_days,nc_mean,nc_sd,repetitions", 0) == 0);
    REQUIRE(table.find("\n1,1,0,10\n") != std::string::npos);
    REQUIRE(table.find("\n7,1,0,10\n") != std::string::npos);

    cli.repetitions = 1;
    REQUIRE(cmd_synth(cli, out, err) == 1);
    cli.repetitions = 10;
    cli.window_experiment = "0,7";
    REQUIRE(cmd_synth(cli, out, err) == 1);
    cli.window_experiment = "7,oops";
    REQUIRE(cmd_synth(cli, out, err) == 1);
}

TEST_CASE("report command: tidy csv and plot script") {
    auto dir = fresh_dir("report");
    write_series(dir / "gini.csv", {0.1, 0.2, 0.3});
    write_series(dir / "entropy.csv", {2.0, 1.9});

    RunConfig cfg;
    cfg.output_dir = (dir / "o").string();
    std::ostringstream out, err;
    std::vector<std::string> paths{(dir / "gini.csv").string(), (dir / "entropy.csv").string()};
    REQUIRE(cmd_report(cfg, paths, out, err) == 0);

    std::string tidy = slurp(dir / "o" / "report.csv");
    REQUIRE(tidy.rfind("series,snapshot,value", 0) == 0);
    REQUIRE(std::count(tidy.begin(), tidy.end(), '\n') == 6);  // header + 5 points
    REQUIRE(tidy.find("gini,2020-01-01T00:00:00Z,0.1") != std::string::npos);
    std::string gp = slurp(dir / "o" / "report.gp");
    REQUIRE(gp.find("plot") != std::string::npos);
    REQUIRE(gp.find("title \"gini\"") != std::string::npos);
    REQUIRE(gp.find("title \"entropy\"") != std::string::npos);

    // nothing to plot is a warning, not an error
    err.str("");
    RunConfig empty;
    empty.output_dir = (dir / "o_empty").string();
    REQUIRE(cmd_report(empty, {}, out, err) == 0);
    REQUIRE(err.str().find("nothing to plot") != std::string::npos);
    REQUIRE_FALSE(fs::exists(dir / "o_empty" / "report.csv"));
}

TEST_CASE("command-line binary: end to end") {
    const std::string cli = DECMET_CLI_PATH;
    auto dir = fresh_dir("e2e");
    const std::string quiet = " > /dev/null 2>&1";

    REQUIRE(shell("'" + cli + "' --version" + quiet) == 0);
    REQUIRE(shell("'" + cli + "' --no-such-flag" + quiet) != 0);
    REQUIRE(shell("'" + cli + "' analyze --tau oops" + quiet) != 0);

    REQUIRE(shell("'" + cli + "' synth --entities 3 --days 6 --blocks_per_day 24 --seed 4"
                  " --output_dir '" + (dir / "in").string() + "'" + quiet) == 0);
    REQUIRE(fs::exists(dir / "in" / "blocks.csv"));

    put(dir / "run.cfg",
        "chain_id = e2e\n"
        "blocks = " + (dir / "in" / "blocks.csv").string() + "\n"
        "resource_window = 2d\n"
        "frequency = 2d\n");
    std::string analyze = "'" + cli + "' analyze --config '" + (dir / "run.cfg").string() +
                          "' --output_dir '" + (dir / "out").string() + "'";
    REQUIRE(shell(analyze + quiet) == 0);
    auto manifest = nlohmann::json::parse(slurp(dir / "out" / "run_manifest.json"));
    REQUIRE(manifest["chain_id"] == "e2e");

    // flags override the config file; the stale manifest then blocks the run
    REQUIRE(shell(analyze + " --tau 0.5" + quiet) == 1);
    REQUIRE(shell(analyze + " --tau 0.5 --force" + quiet) == 0);
    manifest = nlohmann::json::parse(slurp(dir / "out" / "run_manifest.json"));
    REQUIRE(manifest["config"]["tau"] == "0.5");

    REQUIRE(shell("'" + cli + "' report '" + (dir / "out" / "consensus" / "gini.csv").string() +
                  "' --output_dir '" + (dir / "rep").string() + "'" + quiet) == 0);
    REQUIRE(fs::exists(dir / "rep" / "report.gp"));
}
