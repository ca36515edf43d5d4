#pragma once

#include <atomic>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "decmet/cluster.hpp"
#include "decmet/csv.hpp"
#include "decmet/errors.hpp"
#include "decmet/ingest.hpp"
#include "decmet/metrics.hpp"
#include "decmet/model.hpp"
#include "decmet/stats.hpp"
#include "decmet/synthlab.hpp"
#include "decmet/timeutil.hpp"
#include "decmet/version.hpp"
#include "decmet/windows.hpp"

#include "json.hpp"

namespace decmet::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- run configuration ------------------------------------------------------

// Every field maps 1:1 to a `key = value` config line and a `--key` flag.
// Values stay in string form until a command needs them, so the fingerprint
// and the manifest echo exactly what the user wrote.
struct RunConfig {
    std::string chain_id = "chain";
    std::string blocks;
    std::string balances;
    std::string attribution;
    std::string tx_inputs;
    std::string stake_keys;
    std::string study_start;  // empty: derived from the data
    std::string study_end;
    std::string resource_window = "7d";
    std::string population_window = "factor:2";
    std::string frequency = "7d";
    std::string threshold = "none";
    std::string pipeline_order = "cluster,estimate,threshold";
    std::string layer = "auto";  // auto | consensus | tokenomics | both
    std::string tau = "0.33";
    std::string cr = "1,3,4,5";
    std::string entropy_base = "2";
    std::string theil = "false";
    std::string rotation = "promax";
    std::string promax_power = "4";
    std::string outlier_treatment = "transform_only";
    std::string box_cox = "true";
    std::string n_factors = "auto";
    std::string force = "false";
    std::string output_dir = "out";
    std::string jobs = "1";
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace((unsigned char)s[b])) ++b;
    while (e > b && std::isspace((unsigned char)s[e - 1])) --e;
    return std::string{s.substr(b, e - b)};
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            std::string item = trim(s.substr(start, i - start));
            if (!item.empty()) out.push_back(std::move(item));
            start = i + 1;
        }
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + value + "'");
}

inline double parse_double_cfg(const std::string& key, const std::string& value) {
    auto v = parse_double(value);
    if (!v) throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
    return *v;
}

inline std::uint64_t parse_u64_cfg(const std::string& key, const std::string& value) {
    auto v = parse_u64(value);
    if (!v) throw ConfigError("key '" + key + "': expected a non-negative integer, got '" +
                              value + "'");
    return *v;
}

}  // namespace detail

inline void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    static const std::map<std::string, std::string RunConfig::*> fields = {
        {"chain_id", &RunConfig::chain_id},
        {"blocks", &RunConfig::blocks},
        {"balances", &RunConfig::balances},
        {"attribution", &RunConfig::attribution},
        {"tx_inputs", &RunConfig::tx_inputs},
        {"stake_keys", &RunConfig::stake_keys},
        {"study_start", &RunConfig::study_start},
        {"study_end", &RunConfig::study_end},
        {"resource_window", &RunConfig::resource_window},
        {"population_window", &RunConfig::population_window},
        {"frequency", &RunConfig::frequency},
        {"threshold", &RunConfig::threshold},
        {"pipeline_order", &RunConfig::pipeline_order},
        {"layer", &RunConfig::layer},
        {"tau", &RunConfig::tau},
        {"cr", &RunConfig::cr},
        {"entropy_base", &RunConfig::entropy_base},
        {"theil", &RunConfig::theil},
        {"rotation", &RunConfig::rotation},
        {"promax_power", &RunConfig::promax_power},
        {"outlier_treatment", &RunConfig::outlier_treatment},
        {"box_cox", &RunConfig::box_cox},
        {"n_factors", &RunConfig::n_factors},
        {"force", &RunConfig::force},
        {"output_dir", &RunConfig::output_dir},
        {"jobs", &RunConfig::jobs},
    };
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
    cfg.*(it->second) = value;
}

// `key = value` lines; '#' starts a comment; unknown keys are fatal.
inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::string t = detail::trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        apply_key(cfg, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
}

// Key/value pairs that change what a run measures. Output location, worker
// count, overwrite policy, and the statistics stage are deliberately absent.
inline std::vector<std::pair<std::string, std::string>> pipeline_relevant(
    const RunConfig& c) {
    return {
        {"chain_id", c.chain_id},
        {"blocks", c.blocks},
        {"balances", c.balances},
        {"attribution", c.attribution},
        {"tx_inputs", c.tx_inputs},
        {"stake_keys", c.stake_keys},
        {"study_start", c.study_start},
        {"study_end", c.study_end},
        {"resource_window", c.resource_window},
        {"population_window", c.population_window},
        {"frequency", c.frequency},
        {"threshold", c.threshold},
        {"pipeline_order", c.pipeline_order},
        {"layer", c.layer},
        {"tau", c.tau},
        {"cr", c.cr},
        {"entropy_base", c.entropy_base},
        {"theil", c.theil},
    };
}

// FNV-1a over the canonical key=value listing.
inline std::string config_fingerprint(const RunConfig& cfg) {
    std::uint64_t h = 1469598103934665603ull;
    auto feed = [&](std::string_view s) {
        for (unsigned char b : s) {
            h ^= b;
            h *= 1099511628211ull;
        }
    };
    for (const auto& [k, v] : pipeline_relevant(cfg)) {
        feed(k);
        feed("=");
        feed(v);
        feed("\n");
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return buf;
}

// ---- typed views of the configuration ----------------------------------------

namespace detail {

inline Duration parse_duration(const std::string& key, const std::string& value) {
    if (value.size() < 2) throw ConfigError("key '" + key + "': expected <n>d/h/s");
    char unit = value.back();
    auto n = parse_u64(value.substr(0, value.size() - 1));
    if (!n || *n == 0)
        throw ConfigError("key '" + key + "': expected a positive count before the unit");
    switch (unit) {
        case 'd': return std::chrono::days{std::int64_t(*n)};
        case 'h': return std::chrono::hours{std::int64_t(*n)};
        case 's': return std::chrono::seconds{std::int64_t(*n)};
        default:
            throw ConfigError("key '" + key + "': unknown duration unit '" +
                              std::string(1, unit) + "'");
    }
}

inline windows::ResourceWindow parse_resource_window(const std::string& value) {
    if (value.size() > 6 && value.substr(value.size() - 6) == "blocks") {
        auto n = parse_u64(value.substr(0, value.size() - 6));
        if (!n || *n == 0)
            throw ConfigError("resource_window: expected a positive block count");
        return windows::BlockCountWindow{*n};
    }
    return windows::DurationWindow{parse_duration("resource_window", value)};
}

}  // namespace detail

struct AnalyzeSetup {
    windows::WindowConfig wcfg;
    metrics::MetricSuiteConfig mcfg;
    bool consensus = false;
    bool tokenomics = false;
    std::optional<StudyWindow> window;
    std::string fingerprint;
    bool force = false;
    int jobs = 1;
};

inline AnalyzeSetup build_setup(const RunConfig& cfg) {
    AnalyzeSetup s;
    if (cfg.pipeline_order != "cluster,estimate,threshold")
        throw ConfigError("pipeline_order must be 'cluster,estimate,threshold', got '" +
                          cfg.pipeline_order + "'");

    s.wcfg.resource_window = detail::parse_resource_window(cfg.resource_window);
    s.wcfg.population_window = windows::parse_population_window(cfg.population_window);
    s.wcfg.frequency = detail::parse_duration("frequency", cfg.frequency);
    s.wcfg.threshold = windows::parse_threshold(cfg.threshold);
    windows::validate(s.wcfg);

    s.mcfg.entropy_base = detail::parse_double_cfg("entropy_base", cfg.entropy_base);
    if (!(s.mcfg.entropy_base > 1.0))
        throw ConfigError("entropy_base must be greater than 1");
    s.mcfg.tau_values.clear();
    for (const auto& t : detail::split_list(cfg.tau)) {
        double v = detail::parse_double_cfg("tau", t);
        if (!(v > 0.0 && v < 1.0))
            throw ConfigError("tau values must lie strictly between 0 and 1");
        s.mcfg.tau_values.push_back(v);
    }
    s.mcfg.cr_values.clear();
    for (const auto& t : detail::split_list(cfg.cr)) {
        std::uint64_t v = detail::parse_u64_cfg("cr", t);
        if (v == 0 || v > 1000000) throw ConfigError("cr sizes must lie in [1, 1000000]");
        s.mcfg.cr_values.push_back(int(v));
    }
    s.mcfg.include_theil = detail::parse_bool("theil", cfg.theil);

    if (cfg.layer == "auto") {
        s.consensus = !cfg.blocks.empty();
        s.tokenomics = !cfg.balances.empty();
    } else if (cfg.layer == "consensus") {
        s.consensus = true;
    } else if (cfg.layer == "tokenomics") {
        s.tokenomics = true;
    } else if (cfg.layer == "both") {
        s.consensus = s.tokenomics = true;
    } else {
        throw ConfigError("layer must be auto, consensus, tokenomics, or both");
    }
    if (s.consensus && cfg.blocks.empty())
        throw ConfigError("consensus layer requires blocks=<path>");
    if (s.tokenomics && cfg.balances.empty())
        throw ConfigError("tokenomics layer requires balances=<path>");
    if (!s.consensus && !s.tokenomics)
        throw ConfigError("nothing to analyze: set blocks= and/or balances=");

    if (cfg.study_start.empty() != cfg.study_end.empty())
        throw ConfigError("study_start and study_end must be given together");
    if (!cfg.study_start.empty()) {
        auto a = parse_instant(cfg.study_start);
        auto b = parse_instant(cfg.study_end);
        if (!a) throw ConfigError("study_start: cannot parse '" + cfg.study_start + "'");
        if (!b) throw ConfigError("study_end: cannot parse '" + cfg.study_end + "'");
        if (!(*a < *b)) throw ConfigError("study window must satisfy start < end");
        s.window = StudyWindow{*a, *b};
    }

    s.fingerprint = config_fingerprint(cfg);
    s.force = detail::parse_bool("force", cfg.force);
    std::uint64_t jobs = detail::parse_u64_cfg("jobs", cfg.jobs);
    if (jobs == 0 || jobs > 256) throw ConfigError("jobs must lie in [1, 256]");
    s.jobs = int(jobs);
    return s;
}

// ---- input loading -----------------------------------------------------------

struct LoadedInputs {
    std::vector<BlockRecord> blocks;
    std::map<Date, std::vector<BalanceRecord>> balances;
    std::vector<ingest::AttributionRecord> attribution;
    std::vector<ingest::TxInputs> tx_inputs;
    std::vector<ingest::StakeKeyRecord> stake_keys;
    std::vector<ingest::FileReport> reports;
};

inline LoadedInputs load_inputs(const RunConfig& cfg) {
    LoadedInputs in;
    auto report = [&](const char* kind) -> ingest::FileReport& {
        in.reports.emplace_back();
        in.reports.back().label = kind;
        return in.reports.back();
    };
    if (!cfg.blocks.empty()) in.blocks = ingest::parse_blocks_file(cfg.blocks, report("blocks"));
    if (!cfg.balances.empty()) {
        auto rows = ingest::parse_balances_file(cfg.balances, report("balances"));
        for (auto& r : rows) in.balances[r.snapshot_date].push_back(std::move(r));
    }
    if (!cfg.attribution.empty())
        in.attribution = ingest::parse_attribution_file(cfg.attribution, report("attribution"));
    if (!cfg.tx_inputs.empty())
        in.tx_inputs = ingest::parse_tx_inputs_file(cfg.tx_inputs, report("tx_inputs"));
    if (!cfg.stake_keys.empty())
        in.stake_keys = ingest::parse_stake_keys_file(cfg.stake_keys, report("stake_keys"));
    return in;
}

inline StudyWindow derive_study_window(const LoadedInputs& in,
                                       const std::optional<StudyWindow>& explicit_window) {
    if (explicit_window) return *explicit_window;
    std::optional<Instant> lo, hi;
    auto widen = [&](Instant a, Instant b) {
        if (!lo || a < *lo) lo = a;
        if (!hi || b > *hi) hi = b;
    };
    for (const auto& b : in.blocks) widen(b.timestamp, b.timestamp + std::chrono::seconds{1});
    for (const auto& [date, rows] : in.balances) {
        (void)rows;
        widen(Instant{date}, Instant{date} + std::chrono::days{1});
    }
    if (!lo) throw ConfigError("cannot derive a study window from empty inputs");
    return {*lo, *hi};
}

// ---- shared output helpers -----------------------------------------------------

namespace detail {

inline void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(content.data(), std::streamsize(content.size()));
    if (!out) throw Error("short write to '" + path.string() + "'");
}

// Round-trips through the fixed 12-significant-digit form so JSON numbers
// match the CSV serialization.
inline double json_num(double v) {
    std::string s = fmt_double(v);
    return std::strtod(s.c_str(), nullptr);
}

template <class Fn>
inline void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    std::size_t workers = std::min<std::size_t>(std::max(jobs, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mtx;
    std::size_t err_index = n;
    std::exception_ptr err;
    auto body = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mtx);
                if (i < err_index) {  // lowest index wins so reruns fail identically
                    err_index = i;
                    err = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

// Maps failure categories onto process exit codes: 1 for input/config
// problems, 2 for statistical adequacy or convergence failures.
template <class Fn>
inline int run_guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const AdequacyError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const NoConvergenceError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const SingularCorrelationError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace detail

// ---- ingest command --------------------------------------------------------

inline int cmd_ingest(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() -> int {
        if (cfg.blocks.empty() && cfg.balances.empty() && cfg.attribution.empty() &&
            cfg.tx_inputs.empty() && cfg.stake_keys.empty())
            throw ConfigError(
                "nothing to ingest: set blocks=, balances=, attribution=, tx_inputs=, or "
                "stake_keys=");
        LoadedInputs in = load_inputs(cfg);

        json files = json::array();
        std::size_t row_error_total = 0;
        for (const auto& r : in.reports) {
            json errs = json::array();
            for (const auto& e : r.row_errors)
                errs.push_back({{"line", e.line}, {"message", e.message}});
            row_error_total += r.row_errors.size();
            files.push_back({{"label", r.label},
                             {"rows_total", r.rows_total},
                             {"rows_valid", r.rows_valid},
                             {"zero_balance_dropped", r.zero_balance_dropped},
                             {"empty_input_lists_skipped", r.empty_input_lists_skipped},
                             {"errors", errs}});
            out << r.label << ": " << r.rows_valid << "/" << r.rows_total
                << " rows valid, " << r.row_errors.size() << " row error(s)\n";
        }
        json doc = {{"chain_id", cfg.chain_id},
                    {"tool_version", version()},
                    {"files", files},
                    {"row_error_total", row_error_total}};
        fs::create_directories(cfg.output_dir);
        detail::write_text_file(fs::path(cfg.output_dir) / "ingest_report.json",
                                doc.dump(2) + "\n");
        return 0;
    });
}

// ---- analyze command ----------------------------------------------------------

namespace detail {

struct SnapshotOutcome {
    bool ok = false;
    std::vector<metrics::MetricValue> values;
    std::vector<std::string> warnings;
    std::string skip_reason;
};

inline std::string series_csv(const MetricSeries& s) {
    std::ostringstream os;
    write_csv_row(os, {"snapshot", "value", "n"});
    for (const auto& p : s.points)
        write_csv_row(os, {format_instant(p.snapshot), fmt_double(p.value),
                           std::to_string(p.population_size)});
    return os.str();
}

inline std::string wide_csv(const std::vector<std::string>& names,
                            const std::vector<MetricSeries>& series) {
    std::ostringstream os;
    std::vector<std::string> header{"snapshot"};
    header.insert(header.end(), names.begin(), names.end());
    write_csv_row(os, std::span<const std::string>{header});
    if (series.empty()) return os.str();
    for (std::size_t r = 0; r < series.front().points.size(); ++r) {
        std::vector<std::string> row{format_instant(series.front().points[r].snapshot)};
        for (const auto& s : series) row.push_back(fmt_double(s.points[r].value));
        write_csv_row(os, std::span<const std::string>{row});
    }
    return os.str();
}

inline std::vector<std::string> metric_names(const metrics::MetricSuiteConfig& m) {
    std::vector<std::string> names{"entropy", "gini", "nakamoto"};
    for (double t : m.tau_values) names.push_back(metrics::tau_metric_name(t));
    for (int c : m.cr_values) names.push_back(metrics::cr_metric_name(c));
    names.push_back("hhi");
    names.push_back("parties");
    if (m.include_theil) names.push_back("theil");
    return names;
}

struct LayerResult {
    std::string name;  // "consensus" or "tokenomics"
    std::vector<MetricSeries> series;
    std::vector<std::pair<std::string, std::string>> skipped;  // snapshot, reason
    std::size_t snapshots = 0;
};

inline LayerResult evaluate_layer(
    const std::string& name, const std::vector<Instant>& times, const AnalyzeSetup& setup,
    const std::function<ResourceDistribution(Instant, Warnings*)>& distribution_at,
    Warnings& warnings) {
    LayerResult layer;
    layer.name = name;
    std::vector<SnapshotOutcome> slots(times.size());
    parallel_for(times.size(), setup.jobs, [&](std::size_t i) {
        Warnings local;
        SnapshotOutcome& slot = slots[i];
        try {
            ResourceDistribution d = distribution_at(times[i], &local);
            d = windows::apply_threshold(d, setup.wcfg.threshold);
            slot.values = metrics::metric_suite(d, setup.mcfg);
            slot.ok = true;
        } catch (const EmptyWindowError& e) {
            slot.skip_reason = e.what();
        } catch (const ZeroTotalError& e) {
            slot.skip_reason = e.what();
        }
        slot.warnings = std::move(local.items);
    });

    auto names = metric_names(setup.mcfg);
    for (const auto& n : names) layer.series.push_back({n, {}, setup.fingerprint});
    for (std::size_t i = 0; i < slots.size(); ++i) {
        for (auto& w : slots[i].warnings) warnings.add(std::move(w));
        if (!slots[i].ok) {
            layer.skipped.emplace_back(format_instant(times[i]), slots[i].skip_reason);
            warnings.add(name + " snapshot " + format_instant(times[i]) +
                         " skipped: " + slots[i].skip_reason);
            continue;
        }
        ++layer.snapshots;
        for (std::size_t m = 0; m < names.size(); ++m) {
            const auto& v = slots[i].values[m];
            layer.series[m].points.push_back({v.snapshot, v.value, v.n});
        }
    }
    return layer;
}

}  // namespace detail

inline int cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() -> int {
        AnalyzeSetup setup = build_setup(cfg);
        LoadedInputs in = load_inputs(cfg);
        Warnings warnings;

        cluster::ClusterMap clusters = cluster::build_multi_input_clusters(in.tx_inputs);
        if (!in.stake_keys.empty())
            clusters.absorb(cluster::build_stake_key_clusters(in.stake_keys));
        cluster::EntityMap entities = cluster::build_entity_map(in.attribution, &warnings);
        cluster::EntityResolver resolver(&clusters, &entities, &warnings);

        StudyWindow window = derive_study_window(in, setup.window);
        LedgerStats lstats;
        EventLedger ledger = make_ledger(cfg.chain_id, std::move(in.blocks),
                                         std::move(in.balances), window, &lstats, &warnings);

        fs::path outdir = cfg.output_dir;
        fs::create_directories(outdir);
        fs::path manifest_path = outdir / "run_manifest.json";
        if (fs::exists(manifest_path) && !setup.force) {
            std::string prior;
            try {
                std::ifstream mf(manifest_path, std::ios::binary);
                prior = json::parse(mf).value("fingerprint", "");
            } catch (...) {
                prior.clear();
            }
            if (prior != setup.fingerprint)
                throw ConfigError("'" + manifest_path.string() +
                                  "' comes from a different configuration; use --force or a "
                                  "fresh output_dir");
        }

        std::vector<detail::LayerResult> layers;
        if (setup.consensus) {
            auto times = windows::snapshot_times(window, setup.wcfg);
            layers.push_back(detail::evaluate_layer(
                "consensus", times, setup,
                [&](Instant t, Warnings* w) {
                    return windows::consensus_distribution(ledger, resolver, t, setup.wcfg, w);
                },
                warnings));
        }
        if (setup.tokenomics) {
            std::vector<Instant> times;
            for (const auto& [date, rows] : ledger.balance_snapshots) {
                (void)rows;
                if (window.contains(Instant{date}))
                    times.push_back(Instant{date});
                else
                    warnings.add("balance snapshot " + format_date(date) +
                                 " lies outside the study window; skipped");
            }
            if (times.empty()) {
                warnings.add("tokenomics layer has no balance snapshots in the study window");
            } else {
                layers.push_back(detail::evaluate_layer(
                    "tokenomics", times, setup,
                    [&](Instant t, Warnings* w) {
                        return windows::tokenomics_distribution(ledger, resolver, date_of(t), w);
                    },
                    warnings));
            }
        }

        std::size_t total_points = 0;
        auto names = detail::metric_names(setup.mcfg);
        json layer_info = json::object();
        for (const auto& layer : layers) {
            fs::path dir = outdir / layer.name;
            fs::create_directories(dir);
            for (const auto& s : layer.series) {
                detail::write_text_file(dir / (s.metric_name + ".csv"),
                                        detail::series_csv(s));
                total_points += s.points.size();
            }
            detail::write_text_file(dir / "wide.csv", detail::wide_csv(names, layer.series));
            json skipped = json::array();
            for (const auto& [snap, reason] : layer.skipped)
                skipped.push_back({{"snapshot", snap}, {"reason", reason}});
            layer_info[layer.name] = {{"snapshots", layer.snapshots}, {"skipped", skipped}};
            out << layer.name << ": " << layer.snapshots << " snapshot(s), "
                << layer.skipped.size() << " skipped\n";
        }

        bool overlapping = false;
        if (auto* d = std::get_if<windows::DurationWindow>(&setup.wcfg.resource_window))
            overlapping = setup.wcfg.frequency < d->length;
        std::size_t low_block = 0;
        for (const auto& w : warnings.items)
            if (w.find("(< 150)") != std::string::npos) ++low_block;

        json config_echo = json::object();
        for (const auto& [k, v] : pipeline_relevant(cfg)) config_echo[k] = v;
        json manifest = {{"chain_id", cfg.chain_id},
                         {"tool_version", version()},
                         {"fingerprint", setup.fingerprint},
                         {"config", config_echo},
                         {"study_start", format_instant(window.start)},
                         {"study_end", format_instant(window.end)},
                         {"blocks_in_window", lstats.blocks_in_window},
                         {"blocks_dropped_outside_window", lstats.blocks_dropped_outside_window},
                         {"overlapping_windows", overlapping},
                         {"low_block_snapshots", low_block},
                         {"layers", layer_info},
                         {"warnings", warnings.items}};
        detail::write_text_file(manifest_path, manifest.dump(2) + "\n");

        for (const auto& w : warnings.items) err << "warning: " << w << "\n";
        if (total_points == 0)
            throw Error("no snapshot produced any metrics; check the study window");
        out << "fingerprint " << setup.fingerprint << "\n";
        return 0;
    });
}

// ---- series files (correlate / efa / report inputs) -----------------------------

inline MetricSeries read_series_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path + "'");
    CsvReader reader(in);
    auto header = reader.next();
    if (!header || header->fields.size() < 2 || header->fields[0] != "snapshot" ||
        header->fields[1] != "value")
        throw IngestError("'" + path + "': expected a snapshot,value[,n] series header");
    MetricSeries s;
    s.metric_name = fs::path(path).stem().string();
    while (auto row = reader.next()) {
        if (row->fields.size() < 2)
            throw IngestError("'" + path + "' line " + std::to_string(row->line) +
                              ": expected snapshot,value");
        auto t = parse_instant(row->fields[0]);
        if (!t)
            throw IngestError("'" + path + "' line " + std::to_string(row->line) +
                              ": bad snapshot '" + row->fields[0] + "'");
        auto v = parse_double(row->fields[1]);
        if (!v)
            throw IngestError("'" + path + "' line " + std::to_string(row->line) +
                              ": bad value '" + row->fields[1] + "'");
        std::size_t n = 0;
        if (row->fields.size() > 2)
            if (auto nn = parse_u64(row->fields[2])) n = std::size_t(*nn);
        s.points.push_back({*t, *v, n});
    }
    std::sort(s.points.begin(), s.points.end(),
              [](const MetricPoint& a, const MetricPoint& b) { return a.snapshot < b.snapshot; });
    for (std::size_t i = 1; i < s.points.size(); ++i)
        if (s.points[i].snapshot == s.points[i - 1].snapshot)
            throw IngestError("'" + path + "': duplicate snapshot " +
                              format_instant(s.points[i].snapshot));
    return s;
}

namespace detail {

// Windows that overlap make neighbouring snapshots dependent; inferential
// statistics over them need an explicit override.
inline void refuse_overlapping_inputs(std::span<const std::string> paths, bool force,
                                      Warnings* warnings) {
    std::set<fs::path> seen;
    for (const auto& p : paths) {
        fs::path dir = fs::path(p).parent_path();
        for (fs::path cand :
             {dir / "run_manifest.json", dir.parent_path() / "run_manifest.json"}) {
            if (cand.empty() || !fs::exists(cand) || !seen.insert(cand).second) continue;
            bool overlapping = false;
            try {
                std::ifstream mf(cand, std::ios::binary);
                overlapping = json::parse(mf).value("overlapping_windows", false);
            } catch (...) {
                continue;
            }
            if (!overlapping) continue;
            if (!force)
                throw ConfigError("'" + cand.string() +
                                  "' marks these series as built from overlapping windows; "
                                  "refusing inferential statistics (use --force)");
            warn(warnings, "running inferential statistics over overlapping windows");
        }
    }
}

}  // namespace detail

// ---- correlate command -----------------------------------------------------------

inline int cmd_correlate(const RunConfig& cfg, const std::vector<std::string>& paths,
                         std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() -> int {
        if (paths.size() < 2) throw ConfigError("correlate needs at least two series files");
        Warnings warnings;
        detail::refuse_overlapping_inputs(paths, detail::parse_bool("force", cfg.force),
                                          &warnings);
        std::vector<MetricSeries> series;
        series.reserve(paths.size());
        for (const auto& p : paths) series.push_back(read_series_csv(p));
        stats::DataMatrix dm = stats::align_series(series);
        stats::CorrelationReport rep = stats::spearman_matrix(dm);

        std::ostringstream matrix, strength;
        std::vector<std::string> header{""};
        header.insert(header.end(), rep.columns.begin(), rep.columns.end());
        write_csv_row(matrix, std::span<const std::string>{header});
        write_csv_row(strength, std::span<const std::string>{header});
        for (std::size_t i = 0; i < rep.columns.size(); ++i) {
            std::vector<std::string> mrow{rep.columns[i]}, srow{rep.columns[i]};
            for (std::size_t j = 0; j < rep.columns.size(); ++j) {
                mrow.push_back(fmt_double(rep.rho(i, j)));
                srow.push_back(i == j ? "" : stats::correlation_strength(rep.rho(i, j)));
            }
            write_csv_row(matrix, std::span<const std::string>{mrow});
            write_csv_row(strength, std::span<const std::string>{srow});
        }

        fs::path outdir = cfg.output_dir;
        fs::create_directories(outdir);
        detail::write_text_file(outdir / "correlation_matrix.csv", matrix.str());
        detail::write_text_file(outdir / "correlation_strength.csv", strength.str());

        json meta = {{"method", "spearman"},
                     {"columns", rep.columns},
                     {"excluded_constant", rep.excluded_constant},
                     {"aligned_snapshots", rep.n_rows},
                     {"tool_version", version()},
                     {"warnings", warnings.items}};
        detail::write_text_file(outdir / "correlate_meta.json", meta.dump(2) + "\n");

        for (const auto& w : warnings.items) err << "warning: " << w << "\n";
        for (const auto& c : rep.excluded_constant)
            err << "warning: series '" << c << "' is constant and was excluded\n";
        out << "spearman matrix over " << rep.n_rows << " aligned snapshot(s), "
            << rep.columns.size() << " series\n";
        return 0;
    });
}

// ---- efa command -------------------------------------------------------------------

inline int cmd_efa(const RunConfig& cfg, const std::vector<std::string>& paths,
                   std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() -> int {
        if (paths.size() < 2) throw ConfigError("efa needs at least two series files");
        Warnings warnings;
        bool force = detail::parse_bool("force", cfg.force);
        detail::refuse_overlapping_inputs(paths, force, &warnings);
        std::vector<MetricSeries> series;
        series.reserve(paths.size());
        for (const auto& p : paths) series.push_back(read_series_csv(p));
        stats::DataMatrix dm = stats::align_series(series);

        stats::EfaOptions opts;
        opts.treatment = stats::outlier_treatment_from(cfg.outlier_treatment);
        opts.use_box_cox = detail::parse_bool("box_cox", cfg.box_cox);
        opts.rotation = stats::rotation_from(cfg.rotation);
        opts.promax_power = detail::parse_double_cfg("promax_power", cfg.promax_power);
        if (!(opts.promax_power >= 1.0))
            throw ConfigError("promax_power must be at least 1");
        opts.force = force;
        if (cfg.n_factors != "auto") {
            std::uint64_t k = detail::parse_u64_cfg("n_factors", cfg.n_factors);
            if (k == 0) throw ConfigError("n_factors must be 'auto' or a positive integer");
            opts.n_factors = std::size_t(k);
        }

        stats::EfaRun run = stats::run_efa_pipeline(dm, opts, &warnings);

        fs::path outdir = cfg.output_dir;
        fs::create_directories(outdir);

        std::ostringstream eig;
        write_csv_row(eig, {"index", "eigenvalue"});
        for (std::size_t i = 0; i < run.eigenvalues.size(); ++i)
            write_csv_row(eig, {std::to_string(i + 1), fmt_double(run.eigenvalues[i])});
        detail::write_text_file(outdir / "eigenvalues.csv", eig.str());

        const stats::Matrix& L = run.model.loadings;
        std::ostringstream lo;
        std::vector<std::string> lhead{"variable"};
        for (std::size_t j = 0; j < L.cols(); ++j)
            lhead.push_back("factor_" + std::to_string(j + 1));
        write_csv_row(lo, std::span<const std::string>{lhead});
        for (std::size_t i = 0; i < L.rows(); ++i) {
            std::vector<std::string> row{dm.columns[i]};
            for (std::size_t j = 0; j < L.cols(); ++j) row.push_back(fmt_double(L(i, j)));
            write_csv_row(lo, std::span<const std::string>{row});
        }
        detail::write_text_file(outdir / "loadings.csv", lo.str());

        if (run.model.factor_correlations) {
            const stats::Matrix& phi = *run.model.factor_correlations;
            std::ostringstream fc;
            std::vector<std::string> fhead{""};
            for (std::size_t j = 0; j < phi.cols(); ++j)
                fhead.push_back("factor_" + std::to_string(j + 1));
            write_csv_row(fc, std::span<const std::string>{fhead});
            for (std::size_t i = 0; i < phi.rows(); ++i) {
                std::vector<std::string> row{"factor_" + std::to_string(i + 1)};
                for (std::size_t j = 0; j < phi.cols(); ++j)
                    row.push_back(fmt_double(phi(i, j)));
                write_csv_row(fc, std::span<const std::string>{row});
            }
            detail::write_text_file(outdir / "factor_correlations.csv", fc.str());
        }

        json transforms = json::array();
        for (const auto& t : run.transforms)
            transforms.push_back({{"column", t.column},
                                  {"lambda", detail::json_num(t.lambda)},
                                  {"shift", detail::json_num(t.shift)},
                                  {"outliers", t.outliers}});
        json eigs = json::array();
        for (double v : run.eigenvalues) eigs.push_back(detail::json_num(v));
        json model = {{"kmo", detail::json_num(run.kmo)},
                      {"n_factors", run.n_factors},
                      {"rotation", stats::to_string(run.model.rotation)},
                      {"promax_power", detail::json_num(opts.promax_power)},
                      {"outlier_treatment", stats::to_string(opts.treatment)},
                      {"box_cox", opts.use_box_cox},
                      {"heywood", run.model.heywood},
                      {"iterations", run.model.iterations},
                      {"eigenvalues", eigs},
                      {"transforms", transforms},
                      {"aligned_snapshots", dm.n_rows()},
                      {"columns", dm.columns},
                      {"log", run.log},
                      {"tool_version", version()},
                      {"warnings", warnings.items}};
        detail::write_text_file(outdir / "efa_model.json", model.dump(2) + "\n");

        for (const auto& w : warnings.items) err << "warning: " << w << "\n";
        out << "kmo " << fmt_double(run.kmo) << ", " << run.n_factors << " factor(s), "
            << stats::to_string(run.model.rotation) << " rotation\n";
        return 0;
    });
}

// ---- synth command ------------------------------------------------------------------

struct SynthCli {
    std::string chain_id = "synthetic";
    std::uint64_t entities = 5;
    std::string shares = "uniform";  // uniform | zipf:<s> | comma-separated shares
    double blocks_per_day = 144.0;
    std::uint64_t days = 70;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    bool with_attribution = false;
    std::string window_experiment;  // comma-separated day counts, e.g. "1,7,14"
    std::uint64_t repetitions = 100;
};

inline synth::ShareModel parse_share_model(const std::string& s) {
    if (s == "uniform") return synth::Uniform{};
    if (s.rfind("zipf:", 0) == 0) {
        auto v = parse_double(s.substr(5));
        if (!v) throw ConfigError("shares: cannot parse zipf exponent in '" + s + "'");
        return synth::Zipf{*v};
    }
    synth::ExplicitShares ex;
    for (const auto& item : detail::split_list(s)) {
        auto v = parse_double(item);
        if (!v) throw ConfigError("shares: cannot parse '" + item + "'");
        ex.shares.push_back(*v);
    }
    if (ex.shares.empty())
        throw ConfigError("shares must be 'uniform', 'zipf:<s>', or a share list");
    return ex;
}

inline int cmd_synth(const SynthCli& cli, std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() -> int {
        synth::SynthSpec spec;
        spec.chain_id = cli.chain_id;
        spec.entities = cli.entities;
        spec.shares = parse_share_model(cli.shares);
        spec.blocks_per_day = cli.blocks_per_day;
        spec.days = cli.days;
        spec.seed = cli.seed;
        synth::validate_spec(spec);

        fs::path outdir = cli.output_dir;
        fs::create_directories(outdir);

        synth::SynthStream stream = synth::generate_stream(spec);
        std::ostringstream blocks;
        ingest::write_blocks_csv(blocks, stream.ledger.blocks);
        detail::write_text_file(outdir / "blocks.csv", blocks.str());
        out << "generated " << stream.ledger.blocks.size() << " block(s) over " << cli.days
            << " day(s), " << cli.entities << " entities\n";

        if (cli.with_attribution) {
            auto recs = synth::synth_attribution(spec);
            std::ostringstream att;
            ingest::write_attribution_csv(att, recs);
            detail::write_text_file(outdir / "attribution.csv", att.str());
        }

        if (!cli.window_experiment.empty()) {
            std::vector<std::uint64_t> lengths;
            for (const auto& item : detail::split_list(cli.window_experiment)) {
                std::string core = item;
                if (!core.empty() && core.back() == 'd') core.pop_back();
                auto v = parse_u64(core);
                if (!v || *v == 0)
                    throw ConfigError("window_experiment: bad window length '" + item + "'");
                lengths.push_back(*v);
            }
            auto rows = synth::window_confidence_experiment(spec, lengths, cli.repetitions);
            std::ostringstream ex;
            write_csv_row(ex, {"window_days", "nc_mean", "nc_sd", "repetitions"});
            for (const auto& r : rows)
                write_csv_row(ex, {std::to_string(r.window_days), fmt_double(r.nc_mean),
                                   fmt_double(r.nc_sd), std::to_string(r.repetitions)});
            detail::write_text_file(outdir / "window_experiment.csv", ex.str());
            out << "window experiment: " << rows.size() << " window length(s), "
                << cli.repetitions << " repetition(s)\n";
        }
        return 0;
    });
}

// ---- report command ------------------------------------------------------------------

inline int cmd_report(const RunConfig& cfg, const std::vector<std::string>& paths,
                      std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() -> int {
        if (paths.empty()) {
            err << "warning: no series files given; nothing to plot\n";
            return 0;
        }
        std::vector<MetricSeries> series;
        series.reserve(paths.size());
        for (const auto& p : paths) series.push_back(read_series_csv(p));

        std::ostringstream tidy;
        write_csv_row(tidy, {"series", "snapshot", "value"});
        for (const auto& s : series)
            for (const auto& p : s.points)
                write_csv_row(tidy,
                              {s.metric_name, format_instant(p.snapshot), fmt_double(p.value)});

        fs::path outdir = cfg.output_dir;
        fs::create_directories(outdir);
        detail::write_text_file(outdir / "report.csv", tidy.str());

        std::ostringstream gp;
        gp << "# gnuplot script; run from the directory containing report.csv\n"
           << "set datafile separator \",\"\n"
           << "set xdata time\n"
           << "set timefmt \"%Y-%m-%dT%H:%M:%SZ\"\n"
           << "set format x \"%Y-%m\"\n"
           << "set key outside right\n"
           << "set grid\n"
           << "set terminal svg size 1000,520\n"
           << "set output \"report.svg\"\n"
           << "plot \\\n";
        for (std::size_t i = 0; i < series.size(); ++i) {
            std::string name = series[i].metric_name;
            for (auto& ch : name)
                if (ch == '"') ch = '\'';
            gp << "  \"report.csv\" every ::1 using 2:(strcol(1) eq \"" << name
               << "\" ? column(3) : NaN) with lines lw 2 title \"" << name << "\"";
            gp << (i + 1 < series.size() ? ", \\\n" : "\n");
        }
        detail::write_text_file(outdir / "report.gp", gp.str());

        out << "wrote report.csv and report.gp (" << series.size() << " series)\n";
        return 0;
    });
}

}  // namespace decmet::pipeline
