#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "decmet/cluster.hpp"
#include "decmet/csv.hpp"
#include "decmet/errors.hpp"
#include "decmet/model.hpp"

namespace decmet::windows {

struct DurationWindow {
    Duration length{};
};
struct BlockCountWindow {
    std::uint64_t count = 0;
};
using ResourceWindow = std::variant<DurationWindow, BlockCountWindow>;

struct PopSame {};
struct PopFactor {
    double k = 2.0;
};
struct PopAllTime {};
using PopulationWindow = std::variant<PopSame, PopFactor, PopAllTime>;

struct ThresholdNone {};
struct TopK {
    std::uint64_t k = 0;
};
struct TopPercent {
    double percent = 0.0;
};
struct MinBalance {
    std::uint64_t min_amount = 0;  // survivors need amount strictly above this
};
using Threshold = std::variant<ThresholdNone, TopK, TopPercent, MinBalance>;

// Windows always look back: each window ends at its snapshot time.
struct WindowConfig {
    ResourceWindow resource_window = DurationWindow{std::chrono::days{7}};
    PopulationWindow population_window = PopFactor{2.0};
    Duration frequency = std::chrono::days{7};
    Threshold threshold = ThresholdNone{};
};

inline void validate(const WindowConfig& cfg) {
    if (cfg.frequency <= Duration::zero()) throw ConfigError("frequency must be positive");
    if (auto* d = std::get_if<DurationWindow>(&cfg.resource_window)) {
        if (d->length <= Duration::zero())
            throw ConfigError("resource window duration must be positive");
    } else if (std::get<BlockCountWindow>(cfg.resource_window).count == 0) {
        throw ConfigError("resource window block count must be positive");
    }
    if (auto* f = std::get_if<PopFactor>(&cfg.population_window))
        if (!(f->k >= 1.0)) throw ConfigError("population window factor must be >= 1");
}

// ---- string forms (config files, manifests) ----

inline std::string to_string(const ResourceWindow& w) {
    if (auto* d = std::get_if<DurationWindow>(&w))
        return fmt_double(double(d->length.count()) / 86400.0) + "d";
    return std::to_string(std::get<BlockCountWindow>(w).count) + "blocks";
}

inline std::string to_string(const PopulationWindow& w) {
    if (std::holds_alternative<PopSame>(w)) return "same";
    if (auto* f = std::get_if<PopFactor>(&w)) return "factor:" + fmt_double(f->k);
    return "all_time";
}

inline std::string to_string(const Threshold& t) {
    if (std::holds_alternative<ThresholdNone>(t)) return "none";
    if (auto* k = std::get_if<TopK>(&t)) return "top_k:" + std::to_string(k->k);
    if (auto* p = std::get_if<TopPercent>(&t)) return "top_percent:" + fmt_double(p->percent);
    return "min_balance:" + std::to_string(std::get<MinBalance>(t).min_amount);
}

inline PopulationWindow parse_population_window(std::string_view s) {
    if (s == "same") return PopSame{};
    if (s == "all_time") return PopAllTime{};
    if (s.rfind("factor:", 0) == 0) {
        auto v = parse_double(s.substr(7));
        if (v && *v >= 1.0) return PopFactor{*v};
    }
    throw ConfigError("bad population window '" + std::string{s} +
                      "' (expected same, factor:K with K >= 1, or all_time)");
}

inline Threshold parse_threshold(std::string_view s) {
    if (s == "none") return ThresholdNone{};
    if (s.rfind("top_k:", 0) == 0) {
        std::string_view arg = s.substr(6);
        if (!arg.empty() && arg[0] == '-')
            throw InvalidThresholdError("top_k requires K >= 1");
        auto v = parse_u64(arg);
        if (!v || *v == 0) throw InvalidThresholdError("top_k requires K >= 1");
        return TopK{*v};
    }
    if (s.rfind("top_percent:", 0) == 0) {
        auto v = parse_double(s.substr(12));
        if (!v || !(*v > 0.0 && *v <= 100.0))
            throw InvalidThresholdError("top_percent requires P in (0,100]");
        return TopPercent{*v};
    }
    if (s.rfind("min_balance:", 0) == 0) {
        std::string_view arg = s.substr(12);
        if (!arg.empty() && arg[0] == '-')
            throw InvalidThresholdError("min_balance requires B >= 0");
        auto v = parse_u64(arg);
        if (!v) throw InvalidThresholdError("min_balance requires B >= 0");
        return MinBalance{*v};
    }
    throw InvalidThresholdError("bad threshold '" + std::string{s} + "'");
}

// ---- snapshot schedule ----

// First snapshot falls one resource window (or, in block-count mode, one
// frequency step) after the study start; later ones step by the frequency.
// Snapshots must lie inside the half-open study window.
inline std::vector<Instant> snapshot_times(const StudyWindow& study, const WindowConfig& cfg) {
    validate(cfg);
    Duration first_offset = cfg.frequency;
    if (auto* d = std::get_if<DurationWindow>(&cfg.resource_window)) first_offset = d->length;
    std::vector<Instant> out;
    for (Instant t = study.start + first_offset; t < study.end; t += cfg.frequency)
        out.push_back(t);
    if (out.empty())
        throw EmptyStudyWindowError("no snapshot fits the study window " +
                                    format_instant(study.start) + " .. " +
                                    format_instant(study.end));
    return out;
}

namespace detail {

struct BlockRange {
    std::size_t lo = 0, hi = 0;  // [lo, hi) into ledger.blocks
};

inline std::size_t first_at_or_after(const std::vector<BlockRecord>& blocks, Instant t) {
    auto it = std::lower_bound(blocks.begin(), blocks.end(), t,
                               [](const BlockRecord& b, Instant v) { return b.timestamp < v; });
    return std::size_t(it - blocks.begin());
}

}  // namespace detail

// Block counts per resolved entity over [t − resource_window, t). The
// population window decides who counts as active: everyone from a broader
// interval joins, holders of zero blocks included.
inline ResourceDistribution consensus_distribution(const EventLedger& ledger,
                                                   const cluster::EntityResolver& resolver,
                                                   Instant t, const WindowConfig& cfg,
                                                   Warnings* warnings = nullptr) {
    validate(cfg);
    const auto& blocks = ledger.blocks;
    const Date as_of = date_of(t);

    detail::BlockRange res;
    if (auto* d = std::get_if<DurationWindow>(&cfg.resource_window)) {
        res.lo = detail::first_at_or_after(blocks, t - d->length);
        res.hi = detail::first_at_or_after(blocks, t);
    } else {
        std::uint64_t count = std::get<BlockCountWindow>(cfg.resource_window).count;
        res.hi = detail::first_at_or_after(blocks, t);
        res.lo = res.hi >= count ? res.hi - count : 0;
        if (res.hi - res.lo < count && res.hi > res.lo)
            warn(warnings, "snapshot " + format_instant(t) + ": only " +
                               std::to_string(res.hi - res.lo) + " of " + std::to_string(count) +
                               " requested blocks available");
    }
    if (res.lo == res.hi)
        throw EmptyWindowError("no blocks in resource window ending at " + format_instant(t));
    if (res.hi - res.lo < 150)
        warn(warnings, "snapshot " + format_instant(t) + ": resource window covers " +
                           std::to_string(res.hi - res.lo) + " blocks (< 150)");

    ResourceDistribution dist;
    dist.snapshot = t;
    dist.resource_kind = ResourceKind::blocks;
    for (std::size_t i = res.lo; i < res.hi; ++i)
        ++dist.entries[resolver.resolve_block(blocks[i], as_of)];

    detail::BlockRange pop = res;
    if (std::holds_alternative<PopAllTime>(cfg.population_window)) {
        pop = {0, blocks.size()};
    } else if (auto* f = std::get_if<PopFactor>(&cfg.population_window)) {
        if (auto* d = std::get_if<DurationWindow>(&cfg.resource_window)) {
            // Interval of length k·w centered on the resource window,
            // clipped to the study window.
            Instant centre = t - d->length / 2;
            auto half = Duration{(long long)std::llround(double(d->length.count()) * f->k / 2.0)};
            Instant from = std::max(centre - half, ledger.study_window.start);
            Instant to = std::min(centre + half, ledger.study_window.end);
            pop.lo = detail::first_at_or_after(blocks, from);
            pop.hi = detail::first_at_or_after(blocks, to);
        } else {
            std::uint64_t count = std::get<BlockCountWindow>(cfg.resource_window).count;
            auto target = std::uint64_t(std::llround(double(count) * f->k));
            std::uint64_t extra = target > count ? (target - count) / 2 : 0;
            pop.lo = res.lo > extra ? res.lo - extra : 0;
            pop.hi = std::min(blocks.size(), pop.lo + target);
        }
        // The population window always contains the resource window.
        pop.lo = std::min(pop.lo, res.lo);
        pop.hi = std::max(pop.hi, res.hi);
    }
    for (std::size_t i = pop.lo; i < pop.hi; ++i)
        dist.population.insert(resolver.resolve_block(blocks[i], as_of));
    for (const auto& [entity, n] : dist.entries) {
        (void)n;
        dist.population.insert(entity);  // defensive; pop range covers res
    }
    return dist;
}

// Balance sums per resolved entity for one snapshot date. Zero balances
// never reach the ledger, so population = entities with positive holdings.
inline ResourceDistribution tokenomics_distribution(const EventLedger& ledger,
                                                    const cluster::EntityResolver& resolver,
                                                    Date snapshot_date,
                                                    Warnings* warnings = nullptr) {
    (void)warnings;
    auto it = ledger.balance_snapshots.find(snapshot_date);
    if (it == ledger.balance_snapshots.end())
        throw MissingSnapshotError("no balance snapshot for " + format_date(snapshot_date));
    ResourceDistribution dist;
    dist.snapshot = Instant{snapshot_date};
    dist.resource_kind = ResourceKind::tokens;
    for (const auto& rec : it->second) {
        std::string entity = resolver.resolve(rec.address, snapshot_date);
        auto& slot = dist.entries[entity];
        if (__builtin_add_overflow(slot, rec.balance, &slot))
            throw Error("balance overflow aggregating entity '" + entity + "'");
    }
    for (const auto& [entity, amt] : dist.entries) {
        (void)amt;
        dist.population.insert(entity);
    }
    return dist;
}

// Inclusion thresholds prune an already clustered, population-estimated
// distribution. Ranking covers the whole population (zero holders last,
// ties by entity id), so top_k(K) with K >= n is exactly the identity.
inline ResourceDistribution apply_threshold(const ResourceDistribution& d,
                                            const Threshold& threshold) {
    if (std::holds_alternative<ThresholdNone>(threshold)) return d;

    std::vector<std::pair<std::string, std::uint64_t>> ranked;
    ranked.reserve(d.population.size());
    for (const auto& id : d.population) {
        auto it = d.entries.find(id);
        ranked.emplace_back(id, it == d.entries.end() ? 0 : it->second);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::size_t keep = 0;
    if (auto* k = std::get_if<TopK>(&threshold)) {
        if (k->k == 0) throw InvalidThresholdError("top_k requires K >= 1");
        keep = std::min<std::size_t>(k->k, ranked.size());
    } else if (auto* p = std::get_if<TopPercent>(&threshold)) {
        if (!(p->percent > 0.0 && p->percent <= 100.0))
            throw InvalidThresholdError("top_percent requires P in (0,100]");
        keep = std::size_t(std::ceil(p->percent * double(ranked.size()) / 100.0));
        keep = std::min(keep, ranked.size());
    } else if (auto* b = std::get_if<MinBalance>(&threshold)) {
        while (keep < ranked.size() && ranked[keep].second > b->min_amount) ++keep;
    }

    ResourceDistribution out;
    out.snapshot = d.snapshot;
    out.resource_kind = d.resource_kind;
    for (std::size_t i = 0; i < keep; ++i) {
        out.population.insert(ranked[i].first);
        if (ranked[i].second > 0) out.entries.emplace(ranked[i].first, ranked[i].second);
    }
    return out;
}

}  // namespace decmet::windows
