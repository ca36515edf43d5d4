#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "decmet/errors.hpp"
#include "decmet/ingest.hpp"
#include "decmet/metrics.hpp"
#include "decmet/model.hpp"
#include "decmet/stats.hpp"
#include "decmet/timeutil.hpp"

namespace decmet::synth {

// ---- deterministic PRNG ---------------------------------------------------

// SplitMix64 (Steele/Lea/Flood mixing constants). 64-bit integer state, so a
// fixed seed reproduces the identical sequence on every platform.
struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_unit() { return double(next() >> 11) * 0x1.0p-53; }

    // Uniform in [0, bound) by rejection; no modulo bias.
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound < 2) return 0;
        std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            std::uint64_t r = next();
            if (r >= threshold) return r % bound;
        }
    }

    // Standard normal via the polar method; pairs are generated together.
    double next_normal();

    bool have_cached_ = false;
    double cached_ = 0.0;
};

namespace detail {

// exp and log built from exactly-rounded IEEE operations in a fixed order,
// so results do not vary with the host libm.
inline double portable_exp(double x) {
    if (x != x) return x;
    if (x > 709.0) return std::numeric_limits<double>::infinity();
    if (x < -745.0) return 0.0;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    constexpr double inv_ln2 = 1.44269504088896338700;
    double k = std::floor(x * inv_ln2 + 0.5);
    double r = (x - k * ln2_hi) - k * ln2_lo;
    double p = 1.0;
    for (int n = 17; n >= 1; --n) p = 1.0 + r * p / double(n);
    return std::ldexp(p, int(k));
}

inline double portable_log(double x) {
    if (x != x || x < 0.0) return std::numeric_limits<double>::quiet_NaN();
    if (x == 0.0) return -std::numeric_limits<double>::infinity();
    if (std::isinf(x)) return x;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    int e = 0;
    double m = std::frexp(x, &e);  // m in [0.5, 1)
    if (m < 0.70710678118654752440) {
        m *= 2.0;
        e -= 1;
    }
    double t = (m - 1.0) / (m + 1.0);
    double u = t * t;
    // 2*atanh(t) expanded to odd powers; |t| <= 0.1716 so 13 terms suffice.
    double s = 0.0;
    for (int n = 12; n >= 1; --n) s = u * (1.0 / double(2 * n + 1) + s);
    double lnm = 2.0 * t * (1.0 + s);
    return double(e) * ln2_hi + (lnm + double(e) * ln2_lo);
}

}  // namespace detail

inline double SplitMix64::next_normal() {
    if (have_cached_) {
        have_cached_ = false;
        return cached_;
    }
    double u, v, s;
    do {
        u = 2.0 * next_unit() - 1.0;
        v = 2.0 * next_unit() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * detail::portable_log(s) / s);
    cached_ = v * f;
    have_cached_ = true;
    return u * f;
}

// Knuth's product method, split into chunks so the acceptance product never
// underflows. Poisson(a + b) = Poisson(a) + Poisson(b) for independent draws.
inline std::uint64_t poisson(SplitMix64& rng, double lambda) {
    if (!(lambda > 0.0)) return 0;
    std::uint64_t count = 0;
    while (lambda > 400.0) {
        count += poisson(rng, 400.0);
        lambda -= 400.0;
    }
    double limit = detail::portable_exp(-lambda);
    double p = 1.0;
    std::uint64_t k = 0;
    do {
        ++k;
        p *= rng.next_unit();
    } while (p > limit);
    return count + (k - 1);
}

// ---- share models ----------------------------------------------------------

struct Uniform {};
struct Zipf {
    double exponent = 1.0;
};
struct ExplicitShares {
    std::vector<double> shares;
};
using ShareModel = std::variant<Uniform, Zipf, ExplicitShares>;

struct SynthSpec {
    std::string chain_id = "synthetic";
    std::uint64_t entities = 5;
    ShareModel shares = Uniform{};
    double blocks_per_day = 144.0;
    std::uint64_t days = 70;
    std::uint64_t seed = 1;
};

inline void validate_spec(const SynthSpec& s) {
    if (s.entities == 0) throw ConfigError("synth: entities must be >= 1");
    if (!(s.blocks_per_day > 0.0) || !std::isfinite(s.blocks_per_day))
        throw ConfigError("synth: blocks_per_day must be a positive number");
    if (s.days == 0) throw ConfigError("synth: days must be >= 1");
    if (const auto* z = std::get_if<Zipf>(&s.shares)) {
        if (!(z->exponent > 0.0) || !std::isfinite(z->exponent))
            throw ConfigError("synth: zipf exponent must be positive");
    } else if (const auto* e = std::get_if<ExplicitShares>(&s.shares)) {
        if (e->shares.size() != s.entities)
            throw ConfigError("synth: explicit share list must have one entry per entity");
        double total = 0.0;
        for (double v : e->shares) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw ConfigError("synth: shares must be finite and non-negative");
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw ConfigError("synth: explicit shares must sum to 1");
    }
}

// Shares become integer weights once, up front; all per-block sampling is
// then pure integer arithmetic on the cumulative weights.
inline constexpr std::uint64_t WEIGHT_SCALE = 1'000'000'000'000ull;

inline std::vector<std::uint64_t> integer_weights(const SynthSpec& s) {
    std::vector<std::uint64_t> w(s.entities, 1);
    if (const auto* z = std::get_if<Zipf>(&s.shares)) {
        for (std::uint64_t i = 0; i < s.entities; ++i) {
            double raw = double(WEIGHT_SCALE) *
                         detail::portable_exp(-z->exponent * detail::portable_log(double(i + 1)));
            w[i] = std::max<std::uint64_t>(1, std::uint64_t(std::llround(raw)));
        }
    } else if (const auto* e = std::get_if<ExplicitShares>(&s.shares)) {
        for (std::uint64_t i = 0; i < s.entities; ++i)
            w[i] = std::uint64_t(std::llround(e->shares[i] * double(WEIGHT_SCALE)));
    }
    return w;
}

inline std::vector<std::uint64_t> cumulative_weights(const std::vector<std::uint64_t>& w) {
    std::vector<std::uint64_t> cum(w.size());
    std::uint64_t run = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (__builtin_add_overflow(run, w[i], &run))
            throw Error("synth: cumulative weights overflow");
        cum[i] = run;
    }
    if (run == 0) throw ConfigError("synth: all share weights are zero");
    return cum;
}

inline std::size_t sample_entity(SplitMix64& rng, const std::vector<std::uint64_t>& cum) {
    std::uint64_t r = rng.next_below(cum.back());
    return std::size_t(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin());
}

// ---- block stream generation ----------------------------------------------

inline std::string synth_address(std::size_t i) { return "a" + std::to_string(i); }
inline std::string synth_entity(std::size_t i) { return "miner" + std::to_string(i); }

struct SynthStream {
    EventLedger ledger;
    std::vector<std::uint64_t> creator_counts;  // by entity index
};

// Per day: Poisson block count, uniform second offsets (sorted), then one
// creator draw per block in chronological order.
inline SynthStream generate_stream(const SynthSpec& spec) {
    validate_spec(spec);
    auto weights = integer_weights(spec);
    auto cum = cumulative_weights(weights);
    SplitMix64 rng(spec.seed);

    using namespace std::chrono;
    Instant base = sys_days{year{2020} / 1 / 1};
    std::vector<BlockRecord> blocks;
    std::vector<std::uint64_t> counts(spec.entities, 0);
    std::uint64_t height = 0;
    for (std::uint64_t day = 0; day < spec.days; ++day) {
        std::uint64_t m = poisson(rng, spec.blocks_per_day);
        std::vector<std::uint64_t> offsets(m);
        for (auto& o : offsets) o = rng.next_below(86400);
        std::sort(offsets.begin(), offsets.end());
        for (std::uint64_t o : offsets) {
            std::size_t who = sample_entity(rng, cum);
            ++counts[who];
            BlockRecord b;
            b.height = ++height;
            b.timestamp = base + seconds{day * 86400 + o};
            b.reward_addresses = {synth_address(who)};
            blocks.push_back(std::move(b));
        }
    }
    StudyWindow window{base, base + seconds{std::int64_t(spec.days) * 86400}};
    SynthStream out;
    out.ledger = make_ledger(spec.chain_id, std::move(blocks), {}, window, nullptr, nullptr);
    out.creator_counts = std::move(counts);
    return out;
}

inline EventLedger generate_block_stream(const SynthSpec& spec) {
    return generate_stream(spec).ledger;
}

// Tag map so the clustering path can be exercised on generated data.
inline std::vector<ingest::AttributionRecord> synth_attribution(const SynthSpec& spec) {
    std::vector<ingest::AttributionRecord> out;
    out.reserve(spec.entities);
    for (std::uint64_t i = 0; i < spec.entities; ++i) {
        ingest::AttributionRecord r;
        r.kind = ingest::AttributionKind::address_tag;
        r.key = synth_address(i);
        r.entity_id = synth_entity(i);
        r.source = "synthetic";
        out.push_back(std::move(r));
    }
    return out;
}

// ---- factor-structured datasets ---------------------------------------------

// Rows are L·f + noise_sd·eps with f, eps standard normal. Column names are
// v1..vp; row snapshots are consecutive days for alignment convenience.
inline stats::DataMatrix generate_factor_dataset(std::size_t n_rows,
                                                 const stats::Matrix& loadings,
                                                 double noise_sd, std::uint64_t seed) {
    if (n_rows < 3) throw ConfigError("factor dataset needs at least 3 rows");
    if (loadings.rows() == 0 || loadings.cols() == 0)
        throw ConfigError("factor dataset needs a non-empty loading matrix");
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd))
        throw ConfigError("noise_sd must be finite and non-negative");

    std::size_t p = loadings.rows(), k = loadings.cols();
    stats::DataMatrix m;
    for (std::size_t j = 0; j < p; ++j) m.columns.push_back("v" + std::to_string(j + 1));
    using namespace std::chrono;
    Instant base = sys_days{year{2020} / 1 / 1};
    SplitMix64 rng(seed);
    std::vector<double> f(k);
    m.values.reserve(n_rows * p);
    for (std::size_t r = 0; r < n_rows; ++r) {
        m.rows.push_back(base + seconds{std::int64_t(r) * 86400});
        for (std::size_t j = 0; j < k; ++j) f[j] = rng.next_normal();
        for (std::size_t i = 0; i < p; ++i) {
            double x = 0.0;
            for (std::size_t j = 0; j < k; ++j) x += loadings(i, j) * f[j];
            x += noise_sd * rng.next_normal();
            m.values.push_back(x);
        }
    }
    return m;
}

// ---- window-length confidence experiment -------------------------------------

struct WindowExperimentRow {
    std::uint64_t window_days = 0;
    double nc_mean = 0.0;
    double nc_sd = 0.0;  // population sd across repetitions
    std::uint64_t repetitions = 0;
};

// For each window length: regenerate the stream `repetitions` times with
// seeds seed+rep and record the Nakamoto coefficient of the creator counts.
inline std::vector<WindowExperimentRow> window_confidence_experiment(
    const SynthSpec& spec, std::span<const std::uint64_t> window_days,
    std::uint64_t repetitions) {
    if (window_days.size() < 2)
        throw ConfigError("window experiment needs at least two window lengths");
    if (repetitions < 2) throw ConfigError("window experiment needs at least two repetitions");
    validate_spec(spec);

    std::vector<WindowExperimentRow> rows;
    for (std::uint64_t w : window_days) {
        if (w == 0) throw ConfigError("window lengths must be >= 1 day");
        std::vector<double> ncs;
        for (std::uint64_t rep = 0; rep < repetitions; ++rep) {
            SynthSpec s = spec;
            s.days = w;
            s.seed = spec.seed + rep;
            SynthStream st = generate_stream(s);
            std::vector<double> amounts(st.creator_counts.begin(), st.creator_counts.end());
            double total = 0.0;
            for (double a : amounts) total += a;
            if (total == 0.0) continue;  // empty stream, nothing to measure
            ncs.push_back(double(metrics::nakamoto(amounts)));
        }
        if (ncs.size() < 2)
            throw Error("window experiment: too few non-empty repetitions at " +
                        std::to_string(w) + "d");
        double mean = stats::mean_of(ncs);
        double sd = stats::population_sd(ncs, mean);
        rows.push_back({w, mean, sd, ncs.size()});
    }
    return rows;
}

}  // namespace decmet::synth
