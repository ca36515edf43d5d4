#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "decmet/errors.hpp"
#include "decmet/model.hpp"

namespace decmet::metrics {

// All metrics consume a full-population amount vector (zeros included) and
// convert to floating point only here. They never re-filter: thresholds and
// population rules are applied upstream.

namespace detail {

inline double checked_total(std::span<const double> amounts) {
    double total = 0.0;
    for (double a : amounts) {
        if (a < 0.0 || !std::isfinite(a)) throw Error("amounts must be finite and nonnegative");
        total += a;
    }
    return total;
}

inline double positive_total(std::span<const double> amounts) {
    double total = checked_total(amounts);
    if (total <= 0.0) throw ZeroTotalError("metric requires a positive total amount");
    return total;
}

// Amounts sorted descending; enough for every ranking metric here.
inline std::vector<double> sorted_desc(std::span<const double> amounts) {
    std::vector<double> v(amounts.begin(), amounts.end());
    std::sort(v.begin(), v.end(), std::greater<>());
    return v;
}

}  // namespace detail

// Shannon entropy of the share vector, in units of log `base` (bits for 2).
// Zero shares contribute nothing (0·log 0 := 0).
inline double entropy(std::span<const double> amounts, double base = 2.0) {
    if (!(base > 1.0)) throw Error("entropy base must be > 1");
    double total = detail::positive_total(amounts);
    double h = 0.0;
    for (double a : amounts) {
        if (a <= 0.0) continue;
        double p = a / total;
        h -= p * std::log2(p);
    }
    if (base != 2.0) h /= std::log2(base);
    return h < 0.0 ? 0.0 : h;  // clamp -0 from a single term at p=1
}

// Gini coefficient over the full population, zeros included. Uses the
// Lorenz-consistent sorted-rank estimator:
//   G = (2·Σ i·x_(i)) / (n·Σ x) − (n+1)/n, amounts ascending, i from 1.
inline double gini(std::span<const double> amounts) {
    if (amounts.empty()) throw Error("gini requires n >= 1");
    double total = detail::positive_total(amounts);
    std::vector<double> v(amounts.begin(), amounts.end());
    std::sort(v.begin(), v.end());
    double weighted = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) weighted += double(i + 1) * v[i];
    double n = double(v.size());
    return (2.0 * weighted) / (n * total) - (n + 1.0) / n;
}

// Minimum number of entities whose combined share strictly exceeds τ.
inline std::size_t tau_index(std::span<const double> amounts, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidTauError("tau must lie in (0,1)");
    double total = detail::positive_total(amounts);
    auto v = detail::sorted_desc(amounts);
    double need = tau * total;
    double cum = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        cum += v[k];
        if (cum > need) return k + 1;
    }
    // Unreachable for τ < 1 with a positive total, but keep the guard honest.
    throw Error("tau threshold never exceeded");
}

// Nakamoto coefficient: strict majority (> 50%), i.e. tau_index at 0.5.
inline std::size_t nakamoto(std::span<const double> amounts) { return tau_index(amounts, 0.5); }

// Combined share of the m largest entities. When m exceeds the population
// size the ratio saturates at 1 and `truncated` (if given) is set.
inline double concentration_ratio(std::span<const double> amounts, int m,
                                  bool* truncated = nullptr) {
    if (m <= 0) throw InvalidMError("concentration ratio requires m >= 1");
    double total = detail::positive_total(amounts);
    auto v = detail::sorted_desc(amounts);
    if (truncated) *truncated = std::size_t(m) > v.size();
    if (std::size_t(m) >= v.size()) return 1.0;
    double top = 0.0;
    for (std::size_t i = 0; i < std::size_t(m); ++i) top += v[i];
    return top / total;
}

// Herfindahl-Hirschman index on the 0..10000 scale (shares as percentages).
inline double hhi(std::span<const double> amounts) {
    double total = detail::positive_total(amounts);
    double sum = 0.0;
    for (double a : amounts) {
        double pct = 100.0 * (a / total);
        sum += pct * pct;
    }
    return sum;
}

enum class HhiBand { unconcentrated, moderate, high };

// Agency guideline bands: < 1500 unconcentrated, 1500..2500 moderate, > 2500 high.
inline HhiBand hhi_band(double value) {
    if (value < 1500.0) return HhiBand::unconcentrated;
    if (value <= 2500.0) return HhiBand::moderate;
    return HhiBand::high;
}

inline const char* to_string(HhiBand b) {
    switch (b) {
        case HhiBand::unconcentrated: return "unconcentrated";
        case HhiBand::moderate: return "moderate";
        default: return "high";
    }
}

// Count of entities that actually hold a positive amount.
inline std::size_t num_parties(std::span<const double> amounts) {
    std::size_t n = 0;
    for (double a : amounts) {
        if (a < 0.0 || !std::isfinite(a)) throw Error("amounts must be finite and nonnegative");
        if (a > 0.0) ++n;
    }
    return n;
}

// Theil T index: (1/n)·Σ (x/μ)·ln(x/μ) over positive amounts, μ the mean
// over the full population. 0 at perfect equality, ln n at monopoly.
inline double theil(std::span<const double> amounts) {
    if (amounts.empty()) throw Error("theil requires n >= 1");
    double total = detail::positive_total(amounts);
    double n = double(amounts.size());
    double mu = total / n;
    double sum = 0.0;
    for (double a : amounts) {
        if (a <= 0.0) continue;
        double r = a / mu;
        sum += r * std::log(r);
    }
    double t = sum / n;
    return t < 0.0 ? 0.0 : t;
}

// ---- ResourceDistribution adapters ----

inline std::vector<double> amounts_of(const ResourceDistribution& d) {
    auto ints = amount_vector(d);
    std::vector<double> v;
    v.reserve(ints.size());
    for (auto a : ints) v.push_back(double(a));
    return v;
}

inline double entropy(const ResourceDistribution& d, double base = 2.0) {
    return entropy(std::span<const double>{amounts_of(d)}, base);
}
inline double gini(const ResourceDistribution& d) {
    return gini(std::span<const double>{amounts_of(d)});
}
inline std::size_t nakamoto(const ResourceDistribution& d) {
    return nakamoto(std::span<const double>{amounts_of(d)});
}
inline std::size_t tau_index(const ResourceDistribution& d, double tau) {
    return tau_index(std::span<const double>{amounts_of(d)}, tau);
}
inline double concentration_ratio(const ResourceDistribution& d, int m,
                                  bool* truncated = nullptr) {
    return concentration_ratio(std::span<const double>{amounts_of(d)}, m, truncated);
}
inline double hhi(const ResourceDistribution& d) {
    return hhi(std::span<const double>{amounts_of(d)});
}
inline std::size_t num_parties(const ResourceDistribution& d) {
    return num_parties(std::span<const double>{amounts_of(d)});
}
inline double theil(const ResourceDistribution& d) {
    return theil(std::span<const double>{amounts_of(d)});
}

// ---- Suite evaluation ----

struct MetricValue {
    std::string name;
    double value = 0.0;
    std::size_t n = 0;  // population size the metric saw
    Instant snapshot{};
};

struct MetricSuiteConfig {
    double entropy_base = 2.0;
    std::vector<double> tau_values{0.33};
    std::vector<int> cr_values{1, 3, 4, 5};
    bool include_theil = false;
};

inline std::string tau_metric_name(double tau) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "tau_%g", tau);
    return buf;
}

inline std::string cr_metric_name(int m) { return "cr_" + std::to_string(m); }

// Evaluates the configured metric set over one distribution. Emission order
// is fixed so downstream CSV columns stay stable.
inline std::vector<MetricValue> metric_suite(const ResourceDistribution& d,
                                             const MetricSuiteConfig& cfg = {}) {
    auto v = amounts_of(d);
    std::span<const double> a{v};
    std::size_t n = d.population.size();
    std::vector<MetricValue> out;
    out.push_back({"entropy", entropy(a, cfg.entropy_base), n, d.snapshot});
    out.push_back({"gini", gini(a), n, d.snapshot});
    out.push_back({"nakamoto", double(nakamoto(a)), n, d.snapshot});
    for (double tau : cfg.tau_values)
        out.push_back({tau_metric_name(tau), double(tau_index(a, tau)), n, d.snapshot});
    for (int m : cfg.cr_values)
        out.push_back({cr_metric_name(m), concentration_ratio(a, m), n, d.snapshot});
    out.push_back({"hhi", hhi(a), n, d.snapshot});
    out.push_back({"parties", double(num_parties(a)), n, d.snapshot});
    if (cfg.include_theil) out.push_back({"theil", theil(a), n, d.snapshot});
    return out;
}

}  // namespace decmet::metrics
