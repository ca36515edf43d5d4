#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "decmet/metrics.hpp"
#include "decmet/synthlab.hpp"
#include "oracles.hpp"

using namespace decmet;
namespace m = decmet::metrics;

namespace {

std::vector<double> v(std::initializer_list<double> xs) { return xs; }

// Random nonneg integer-valued amounts with at least one positive entry.
std::vector<double> random_amounts(synth::SplitMix64& rng, std::size_t max_n,
                                   std::uint64_t max_amount = 999) {
    std::size_t n = 1 + std::size_t(rng.next_below(max_n));
    std::vector<double> out(n);
    for (auto& x : out) x = double(rng.next_below(max_amount + 1));
    out[std::size_t(rng.next_below(n))] = double(1 + rng.next_below(max_amount));
    return out;
}

}  // namespace

TEST_CASE("entropy: certainty and symmetry anchors") {
    REQUIRE(m::entropy(v({42.0})) == 0.0);
    REQUIRE(m::entropy(v({1, 1})) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(m::entropy(v({1, 1, 1, 1})) == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(m::entropy(v({0.5, 0.25, 0.25})) == Catch::Approx(1.5).margin(1e-12));
}

TEST_CASE("entropy: equal producers hit log2(n) for n in {2,4,8,1024}") {
    for (std::size_t n : {2, 4, 8, 1024}) {
        std::vector<double> a(n, 3.0);
        REQUIRE(m::entropy(a) == Catch::Approx(std::log2(double(n))).margin(1e-12));
    }
}

TEST_CASE("entropy: base knob converts units") {
    auto a = v({5, 3, 2, 7});
    double bits = m::entropy(a, 2.0);
    double nats = m::entropy(a, std::exp(1.0));
    REQUIRE(nats == Catch::Approx(bits * std::log(2.0)).margin(1e-12));
    REQUIRE_THROWS_AS(m::entropy(a, 1.0), Error);
    REQUIRE_THROWS_AS(m::entropy(a, 0.5), Error);
}

TEST_CASE("entropy: zero amounts contribute nothing") {
    REQUIRE(m::entropy(v({1, 1, 0, 0})) == Catch::Approx(m::entropy(v({1, 1}))).margin(1e-12));
}

TEST_CASE("entropy: matches the direct definition on random vectors") {
    synth::SplitMix64 rng(11);
    for (int rep = 0; rep < 100; ++rep) {
        auto a = random_amounts(rng, 40);
        REQUIRE(m::entropy(a) == Catch::Approx(oracles::entropy_direct(a)).margin(1e-10));
    }
}

TEST_CASE("entropy: bounded by log2 of party count, equality iff equal shares") {
    synth::SplitMix64 rng(12);
    for (int rep = 0; rep < 100; ++rep) {
        auto a = random_amounts(rng, 20);
        double cap = std::log2(double(m::num_parties(a)));
        REQUIRE(m::entropy(a) <= cap + 1e-12);
    }
    REQUIRE(m::entropy(v({7, 7, 7, 0})) == Catch::Approx(std::log2(3.0)).margin(1e-12));
}

TEST_CASE("gini: worked examples") {
    REQUIRE(m::gini(v({3, 2, 1})) == Catch::Approx(0.2222).margin(1e-4));
    REQUIRE(m::gini(v({3, 2, 1, 0})) == Catch::Approx(0.4167).margin(1e-4));
}

TEST_CASE("gini: equality and degenerate inputs") {
    REQUIRE(m::gini(v({5, 5, 5, 5})) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(m::gini(v({42})) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE_THROWS_AS(m::gini(v({0, 0})), ZeroTotalError);
    REQUIRE_THROWS_AS(m::gini(std::vector<double>{}), Error);
}

TEST_CASE("gini: sorted-rank formula equals mean-absolute-difference oracle") {
    synth::SplitMix64 rng(13);
    for (int rep = 0; rep < 200; ++rep) {
        auto a = random_amounts(rng, 50);
        REQUIRE(m::gini(a) == Catch::Approx(oracles::gini_pairwise(a)).margin(1e-9));
    }
}

TEST_CASE("nakamoto: strict majority rule") {
    REQUIRE(m::nakamoto(v({10})) == 1);
    REQUIRE(m::nakamoto(v({0.4, 0.3, 0.3})) == 2);
    // Two exactly-half shares: one holder reaches 0.5 but never exceeds it.
    REQUIRE(m::nakamoto(v({1, 1})) == 2);
    REQUIRE(m::nakamoto(v({6, 3, 1})) == 1);
}

TEST_CASE("tau index: worked example and validation") {
    REQUIRE(m::tau_index(v({0.3, 0.3, 0.2, 0.2}), 0.33) == 2);
    REQUIRE(m::tau_index(v({0.3, 0.3, 0.2, 0.2}), 0.5) == 2);
    REQUIRE(m::tau_index(v({0.3, 0.3, 0.2, 0.2}), 0.9) == 4);
    REQUIRE_THROWS_AS(m::tau_index(v({1, 1}), 0.0), InvalidTauError);
    REQUIRE_THROWS_AS(m::tau_index(v({1, 1}), 1.0), InvalidTauError);
    REQUIRE_THROWS_AS(m::tau_index(v({1, 1}), -0.2), InvalidTauError);
    REQUIRE_THROWS_AS(m::tau_index(v({0, 0}), 0.5), ZeroTotalError);
}

TEST_CASE("tau index: equals exhaustive minimal-prefix search on random vectors") {
    synth::SplitMix64 rng(14);
    const std::pair<double, std::uint64_t> taus[] = {{0.33, 33}, {0.5, 50}, {0.66, 66}};
    for (int rep = 0; rep < 200; ++rep) {
        auto a = random_amounts(rng, 15);
        std::vector<std::uint64_t> ints(a.begin(), a.end());
        for (auto [tau, num] : taus)
            REQUIRE(m::tau_index(a, tau) == oracles::min_prefix_over(ints, num));
    }
}

TEST_CASE("tau index: exact-boundary prefixes are excluded by the strict rule") {
    // 66 is exactly 66% of the total; strict exceedance pushes past it.
    REQUIRE(m::tau_index(v({66, 34}), 0.66) == 2);
    REQUIRE(m::tau_index(v({34, 32, 20, 14}), 0.66) == 3);
    // 3 is exactly half of 6.
    REQUIRE(m::tau_index(v({3, 2, 1}), 0.5) == 2);
    REQUIRE(m::tau_index(v({67, 33}), 0.33) == 1);
}

TEST_CASE("tau index at 0.5 is exactly the nakamoto coefficient") {
    synth::SplitMix64 rng(15);
    for (int rep = 0; rep < 300; ++rep) {
        auto a = random_amounts(rng, 30);
        REQUIRE(m::nakamoto(a) == m::tau_index(a, 0.5));
    }
}

TEST_CASE("concentration ratio: worked example and saturation") {
    REQUIRE(m::concentration_ratio(v({0.5, 0.3, 0.2}), 2) == Catch::Approx(0.8).margin(1e-12));
    REQUIRE(m::concentration_ratio(v({5, 3, 2}), 3) == 1.0);
    bool truncated = false;
    REQUIRE(m::concentration_ratio(v({5, 3, 2}), 10, &truncated) == 1.0);
    REQUIRE(truncated);
    truncated = true;
    m::concentration_ratio(v({5, 3, 2}), 2, &truncated);
    REQUIRE_FALSE(truncated);
    REQUIRE_THROWS_AS(m::concentration_ratio(v({1, 1}), 0), InvalidMError);
    REQUIRE_THROWS_AS(m::concentration_ratio(v({1, 1}), -3), InvalidMError);
}

TEST_CASE("concentration ratio: monotone in m") {
    synth::SplitMix64 rng(16);
    for (int rep = 0; rep < 50; ++rep) {
        auto a = random_amounts(rng, 20);
        double prev = 0.0;
        for (int k = 1; k <= int(a.size()); ++k) {
            double cur = m::concentration_ratio(a, k);
            REQUIRE(cur >= prev - 1e-12);
            prev = cur;
        }
        REQUIRE(prev == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("hhi: monopoly and duopoly anchors") {
    REQUIRE(m::hhi(v({123})) == 10000.0);
    REQUIRE(m::hhi(v({7, 7})) == 5000.0);
    REQUIRE(m::hhi(v({1, 1, 1, 1})) == Catch::Approx(2500.0).margin(1e-9));
}

TEST_CASE("hhi: band labels switch exactly at 1500 and 2500") {
    using m::HhiBand;
    REQUIRE(m::hhi_band(1499.999) == HhiBand::unconcentrated);
    REQUIRE(m::hhi_band(1500.0) == HhiBand::moderate);
    REQUIRE(m::hhi_band(2500.0) == HhiBand::moderate);
    REQUIRE(m::hhi_band(2500.001) == HhiBand::high);
    REQUIRE(std::string{m::to_string(HhiBand::unconcentrated)} == "unconcentrated");
    REQUIRE(std::string{m::to_string(HhiBand::moderate)} == "moderate");
    REQUIRE(std::string{m::to_string(HhiBand::high)} == "high");
}

TEST_CASE("num_parties: counts only positive holders") {
    REQUIRE(m::num_parties(v({5, 0})) == 1);
    REQUIRE(m::num_parties(std::vector<double>{}) == 0);
    REQUIRE(m::num_parties(v({0, 0, 0})) == 0);
    REQUIRE(m::num_parties(v({1, 2, 3})) == 3);
}

TEST_CASE("theil: equality floor and monopoly ceiling") {
    REQUIRE(m::theil(v({4, 4, 4})) == Catch::Approx(0.0).margin(1e-12));
    for (std::size_t n : {2, 5, 17}) {
        std::vector<double> a(n, 0.0);
        a[0] = 100.0;
        REQUIRE(m::theil(a) == Catch::Approx(std::log(double(n))).margin(1e-12));
    }
}

TEST_CASE("theil: nonnegative on random vectors") {
    synth::SplitMix64 rng(17);
    for (int rep = 0; rep < 100; ++rep) REQUIRE(m::theil(random_amounts(rng, 30)) >= 0.0);
}

TEST_CASE("metrics: scale invariance across nine orders of magnitude") {
    synth::SplitMix64 rng(18);
    for (int rep = 0; rep < 50; ++rep) {
        auto a = random_amounts(rng, 25);
        // Vectors with a prefix sum exactly on a threshold boundary are
        // legitimately unstable under inexact rescaling; resample those.
        std::vector<std::uint64_t> ints(a.begin(), a.end());
        if (!oracles::tau_boundary_free(ints, {33, 50})) {
            --rep;
            continue;
        }
        for (double c : {1e-6, 3.0, 1e9}) {
            std::vector<double> b(a);
            for (double& x : b) x *= c;
            REQUIRE(m::entropy(b) == Catch::Approx(m::entropy(a)).margin(1e-9));
            REQUIRE(m::gini(b) == Catch::Approx(m::gini(a)).margin(1e-9));
            REQUIRE(m::nakamoto(b) == m::nakamoto(a));
            REQUIRE(m::tau_index(b, 0.33) == m::tau_index(a, 0.33));
            REQUIRE(m::concentration_ratio(b, 3) ==
                    Catch::Approx(m::concentration_ratio(a, 3)).margin(1e-9));
            REQUIRE(m::hhi(b) == Catch::Approx(m::hhi(a)).margin(1e-9 * m::hhi(a)));
            REQUIRE(m::num_parties(b) == m::num_parties(a));
            REQUIRE(m::theil(b) == Catch::Approx(m::theil(a)).margin(1e-9));
        }
    }
}

TEST_CASE("metrics: appending zero holders moves only gini and parties") {
    synth::SplitMix64 rng(19);
    int non_degenerate = 0;
    for (int rep = 0; rep < 200; ++rep) {
        auto a = random_amounts(rng, 20);
        std::vector<double> b(a);
        b.push_back(0.0);
        b.push_back(0.0);
        REQUIRE(m::entropy(b) == Catch::Approx(m::entropy(a)).margin(1e-12));
        REQUIRE(m::nakamoto(b) == m::nakamoto(a));
        REQUIRE(m::tau_index(b, 0.33) == m::tau_index(a, 0.33));
        REQUIRE(m::concentration_ratio(b, 2) ==
                Catch::Approx(m::concentration_ratio(a, 2)).margin(1e-12));
        REQUIRE(m::hhi(b) == Catch::Approx(m::hhi(a)).margin(1e-9));
        // Gini strictly increases unless the base vector is degenerate
        // (a single positive holder already maximizes inequality short of n).
        if (m::gini(a) < 1.0 - 1e-9) {
            REQUIRE(m::gini(b) > m::gini(a));
            ++non_degenerate;
        }
        REQUIRE(m::num_parties(b) == m::num_parties(a));
    }
    REQUIRE(non_degenerate > 150);
}

TEST_CASE("metrics: negative or non-finite amounts are rejected") {
    REQUIRE_THROWS_AS(m::entropy(v({1, -1})), Error);
    REQUIRE_THROWS_AS(m::gini(v({1, std::nan("")})), Error);
    REQUIRE_THROWS_AS(m::num_parties(v({-2})), Error);
}

TEST_CASE("metric_suite: emission order and population sizes") {
    ResourceDistribution d;
    d.entries = {{"A", 6}, {"B", 3}, {"C", 1}};
    d.population = {"A", "B", "C", "D"};

    m::MetricSuiteConfig cfg;
    auto suite = m::metric_suite(d, cfg);
    std::vector<std::string> names;
    for (const auto& mv : suite) names.push_back(mv.name);
    REQUIRE(names == std::vector<std::string>{"entropy", "gini", "nakamoto", "tau_0.33", "cr_1",
                                              "cr_3", "cr_4", "cr_5", "hhi", "parties"});
    for (const auto& mv : suite) REQUIRE(mv.n == 4);

    cfg.include_theil = true;
    cfg.tau_values = {0.33, 0.66};
    cfg.cr_values = {2};
    suite = m::metric_suite(d, cfg);
    names.clear();
    for (const auto& mv : suite) names.push_back(mv.name);
    REQUIRE(names == std::vector<std::string>{"entropy", "gini", "nakamoto", "tau_0.33",
                                              "tau_0.66", "cr_2", "hhi", "parties", "theil"});
}

TEST_CASE("metric_suite: values match the individual metrics") {
    ResourceDistribution d;
    d.entries = {{"A", 5}, {"B", 3}, {"C", 2}};
    d.population = {"A", "B", "C"};
    auto suite = m::metric_suite(d, {});
    REQUIRE(suite[0].value == Catch::Approx(m::entropy(d)).margin(1e-15));
    REQUIRE(suite[1].value == Catch::Approx(m::gini(d)).margin(1e-15));
    REQUIRE(suite[2].value == double(m::nakamoto(d)));
    REQUIRE(suite[4].value == Catch::Approx(0.5).margin(1e-12));  // cr_1
}

TEST_CASE("metric names are stable strings") {
    REQUIRE(m::tau_metric_name(0.33) == "tau_0.33");
    REQUIRE(m::tau_metric_name(0.5) == "tau_0.5");
    REQUIRE(m::cr_metric_name(4) == "cr_4");
}
