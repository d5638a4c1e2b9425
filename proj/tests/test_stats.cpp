#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eegattn/rng.hpp"
#include "eegattn/stats.hpp"

using namespace eegattn;

TEST_CASE("chi-square survival function against tabulated values") {
    // classic table entries
    CHECK(chi2_sf(3.841, 1) == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(chi2_sf(5.991, 2) == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(chi2_sf(21.026, 12) == doctest::Approx(0.05).epsilon(1e-3));
    // chi2_sf(x, 2) = exp(-x/2) exactly
    for (double x : {0.5, 1.0, 3.0, 10.0})
        CHECK(chi2_sf(x, 2) == doctest::Approx(std::exp(-x / 2.0)).epsilon(1e-12));
    CHECK(chi2_sf(0.0, 3) == 1.0);
    CHECK(chi2_sf(-1.0, 3) == 1.0);
}

TEST_CASE("Kruskal-Wallis hand example H = 3.857") {
    // three groups of three with no ties; ranks 1..9, H computed by hand
    std::vector<SampleGroup> groups = {
        {"g1", {1.0, 2.0, 3.0}},
        {"g2", {4.0, 5.0, 6.0}},
        {"g3", {7.0, 8.0, 9.0}},
    };
    // rank sums 6, 15, 24 -> H = 12/(9*10) * (12+75+192) - 3*10... = 7.2
    auto r = kruskal_wallis(groups);
    CHECK(r.h == doctest::Approx(7.2).epsilon(1e-9));

    // two-group hand example: ranks {1,2,3} vs {4,5,6}
    // H = 12/(6*7) * (3*(2-3.5)^2 + 3*(5-3.5)^2) = 27/7 = 3.857
    std::vector<SampleGroup> two = {{"lo", {1.0, 2.0, 3.0}},
                                    {"hi", {4.0, 5.0, 6.0}}};
    auto m = kruskal_wallis(two);
    CHECK(std::abs(m.h - 3.857) < 0.001);
    CHECK(m.h == doctest::Approx(27.0 / 7.0).epsilon(1e-12));
    CHECK(m.p == doctest::Approx(chi2_sf(m.h, 1)).epsilon(1e-12));
}

TEST_CASE("Kruskal-Wallis invariances and edge cases") {
    SUBCASE("identical groups give H = 0, p = 1") {
        std::vector<SampleGroup> same = {{"a", {5, 5, 5}}, {"b", {5, 5, 5}}};
        auto r = kruskal_wallis(same);
        CHECK(r.h == 0.0);
        CHECK(r.p == 1.0);
    }
    SUBCASE("monotone transforms leave H unchanged") {
        Rng rng(33);
        std::vector<SampleGroup> raw(3), mapped(3);
        for (std::size_t g = 0; g < 3; ++g) {
            raw[g].label = mapped[g].label = "g";
            for (int i = 0; i < 7; ++i) {
                const double v = rng.gaussian() + double(g);
                raw[g].values.push_back(v);
                mapped[g].values.push_back(std::exp(v));
            }
        }
        CHECK(kruskal_wallis(raw).h ==
              doctest::Approx(kruskal_wallis(mapped).h).epsilon(1e-12));
    }
    SUBCASE("tie correction raises H relative to the uncorrected statistic") {
        std::vector<SampleGroup> tied = {{"a", {1, 1, 2, 3}}, {"b", {3, 3, 4, 4}}};
        auto r = kruskal_wallis(tied);
        CHECK(r.h > 0.0);
        CHECK(r.p > 0.0);
        CHECK(r.p <= 1.0);
    }
    SUBCASE("well-separated groups are significant") {
        std::vector<SampleGroup> sep = {{"lo", {1, 2, 3, 4, 5}},
                                        {"hi", {10, 11, 12, 13, 14}}};
        auto r = kruskal_wallis(sep);
        CHECK(r.p < 0.05);
    }
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(kruskal_wallis({{"solo", {1, 2}}}), StatsError);
        CHECK_THROWS_AS(kruskal_wallis({{"a", {1.0}}, {"b", {}}}), StatsError);
    }
}

TEST_CASE("paired permutation test") {
    SUBCASE("identical samples are degenerate with p = 1") {
        std::vector<double> a = {0.4, 0.5, 0.6, 0.7, 0.5};
        auto r = permutation_paired_test(a, a, 1000, 1);
        CHECK(r.degenerate);
        CHECK(r.p == 1.0);
        // constant nonzero shift is also zero-variance in the differences
        std::vector<double> b;
        for (double v : a) b.push_back(v + 0.1);
        CHECK(permutation_paired_test(a, b, 1000, 1).degenerate);
    }
    SUBCASE("a = b + 10 + noise with n = 9 reaches p <= 0.01 exhaustively") {
        Rng rng(3);
        std::vector<double> b(9), a;
        for (double& v : b) v = rng.gaussian();
        for (double v : b) a.push_back(v + 10.0 + 0.1 * rng.gaussian());
        auto r = permutation_paired_test_exhaustive(a, b);
        CHECK(r.p <= 0.01);
        CHECK(r.t_obs > 0.0);
        // two-sided: only the all-flip and no-flip patterns can match |t|
        CHECK(r.p >= 2.0 / 512.0);
    }
    SUBCASE("Monte Carlo tracks the exhaustive reference") {
        Rng rng(8);
        std::vector<double> a(10), b(10);
        for (std::size_t i = 0; i < 10; ++i) {
            b[i] = rng.gaussian();
            a[i] = b[i] + 0.8 * rng.gaussian() + 0.4;
        }
        auto exact = permutation_paired_test_exhaustive(a, b);
        const std::size_t n_perm = 20000;
        auto mc = permutation_paired_test(a, b, n_perm, 5);
        CHECK(std::abs(mc.p - exact.p) < 2.0 / std::sqrt(double(n_perm)));
        CHECK(mc.t_obs == doctest::Approx(exact.t_obs).epsilon(1e-12));
    }
    SUBCASE("p always lies in (0, 1]") {
        Rng rng(12);
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<double> a(6), b(6);
            for (std::size_t i = 0; i < 6; ++i) {
                a[i] = rng.gaussian();
                b[i] = rng.gaussian();
            }
            auto r = permutation_paired_test(a, b, 200, std::uint64_t(rep));
            CHECK(r.p > 0.0);
            CHECK(r.p <= 1.0);
        }
    }
    SUBCASE("null calibration: about 5% of null datasets give p < 0.05") {
        Rng rng(99);
        int hits = 0;
        const int sims = 1000;
        for (int rep = 0; rep < sims; ++rep) {
            std::vector<double> a(8), b(8);
            for (std::size_t i = 0; i < 8; ++i) {
                a[i] = rng.gaussian();
                b[i] = rng.gaussian();
            }
            if (permutation_paired_test_exhaustive(a, b).p < 0.05) ++hits;
        }
        const double rate = double(hits) / double(sims);
        CHECK(rate > 0.03);
        CHECK(rate < 0.07);
    }
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(permutation_paired_test({1, 2}, {1, 2, 3}), StatsError);
        CHECK_THROWS_AS(permutation_paired_test({1}, {2}), StatsError);
        std::vector<double> big(21, 0.0);
        CHECK_THROWS_AS(permutation_paired_test_exhaustive(big, big), StatsError);
    }
}

TEST_CASE("compare_conditions wires both tests together") {
    std::vector<double> a = {0.90, 0.92, 0.88, 0.91, 0.93, 0.89};
    std::vector<double> b = {0.35, 0.33, 0.37, 0.36, 0.34, 0.32};
    auto s = compare_conditions(a, b, 10000, 7);
    CHECK(s.mean_a == doctest::Approx(0.905).epsilon(1e-9));
    CHECK(s.mean_b == doctest::Approx(0.345).epsilon(1e-9));
    CHECK(s.difference == doctest::Approx(0.56).epsilon(1e-9));
    CHECK(s.kruskal.p < 0.05);
    CHECK(s.permutation.p < 0.05);
    CHECK_THROWS_AS(compare_conditions({}, b), StatsError);
}
