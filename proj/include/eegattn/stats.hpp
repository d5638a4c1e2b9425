#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "eegattn/rng.hpp"

namespace eegattn {

class StatsError : public std::runtime_error {
public:
    explicit StatsError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SampleGroup {
    std::string label;
    std::vector<double> values;
};

namespace stats_detail {

// Regularized lower incomplete gamma P(a,x); series for x < a+1, modified
// Lentz continued fraction otherwise. Absolute accuracy ~1e-14.
inline double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw StatsError("gamma_p: invalid arguments");
    if (x == 0.0) return 0.0;
    const double gln = std::lgamma(a);
    constexpr int kMaxIter = 1000;
    constexpr double kEps = 1e-15;
    if (x < a + 1.0) {
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < kMaxIter; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * kEps) break;
        }
        return sum * std::exp(-x + a * std::log(x) - gln);
    }
    // continued fraction for Q(a,x)
    constexpr double kFpMin = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / kFpMin, d = 1.0 / b, h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = b + an / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    const double q = std::exp(-x + a * std::log(x) - gln) * h;
    return 1.0 - q;
}

}  // namespace stats_detail

// Upper-tail chi-square probability with k degrees of freedom.
inline double chi2_sf(double x, std::size_t dof) {
    if (x <= 0.0) return 1.0;
    return 1.0 - stats_detail::gamma_p(double(dof) / 2.0, x / 2.0);
}

struct KruskalWallisResult {
    double h = 0.0;
    double p = 1.0;
};

// Rank-based one-way ANOVA with mid-ranks and tie correction.
inline KruskalWallisResult kruskal_wallis(const std::vector<SampleGroup>& groups) {
    if (groups.size() < 2)
        throw StatsError("kruskal_wallis: need at least two groups");
    std::size_t n_total = 0;
    for (const auto& g : groups) {
        if (g.values.empty())
            throw StatsError("kruskal_wallis: group \"" + g.label + "\" is empty");
        n_total += g.values.size();
    }
    // pooled sort with group tags
    std::vector<std::pair<double, std::size_t>> pooled;
    pooled.reserve(n_total);
    for (std::size_t gi = 0; gi < groups.size(); ++gi)
        for (double v : groups[gi].values) pooled.emplace_back(v, gi);
    std::stable_sort(pooled.begin(), pooled.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    // mid-ranks and tie counts
    std::vector<double> rank_sum(groups.size(), 0.0);
    double tie_term = 0.0;
    std::size_t i = 0;
    while (i < n_total) {
        std::size_t j = i;
        while (j < n_total && pooled[j].first == pooled[i].first) ++j;
        const double t = double(j - i);
        const double mid_rank = (double(i + 1) + double(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) rank_sum[pooled[k].second] += mid_rank;
        tie_term += t * t * t - t;
        i = j;
    }
    const double n = double(n_total);
    double h = 0.0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const double ni = double(groups[gi].values.size());
        const double rbar = rank_sum[gi] / ni;
        const double d = rbar - (n + 1.0) / 2.0;
        h += ni * d * d;
    }
    h *= 12.0 / (n * (n + 1.0));
    const double tie_denom = 1.0 - tie_term / (n * n * n - n);
    if (tie_denom <= 0.0) {
        // every pooled value identical
        return {0.0, 1.0};
    }
    h /= tie_denom;
    return {h, chi2_sf(h, groups.size() - 1)};
}

struct PermutationResult {
    double t_obs = 0.0;
    double p = 1.0;
    bool degenerate = false;  // zero-variance differences
};

namespace stats_detail {

// Paired t statistic for the given signed differences.
inline double paired_t(const std::vector<double>& d) {
    const double n = double(d.size());
    double m = 0.0;
    for (double v : d) m += v;
    m /= n;
    double var = 0.0;
    for (double v : d) var += (v - m) * (v - m);
    var /= (n - 1.0);
    const double se = std::sqrt(var / n);
    if (se == 0.0) return 0.0;
    return m / se;
}

}  // namespace stats_detail

// Sign-flip permutation test on paired differences; two-sided p with the +1
// small-sample correction, so p is never exactly zero.
inline PermutationResult permutation_paired_test(const std::vector<double>& a,
                                                 const std::vector<double>& b,
                                                 std::size_t n_perm = 10000,
                                                 std::uint64_t seed = 0) {
    if (a.size() != b.size())
        throw StatsError("permutation_paired_test: sample sizes differ (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    if (a.size() < 2)
        throw StatsError("permutation_paired_test: need at least two pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    double var = 0.0, m = 0.0;
    for (double v : d) m += v;
    m /= double(d.size());
    for (double v : d) var += (v - m) * (v - m);
    if (var == 0.0) return {0.0, 1.0, true};
    const double t_obs = stats_detail::paired_t(d);
    Rng rng(seed);
    std::size_t count = 0;
    std::vector<double> flipped(d.size());
    for (std::size_t p = 0; p < n_perm; ++p) {
        for (std::size_t i = 0; i < d.size(); ++i)
            flipped[i] = (rng.next_u64() & 1u) ? -d[i] : d[i];
        if (std::abs(stats_detail::paired_t(flipped)) >= std::abs(t_obs)) ++count;
    }
    return {t_obs, double(1 + count) / double(n_perm + 1), false};
}

// Exhaustive sign-flip enumeration (2^n patterns); reference for small n.
inline PermutationResult permutation_paired_test_exhaustive(
    const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2 || a.size() > 20)
        throw StatsError("permutation_paired_test_exhaustive: need 2..20 pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    double var = 0.0, m = 0.0;
    for (double v : d) m += v;
    m /= double(d.size());
    for (double v : d) var += (v - m) * (v - m);
    if (var == 0.0) return {0.0, 1.0, true};
    const double t_obs = stats_detail::paired_t(d);
    const std::size_t total = std::size_t(1) << d.size();
    std::size_t count = 0;
    std::vector<double> flipped(d.size());
    for (std::size_t mask = 0; mask < total; ++mask) {
        for (std::size_t i = 0; i < d.size(); ++i)
            flipped[i] = (mask >> i) & 1u ? -d[i] : d[i];
        if (std::abs(stats_detail::paired_t(flipped)) >= std::abs(t_obs)) ++count;
    }
    return {t_obs, double(count) / double(total), false};
}

struct ComparisonSummary {
    double mean_a = 0.0, mean_b = 0.0, difference = 0.0;
    KruskalWallisResult kruskal;
    PermutationResult permutation;
};

// Runs both tests on two accuracy samples (per-fold or per-subject).
inline ComparisonSummary compare_conditions(const std::vector<double>& a,
                                            const std::vector<double>& b,
                                            std::size_t n_perm = 10000,
                                            std::uint64_t seed = 0) {
    if (a.empty() || b.empty())
        throw StatsError("compare_conditions: empty accuracy sample");
    ComparisonSummary s;
    for (double v : a) s.mean_a += v;
    s.mean_a /= double(a.size());
    for (double v : b) s.mean_b += v;
    s.mean_b /= double(b.size());
    s.difference = s.mean_a - s.mean_b;
    s.kruskal = kruskal_wallis({{"a", a}, {"b", b}});
    s.permutation = permutation_paired_test(a, b, n_perm, seed);
    return s;
}

}  // namespace eegattn
