#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace uniark {

// Paired significance tests over per-relation metric vectors.

// Two-sided paired t-test p-value. All-zero differences return 1.0 by
// convention; zero variance with a nonzero mean returns 0.0.
inline double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");

    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    if (sd == 0.0) return mean == 0.0 ? 1.0 : 0.0;
    const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
    boost::math::students_t_distribution<double> dist(static_cast<double>(n - 1));
    return 2.0 * boost::math::cdf(dist, -std::abs(t));
}

namespace detail {

// Ranks of |values| with average ranks for ties, doubled so they stay
// integral (a tie group of two gets ranks 1.5, 1.5 -> doubled 3, 3).
inline std::vector<std::uint64_t> doubled_ranks(const std::vector<double>& abs_values) {
    const std::size_t n = abs_values.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return abs_values[x] < abs_values[y]; });

    std::vector<std::uint64_t> ranks(n, 0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && abs_values[order[j + 1]] == abs_values[order[i]]) ++j;
        // ranks i+1 .. j+1 averaged; doubled average = (i+1) + (j+1)
        const std::uint64_t doubled = static_cast<std::uint64_t>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = doubled;
        i = j + 1;
    }
    return ranks;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

}  // namespace detail

// Two-sided Wilcoxon signed-rank p-value. Zero differences are dropped; for
// n <= 20 the exact null distribution of W+ is enumerated (ties handled via
// average ranks), above that a tie-corrected normal approximation with
// continuity correction is used. All differences zero -> 1.0 by convention.
inline double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: length mismatch");

    std::vector<double> diffs;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) diffs.push_back(d);
    }
    const std::size_t n = diffs.size();
    if (n == 0) return 1.0;

    std::vector<double> abs_values(n);
    for (std::size_t i = 0; i < n; ++i) abs_values[i] = std::abs(diffs[i]);
    const auto ranks2 = detail::doubled_ranks(abs_values);  // doubled ranks

    std::uint64_t w_plus2 = 0;  // doubled W+
    std::uint64_t total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += ranks2[i];
        if (diffs[i] > 0.0) w_plus2 += ranks2[i];
    }

    if (n <= 20) {
        // Exact: distribution of the doubled rank-sum over all 2^n signings.
        std::vector<double> counts(total2 + 1, 0.0);
        counts[0] = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t s = total2 + 1; s-- > ranks2[i];) {
                counts[s] += counts[s - ranks2[i]];
            }
        }
        const double denom = std::pow(2.0, static_cast<double>(n));
        double le = 0.0, ge = 0.0;
        for (std::uint64_t s = 0; s <= total2; ++s) {
            if (s <= w_plus2) le += counts[s];
            if (s >= w_plus2) ge += counts[s];
        }
        return std::min(1.0, 2.0 * std::min(le, ge) / denom);
    }

    // Normal approximation with tie correction.
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    double tie_term = 0.0;
    {
        std::vector<double> sorted = abs_values;
        std::sort(sorted.begin(), sorted.end());
        std::size_t i = 0;
        while (i < sorted.size()) {
            std::size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            tie_term += t * t * t - t;
            i = j + 1;
        }
    }
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double w_plus = static_cast<double>(w_plus2) / 2.0;
    double z = w_plus - mean;
    if (z > 0.5) {
        z -= 0.5;
    } else if (z < -0.5) {
        z += 0.5;
    } else {
        z = 0.0;
    }
    z /= std::sqrt(var);
    return std::min(1.0, 2.0 * (1.0 - detail::normal_cdf(std::abs(z))));
}

}  // namespace uniark
