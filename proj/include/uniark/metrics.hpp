#pragma once

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "uniark/probing.hpp"

namespace uniark {

// Metric kernels. Everything here is a pure function of its inputs; grouping
// by relation/sample and averaging happens in the evaluation driver.

constexpr double kMetricProbFloor = 1e-12;

// Fraction of records whose argmax equals gold. Used for hit@1 on original
// prompts and for the counterfactual hitting rate on subject-masked prompts.
inline double hit_at_1(const std::vector<PredictionRecord>& records) {
    if (records.empty()) throw std::invalid_argument("hit_at_1: no records");
    std::size_t correct = 0;
    for (const auto& r : records) {
        if (r.argmax == r.gold) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

inline double ct_hit1(const std::vector<PredictionRecord>& records) { return hit_at_1(records); }

// Multi-class macro F1 over the classes that appear as gold labels. Argmax
// predictions of classes never seen as gold count against precision of the
// classes they collide with, not as their own class.
inline double macro_f1(const std::vector<PredictionRecord>& records) {
    if (records.empty()) throw std::invalid_argument("macro_f1: no records");
    std::set<std::string> classes;
    for (const auto& r : records) classes.insert(r.gold);
    if (classes.empty()) throw std::invalid_argument("macro_f1: empty class set");

    double f1_sum = 0.0;
    for (const auto& cls : classes) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (const auto& r : records) {
            const bool predicted = r.argmax == cls;
            const bool actual = r.gold == cls;
            if (predicted && actual) ++tp;
            if (predicted && !actual) ++fp;
            if (!predicted && actual) ++fn;
        }
        const double precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double recall = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double f1 =
            precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        f1_sum += f1;
    }
    return f1_sum / static_cast<double>(classes.size());
}

// KL(p || q) in bits with 1e-12 floors; zero-probability terms of p drop out.
inline double kl_divergence_bits(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence_bits: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        const double pi = std::max(p[i], kMetricProbFloor);
        const double qi = std::max(q[i], kMetricProbFloor);
        kl += p[i] * (std::log2(pi) - std::log2(qi));
    }
    return kl;
}

// Pearson correlation; degenerate inputs (zero variance) map to 0 by
// convention so reports stay finite.
inline double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson_r: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("pearson_r: need at least 2 pairs");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Consistency (per sample; inputs are the argmax predictions per template)
// ---------------------------------------------------------------------------

// Fraction of unordered template pairs that agree.
inline double consistency_all(const std::vector<std::string>& predictions) {
    const std::size_t n = predictions.size();
    if (n < 2) throw std::invalid_argument("consistency_all: need at least 2 templates");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (predictions[i] == predictions[j]) ++agree;
    return static_cast<double>(agree) / (0.5 * static_cast<double>(n) * (n - 1));
}

// Fraction of paraphrase predictions matching the base-template prediction.
inline double consistency_raw(const std::string& raw_prediction,
                              const std::vector<std::string>& paraphrase_predictions) {
    if (paraphrase_predictions.empty()) {
        throw std::invalid_argument("consistency_raw: need at least 1 paraphrase");
    }
    std::size_t match = 0;
    for (const auto& p : paraphrase_predictions)
        if (p == raw_prediction) ++match;
    return static_cast<double>(match) / static_cast<double>(paraphrase_predictions.size());
}

// Fraction of unordered pairs where both predictions equal gold.
inline double consistency_acc(const std::vector<std::string>& predictions,
                              const std::string& gold) {
    const std::size_t n = predictions.size();
    if (n < 2) throw std::invalid_argument("consistency_acc: need at least 2 templates");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (predictions[i] == gold && predictions[j] == gold) ++agree;
    return static_cast<double>(agree) / (0.5 * static_cast<double>(n) * (n - 1));
}

}  // namespace uniark
