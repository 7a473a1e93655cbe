#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "uniark/vocab.hpp"

namespace uniark {

// Pairwise BLEU over a relation's template set, used as a lexical diversity
// measure (lower = more diverse). Templates are lowercased and whitespace
// tokenized with the [X]/[Y] placeholders kept as literal tokens. Cumulative
// BLEU-n uses add-one smoothing on the n>1 precisions (unsmoothed BLEU-4 is
// degenerate on sentences this short) and the standard brevity penalty.

namespace detail {

inline std::vector<std::string> bleu_tokens(const std::string& text) {
    std::string lower = text;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return split_whitespace(lower);
}

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& tokens, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)]++;
    }
    return counts;
}

}  // namespace detail

// Sentence-level cumulative BLEU-n of hypothesis against a single reference.
inline double sentence_bleu(const std::vector<std::string>& hypothesis,
                            const std::vector<std::string>& reference, std::size_t n_max) {
    if (n_max < 1) throw std::invalid_argument("sentence_bleu: n_max must be >= 1");
    if (hypothesis.empty() || reference.empty()) return 0.0;

    double log_precision_sum = 0.0;
    for (std::size_t n = 1; n <= n_max; ++n) {
        const auto hyp_counts = detail::ngram_counts(hypothesis, n);
        const auto ref_counts = detail::ngram_counts(reference, n);
        std::size_t clipped = 0, total = 0;
        for (const auto& [gram, count] : hyp_counts) {
            total += count;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) clipped += std::min(count, it->second);
        }
        double precision;
        if (n == 1) {
            precision = total ? static_cast<double>(clipped) / total : 0.0;
        } else {
            precision = static_cast<double>(clipped + 1) / static_cast<double>(total + 1);
        }
        if (precision == 0.0) return 0.0;
        log_precision_sum += std::log(precision);
    }

    const double c = static_cast<double>(hypothesis.size());
    const double r = static_cast<double>(reference.size());
    const double brevity = c > r ? 1.0 : std::exp(1.0 - r / c);
    return brevity * std::exp(log_precision_sum / static_cast<double>(n_max));
}

// Average cumulative BLEU-n, n = 1..n_max, over all n(n-1) ordered template
// pairs of a relation.
inline std::vector<double> pairwise_bleu(const std::vector<std::string>& templates,
                                         std::size_t n_max = 4) {
    if (templates.size() < 2) throw std::invalid_argument("pairwise_bleu: need >= 2 templates");
    std::vector<std::vector<std::string>> tokenized;
    tokenized.reserve(templates.size());
    for (const auto& t : templates) tokenized.push_back(detail::bleu_tokens(t));

    std::vector<double> sums(n_max, 0.0);
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < tokenized.size(); ++i) {
        for (std::size_t j = 0; j < tokenized.size(); ++j) {
            if (i == j) continue;
            for (std::size_t n = 1; n <= n_max; ++n) {
                sums[n - 1] += sentence_bleu(tokenized[i], tokenized[j], n);
            }
            ++pairs;
        }
    }
    for (auto& s : sums) s /= static_cast<double>(pairs);
    return sums;
}

}  // namespace uniark
