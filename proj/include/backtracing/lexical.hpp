#pragma once

// Non-neural baselines: uniform random ranking, character edit distance,
// and per-corpus Okapi BM25.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "backtracing/core.hpp"
#include "backtracing/ranking.hpp"
#include "backtracing/text.hpp"

namespace backtracing {

// Unbiased draw in [0, bound) by rejection; std distributions are not
// specified bit-for-bit across standard libraries, the engine is.
inline std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

inline Ranking score_random(const Corpus& corpus, std::uint64_t seed) {
    const std::size_t n = corpus.size();
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(bounded_draw(rng, i));
        std::swap(perm[i - 1], perm[j]);
    }
    std::vector<double> scores(n);
    for (std::size_t pos = 0; pos < n; ++pos) scores[perm[pos]] = static_cast<double>(n - pos);
    Ranking r;
    r.method = "random";
    r.scores = std::move(scores);
    r.order = std::move(perm);
    return r;
}

// Levenshtein distance over unicode scalar values, two-row DP.
inline std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
    return levenshtein(text::decode_utf8(a), text::decode_utf8(b));
}

inline Ranking score_edit_distance(const Corpus& corpus, const Query& query) {
    const auto q = text::decode_utf8(query.text);
    std::vector<double> scores;
    scores.reserve(corpus.size());
    for (const auto& s : corpus.sentences)
        scores.push_back(-static_cast<double>(levenshtein(text::decode_utf8(s.text), q)));
    return make_ranking("edit", std::move(scores));
}

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    void validate() const {
        if (!(k1 >= 0.0)) throw std::invalid_argument("bm25 k1 must be >= 0");
        if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("bm25 b must be in [0, 1]");
    }
};

// Sentence-level index over a single corpus.
class Bm25Index {
public:
    explicit Bm25Index(const Corpus& corpus, Bm25Params params = {}) : params_(params) {
        params_.validate();
        docs_.reserve(corpus.size());
        std::size_t total = 0;
        for (const auto& s : corpus.sentences) {
            const auto toks = text::word_tokens(s.text);
            DocStats d;
            d.length = toks.size();
            for (const auto& t : toks) ++d.tf[t];
            for (const auto& [term, _] : d.tf) ++df_[term];
            total += d.length;
            docs_.push_back(std::move(d));
        }
        avgdl_ = docs_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs_.size());
    }

    double idf(const std::string& term) const {
        const auto it = df_.find(term);
        const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
        const double n = static_cast<double>(docs_.size());
        return std::max(0.0, std::log((n - df + 0.5) / (df + 0.5)));
    }

    std::vector<double> score(std::string_view query) const {
        std::vector<double> out(docs_.size(), 0.0);
        if (avgdl_ <= 0.0) return out;
        const auto terms = text::word_tokens(query);
        for (const auto& term : terms) {
            const double w = idf(term);
            if (w == 0.0) continue;
            for (std::size_t d = 0; d < docs_.size(); ++d) {
                const auto it = docs_[d].tf.find(term);
                if (it == docs_[d].tf.end()) continue;
                const double f = static_cast<double>(it->second);
                const double norm = 1.0 - params_.b + params_.b * static_cast<double>(docs_[d].length) / avgdl_;
                out[d] += w * f * (params_.k1 + 1.0) / (f + params_.k1 * norm);
            }
        }
        return out;
    }

private:
    struct DocStats {
        std::size_t length = 0;
        std::map<std::string, std::size_t> tf;
    };

    Bm25Params params_;
    std::vector<DocStats> docs_;
    std::unordered_map<std::string, std::size_t> df_;
    double avgdl_ = 0.0;
};

inline Ranking score_bm25(const Corpus& corpus, const Query& query, Bm25Params params = {}) {
    return make_ranking("bm25", Bm25Index(corpus, params).score(query.text));
}

}  // namespace backtracing
