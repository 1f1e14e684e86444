#pragma once

// Bi-encoder, cross-encoder and bi->cross re-ranking pipelines.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "backtracing/client.hpp"
#include "backtracing/core.hpp"
#include "backtracing/error.hpp"
#include "backtracing/ranking.hpp"

namespace backtracing {

inline const std::string kDefaultBiModel = "sentence-transformers/all-MiniLM-L12-v2";
inline const std::string kDefaultBiQaModel = "sentence-transformers/multi-qa-MiniLM-L6-cos-v1";
inline const std::string kDefaultCrossModel = "cross-encoder/ms-marco-MiniLM-L-6-v2";

struct SimilarityConfig {
    std::string bi_model = kDefaultBiModel;
    std::string cross_model = kDefaultCrossModel;
    std::size_t rerank_k = 5;

    void validate() const {
        if (rerank_k < 1) throw std::invalid_argument("rerank_k must be >= 1");
    }
};

// Cosine similarity clamped to [-1, 1]; 0 when either vector is zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ProtocolViolation("embedding dimensions differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace detail {

// Runs a protocol-backed scoring step, mapping transport and server failures
// to ScorerUnavailable so callers can skip the example.
template <typename F>
auto guarded(const char* method, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Unavailable& e) {
        throw ScorerUnavailable(std::string(method) + ": " + e.what());
    } catch (const ServerError& e) {
        throw ScorerUnavailable(std::string(method) + ": server error " + e.kind() + ": " + e.what());
    }
}

}  // namespace detail

// Cosine of the query against every sentence, one batched embed call.
inline std::vector<double> bi_encoder_scores(const Corpus& corpus, const Query& query, ModelClient& client,
                                             const std::string& model) {
    std::vector<std::string> texts;
    texts.reserve(corpus.size() + 1);
    texts.push_back(query.text);
    for (const auto& s : corpus.sentences) texts.push_back(s.text);
    const auto vecs = client.embed(texts, model);
    std::vector<double> scores;
    scores.reserve(corpus.size());
    for (std::size_t i = 1; i < vecs.size(); ++i) scores.push_back(cosine(vecs[0], vecs[i]));
    return scores;
}

inline Ranking score_bi_encoder(const Corpus& corpus, const Query& query, ModelClient& client,
                                const std::string& model, std::string method = "bi") {
    auto scores = detail::guarded(method.c_str(), [&] { return bi_encoder_scores(corpus, query, client, model); });
    return make_ranking(std::move(method), std::move(scores));
}

inline std::vector<double> cross_encoder_scores(const Corpus& corpus, const Query& query,
                                                std::span<const std::size_t> indices, ModelClient& client,
                                                const std::string& model) {
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(indices.size());
    for (std::size_t i : indices) pairs.emplace_back(query.text, corpus[i].text);
    return client.cross_score(pairs, model);
}

inline Ranking score_cross_encoder(const Corpus& corpus, const Query& query, ModelClient& client,
                                   const std::string& model) {
    std::vector<std::size_t> all(corpus.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto scores = detail::guarded("cross", [&] { return cross_encoder_scores(corpus, query, all, client, model); });
    return make_ranking("cross", std::move(scores));
}

// Top min(k, N) sentences by bi-encoder score (ties toward lower index) are
// re-scored by the cross-encoder and lead the order; the rest follow in
// bi-encoder order.
inline Ranking score_rerank(const Corpus& corpus, const Query& query, ModelClient& client,
                            const SimilarityConfig& cfg) {
    cfg.validate();
    return detail::guarded("rerank", [&] {
        const auto bi = bi_encoder_scores(corpus, query, client, cfg.bi_model);
        const auto bi_order = order_by_score(bi);
        const std::size_t k = std::min(cfg.rerank_k, corpus.size());
        const std::vector<std::size_t> candidates(bi_order.begin(), bi_order.begin() + static_cast<std::ptrdiff_t>(k));
        const auto cross = cross_encoder_scores(corpus, query, candidates, client, cfg.cross_model);

        std::vector<std::size_t> cand_rank(k);
        for (std::size_t i = 0; i < k; ++i) cand_rank[i] = i;
        std::stable_sort(cand_rank.begin(), cand_rank.end(), [&](std::size_t a, std::size_t b) {
            const double sa = detail::sort_key(cross[a]), sb = detail::sort_key(cross[b]);
            if (sa != sb) return sa > sb;
            return candidates[a] < candidates[b];
        });
        std::vector<std::size_t> head;
        head.reserve(corpus.size());
        for (std::size_t i : cand_rank) head.push_back(candidates[i]);
        head.insert(head.end(), bi_order.begin() + static_cast<std::ptrdiff_t>(k), bi_order.end());

        Ranking r = ranking_from_head("rerank", corpus.size(), head);
        std::vector<double> cross_full(corpus.size(), kUnscored);
        for (std::size_t i = 0; i < k; ++i) cross_full[candidates[i]] = cross[i];
        r.components["bi"] = bi;
        r.components["cross"] = std::move(cross_full);
        return r;
    });
}

}  // namespace backtracing
