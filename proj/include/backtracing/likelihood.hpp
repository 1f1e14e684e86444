#pragma once

// Query-likelihood retrieval with a causal LM behind the model protocol:
// single-sentence p(q | x_t), autoregressive p(q | x_a..x_t) within k-sentence
// chunks, and leave-one-out treatment effect
//   ATE(t) = log p(q | X) - log p(q | X \ {x_t})
// computed inside t's chunk.

#include <json.hpp>

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "backtracing/client.hpp"
#include "backtracing/core.hpp"
#include "backtracing/error.hpp"
#include "backtracing/ranking.hpp"
#include "backtracing/similarity.hpp"

namespace backtracing {

// Half-open sentence index range.
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - begin; }
    bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
    bool operator==(const IndexRange&) const = default;
};

// How a corpus and query are rendered into LM text.
struct ContextTemplate {
    Domain domain = Domain::Lecture;
    std::string corpus_preamble;
    std::string sentence_prefix;
    std::string sentence_joiner = " ";
    std::string query_prefix;
    // Conversation: every turn and the query are prefixed "<speaker>: ".
    bool speaker_labels = false;
    // Repeat sentence_prefix before every sentence instead of once.
    bool prefix_each_sentence = false;
    // Placed between the rendered context and the rendered query on the wire.
    std::string query_separator = "\n";

    static ContextTemplate for_domain(Domain d) {
        ContextTemplate t;
        t.domain = d;
        switch (d) {
            case Domain::Lecture:
                t.corpus_preamble = "A teacher is teaching a class, and a student asks a question.\n";
                t.sentence_prefix = "Teacher: ";
                t.query_prefix = "Student: ";
                break;
            case Domain::NewsArticle:
                t.sentence_prefix = "Text: ";
                t.query_prefix = "Question: ";
                break;
            case Domain::Conversation:
                t.sentence_joiner = "\n";
                t.speaker_labels = true;
                break;
        }
        return t;
    }

    // Applies any of the template keys present in `j` over this template.
    void apply_overrides(const nlohmann::json& j) {
        corpus_preamble = j.value("corpus_preamble", corpus_preamble);
        sentence_prefix = j.value("sentence_prefix", sentence_prefix);
        sentence_joiner = j.value("sentence_joiner", sentence_joiner);
        query_prefix = j.value("query_prefix", query_prefix);
        speaker_labels = j.value("speaker_labels", speaker_labels);
        prefix_each_sentence = j.value("prefix_each_sentence", prefix_each_sentence);
        query_separator = j.value("query_separator", query_separator);
    }

    nlohmann::json to_json() const {
        return {{"domain", std::string(domain_name(domain))},
                {"corpus_preamble", corpus_preamble},
                {"sentence_prefix", sentence_prefix},
                {"sentence_joiner", sentence_joiner},
                {"query_prefix", query_prefix},
                {"speaker_labels", speaker_labels},
                {"prefix_each_sentence", prefix_each_sentence},
                {"query_separator", query_separator}};
    }
};

inline std::string render_context(const ContextTemplate& tpl, const Corpus& corpus, IndexRange range,
                                  std::optional<std::size_t> omit = std::nullopt) {
    if (range.end > corpus.size() || range.begin > range.end)
        throw std::out_of_range("context range outside corpus");
    if (omit && !range.contains(*omit)) throw std::out_of_range("omitted index outside range");
    std::string out = tpl.corpus_preamble;
    bool first = true;
    for (std::size_t i = range.begin; i < range.end; ++i) {
        if (omit && *omit == i) continue;
        const auto& s = corpus[i];
        if (!first) out += tpl.sentence_joiner;
        if (tpl.speaker_labels) {
            out += s.speaker.value_or("") + ": ";
        } else if (first || tpl.prefix_each_sentence) {
            out += tpl.sentence_prefix;
        }
        out += s.text;
        first = false;
    }
    if (first) throw EmptyContext();
    return out;
}

inline std::string render_query(const ContextTemplate& tpl, const Query& query) {
    if (tpl.speaker_labels) return query.speaker ? *query.speaker + ": " + query.text : query.text;
    return tpl.query_prefix + query.text;
}

struct ChunkPlan {
    std::size_t k = 20;
    std::vector<IndexRange> chunks;

    const IndexRange& chunk_of(std::size_t index) const {
        if (k == 0 || chunks.empty()) throw std::out_of_range("empty chunk plan");
        const std::size_t c = index / k;
        if (c >= chunks.size() || !chunks[c].contains(index)) throw std::out_of_range("index outside chunk plan");
        return chunks[c];
    }
};

inline ChunkPlan plan_chunks(std::size_t n, std::size_t k) {
    if (n < 1 || k < 1) throw std::invalid_argument("plan_chunks needs N >= 1 and k >= 1");
    ChunkPlan plan{k, {}};
    for (std::size_t a = 0; a < n; a += k) plan.chunks.push_back({a, std::min(a + k, n)});
    return plan;
}

// Smallest context window accepted for likelihood models.
inline constexpr std::size_t kMinContextWindow = 1024;

struct ModelRef {
    std::string model_id;
    std::size_t context_window = 0;

    ModelRef(std::string id, std::size_t window) : model_id(std::move(id)), context_window(window) {
        if (context_window < kMinContextWindow)
            throw std::invalid_argument("model " + model_id + " context window " + std::to_string(window) +
                                        " is below " + std::to_string(kMinContextWindow));
    }

    static ModelRef resolve(ModelClient& client, const std::string& id) {
        return {id, client.info(id).context_window};
    }
};

enum class ChunkMode { Auto, Always, Never };

struct LikelihoodConfig {
    std::string model_id = "gpt2";
    std::size_t chunk_k = 20;
    ChunkMode chunk_mode = ChunkMode::Auto;
    // Divide each query log-likelihood by its token count.
    bool length_normalize = false;
};

namespace detail {

inline double query_score(const LogprobResult& r, bool normalize) {
    if (normalize && r.tokens > 0) return r.logprob / static_cast<double>(r.tokens);
    return r.logprob;
}

inline std::string wire_context(const ContextTemplate& tpl, const Corpus& corpus, IndexRange range,
                                std::optional<std::size_t> omit = std::nullopt) {
    return render_context(tpl, corpus, range, omit) + tpl.query_separator;
}

template <typename F>
auto guarded_lm(const char* method, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Unavailable& e) {
        throw ScorerUnavailable(std::string(method) + ": " + e.what());
    } catch (const ServerError& e) {
        throw ScorerUnavailable(std::string(method) + ": server error " + e.kind() + ": " + e.what());
    }
}

}  // namespace detail

// Chunk plan for context-accumulating scorers. In Auto mode the corpus is
// chunked iff the full rendered request would not fit the model window.
inline ChunkPlan likelihood_chunks(const Corpus& corpus, const Query& query, ModelClient& client,
                                   const ContextTemplate& tpl, const LikelihoodConfig& cfg) {
    const std::size_t n = corpus.size();
    switch (cfg.chunk_mode) {
        case ChunkMode::Always: return plan_chunks(n, cfg.chunk_k);
        case ChunkMode::Never: return plan_chunks(n, n);
        case ChunkMode::Auto: break;
    }
    const auto model = ModelRef::resolve(client, cfg.model_id);
    const std::size_t query_budget = client.token_count(render_query(tpl, query), cfg.model_id);
    const std::size_t full = client.token_count(detail::wire_context(tpl, corpus, {0, n}), cfg.model_id);
    if (full + query_budget > model.context_window) return plan_chunks(n, cfg.chunk_k);
    return plan_chunks(n, n);
}

inline Ranking score_single_sentence(const Corpus& corpus, const Query& query, ModelClient& client,
                                     const LikelihoodConfig& cfg, const ContextTemplate& tpl) {
    return detail::guarded_lm("ll-single", [&] {
        const auto q = render_query(tpl, query);
        std::vector<LogprobQuery> reqs;
        reqs.reserve(corpus.size());
        for (std::size_t t = 0; t < corpus.size(); ++t) reqs.push_back({detail::wire_context(tpl, corpus, {t, t + 1}), q});
        const auto res = client.cond_logprob_many(reqs, cfg.model_id);
        std::vector<double> scores(corpus.size(), kUnscored);
        std::set<std::size_t> excluded;
        for (std::size_t t = 0; t < res.size(); ++t) {
            if (res[t].value)
                scores[t] = detail::query_score(*res[t].value, cfg.length_normalize);
            else
                excluded.insert(t);
        }
        return make_ranking("ll-single", std::move(scores), std::move(excluded));
    });
}

inline Ranking score_autoregressive(const Corpus& corpus, const Query& query, ModelClient& client,
                                    const LikelihoodConfig& cfg, const ContextTemplate& tpl) {
    return detail::guarded_lm("ll-auto", [&] {
        const auto plan = likelihood_chunks(corpus, query, client, tpl, cfg);
        const auto q = render_query(tpl, query);
        std::vector<LogprobQuery> reqs;
        reqs.reserve(corpus.size());
        for (std::size_t t = 0; t < corpus.size(); ++t) {
            const auto& chunk = plan.chunk_of(t);
            reqs.push_back({detail::wire_context(tpl, corpus, {chunk.begin, t + 1}), q});
        }
        const auto res = client.cond_logprob_many(reqs, cfg.model_id);
        std::vector<double> scores(corpus.size(), kUnscored);
        std::set<std::size_t> excluded;
        for (std::size_t t = 0; t < res.size(); ++t) {
            if (res[t].value)
                scores[t] = detail::query_score(*res[t].value, cfg.length_normalize);
            else
                excluded.insert(t);
        }
        return make_ranking("ll-auto", std::move(scores), std::move(excluded));
    });
}

inline Ranking score_ate(const Corpus& corpus, const Query& query, ModelClient& client,
                         const LikelihoodConfig& cfg, const ContextTemplate& tpl) {
    return detail::guarded_lm("ll-ate", [&] {
        const auto plan = likelihood_chunks(corpus, query, client, tpl, cfg);
        const auto q = render_query(tpl, query);
        std::vector<double> scores(corpus.size(), kUnscored);
        std::set<std::size_t> excluded;

        // Layout per scorable chunk: [full, loo(begin), ..., loo(end-1)].
        std::vector<LogprobQuery> reqs;
        std::vector<std::size_t> chunk_base;
        std::vector<IndexRange> scored;
        for (const auto& chunk : plan.chunks) {
            if (chunk.size() < 2) {
                for (std::size_t t = chunk.begin; t < chunk.end; ++t) excluded.insert(t);
                continue;
            }
            chunk_base.push_back(reqs.size());
            scored.push_back(chunk);
            reqs.push_back({detail::wire_context(tpl, corpus, chunk), q});
            for (std::size_t t = chunk.begin; t < chunk.end; ++t)
                reqs.push_back({detail::wire_context(tpl, corpus, chunk, t), q});
        }
        const auto res = reqs.empty() ? std::vector<LogprobOutcome>{} : client.cond_logprob_many(reqs, cfg.model_id);
        for (std::size_t c = 0; c < scored.size(); ++c) {
            const auto& full = res[chunk_base[c]];
            for (std::size_t t = scored[c].begin; t < scored[c].end; ++t) {
                const auto& loo = res[chunk_base[c] + 1 + (t - scored[c].begin)];
                if (!full.value || !loo.value) {
                    excluded.insert(t);
                    continue;
                }
                scores[t] = detail::query_score(*full.value, cfg.length_normalize) -
                            detail::query_score(*loo.value, cfg.length_normalize);
            }
        }
        return make_ranking("ll-ate", std::move(scores), std::move(excluded));
    });
}

}  // namespace backtracing
