#pragma once

#include <json.hpp>

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "backtracing/client.hpp"
#include "backtracing/core.hpp"
#include "backtracing/hash.hpp"
#include "backtracing/judge.hpp"
#include "backtracing/lexical.hpp"
#include "backtracing/likelihood.hpp"
#include "backtracing/ranking.hpp"
#include "backtracing/similarity.hpp"

namespace backtracing {

inline constexpr std::array<std::string_view, 11> kMethodNames = {
    "random", "edit", "bm25", "bi", "bi-qa", "cross", "rerank", "ll-single", "ll-auto", "ll-ate", "llm-judge"};

// A registry name with an optional "@model" override, e.g. "ll-auto@gpt2".
struct MethodSpec {
    std::string name;
    std::optional<std::string> model;

    std::string label() const { return model ? name + "@" + *model : name; }

    static MethodSpec parse(const std::string& s) {
        const auto at = s.find('@');
        MethodSpec m{s.substr(0, at), std::nullopt};
        if (at != std::string::npos) m.model = s.substr(at + 1);
        bool known = false;
        for (auto n : kMethodNames) known = known || n == m.name;
        if (!known) throw std::invalid_argument("unknown method '" + m.name + "'");
        if (m.model && m.model->empty()) throw std::invalid_argument("empty model override in '" + s + "'");
        return m;
    }
};

inline bool needs_model_server(std::string_view name) {
    return name != "random" && name != "edit" && name != "bm25";
}

struct ScorerSettings {
    std::uint64_t seed = 0;
    Bm25Params bm25;
    std::string bi_model = kDefaultBiModel;
    std::string bi_qa_model = kDefaultBiQaModel;
    std::string cross_model = kDefaultCrossModel;
    std::size_t rerank_k = 5;
    LikelihoodConfig likelihood;
    JudgeConfig judge;
    // Per-domain template overrides, keyed by domain name.
    nlohmann::json template_overrides = nlohmann::json::object();

    ContextTemplate context_template(Domain d) const {
        auto t = ContextTemplate::for_domain(d);
        const auto key = std::string(domain_name(d));
        if (template_overrides.contains(key)) t.apply_overrides(template_overrides[key]);
        return t;
    }
};

struct ScoredExample {
    Ranking ranking;
    nlohmann::json extra = nlohmann::json::object();
};

// Seed for one example: the run seed mixed with the example id.
inline std::uint64_t example_seed(std::uint64_t seed, const std::string& example_id) {
    std::uint64_t z = seed ^ fnv1a64(example_id);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Runs one registered method on one example. Neural methods require a client.
inline ScoredExample score_example(const MethodSpec& spec, const BacktracingExample& ex, ModelClient* client,
                                   const ScorerSettings& s) {
    const auto& corpus = ex.corpus;
    const auto& query = ex.query;
    const auto& n = spec.name;
    const auto label = spec.label();
    const auto relabel = [&](Ranking r) {
        r.method = label;
        return ScoredExample{std::move(r), nlohmann::json::object()};
    };
    if (n == "random") return relabel(score_random(corpus, example_seed(s.seed, ex.example_id)));
    if (n == "edit") return relabel(score_edit_distance(corpus, query));
    if (n == "bm25") return relabel(score_bm25(corpus, query, s.bm25));
    if (!client) throw ScorerUnavailable(label + ": no model client");
    if (n == "bi") return relabel(score_bi_encoder(corpus, query, *client, spec.model.value_or(s.bi_model)));
    if (n == "bi-qa") return relabel(score_bi_encoder(corpus, query, *client, spec.model.value_or(s.bi_qa_model)));
    if (n == "cross") return relabel(score_cross_encoder(corpus, query, *client, spec.model.value_or(s.cross_model)));
    if (n == "rerank") {
        SimilarityConfig cfg{s.bi_model, spec.model.value_or(s.cross_model), s.rerank_k};
        return relabel(score_rerank(corpus, query, *client, cfg));
    }
    if (n == "ll-single" || n == "ll-auto" || n == "ll-ate") {
        auto cfg = s.likelihood;
        if (spec.model) cfg.model_id = *spec.model;
        const auto tpl = s.context_template(corpus.domain);
        if (n == "ll-single") return relabel(score_single_sentence(corpus, query, *client, cfg, tpl));
        if (n == "ll-auto") return relabel(score_autoregressive(corpus, query, *client, cfg, tpl));
        return relabel(score_ate(corpus, query, *client, cfg, tpl));
    }
    if (n == "llm-judge") {
        auto cfg = s.judge;
        if (spec.model) cfg.model_id = *spec.model;
        auto res = judge_example(corpus.domain, corpus, query, *client, cfg);
        nlohmann::json picks = nlohmann::json::array();
        for (const auto& p : res.answer.picks) picks.push_back({{"line", p.line}, {"reason", p.reason}});
        ScoredExample out = relabel(std::move(res.ranking));
        out.extra = {{"picks", std::move(picks)},
                     {"raw", res.answer.raw},
                     {"warnings", res.answer.warnings},
                     {"attempts", res.attempts}};
        return out;
    }
    throw std::invalid_argument("unknown method '" + n + "'");
}

}  // namespace backtracing
