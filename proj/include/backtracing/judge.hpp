#pragma once

// LLM-judge scorer: a line-numbered corpus prompt per domain, one generate
// call, and a tolerant parser for the JSON list of picks it asks for.

#include <json.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "backtracing/client.hpp"
#include "backtracing/core.hpp"
#include "backtracing/error.hpp"
#include "backtracing/ranking.hpp"

namespace backtracing {

inline const std::string kDefaultJudgeModel = "gpt-3.5-turbo-16k";
inline constexpr std::string_view kJudgePromptVersion = "v1";

struct JudgeTemplate {
    std::string corpus_header;    // "Consider the following lecture transcript:"
    std::string line_prefix;      // "Teacher: " (ignored when speaker_labels)
    std::string query_header;     // "Now consider the following question:"
    std::string query_prefix;     // "Student: "
    std::string instruction;      // may contain "{emotion}"
    bool speaker_labels = false;
    bool needs_emotion = false;

    static JudgeTemplate for_domain(Domain d) {
        static constexpr std::string_view kFormatQuery =
            R"(Format your answer as: [{"line number": integer, "reason": "reason for why this line most likely caused this query"}, ...])";
        static constexpr std::string_view kFormatEmotion =
            R"(Format your answer as: [{"line number": integer, "reason": "reason for why this line most likely caused this emotion"}, ...])";
        JudgeTemplate t;
        switch (d) {
            case Domain::Lecture:
                t.corpus_header = "Consider the following lecture transcript:";
                t.line_prefix = "Teacher: ";
                t.query_header = "Now consider the following question:";
                t.query_prefix = "Student: ";
                t.instruction = "Which of the transcript lines most likely provoked this question? "
                                "If there are multiple possible answers, list them out. " +
                                std::string(kFormatQuery);
                break;
            case Domain::NewsArticle:
                t.corpus_header = "Consider the following article:";
                t.line_prefix = "Text: ";
                t.query_header = "Now consider the following question:";
                t.query_prefix = "Question: ";
                t.instruction = "Which of the article lines most likely provoked this question? "
                                "If there are multiple possible answers, list them out. " +
                                std::string(kFormatQuery);
                break;
            case Domain::Conversation:
                t.corpus_header = "Consider the following conversation:";
                t.query_header = "Now consider the following line:";
                t.speaker_labels = true;
                t.needs_emotion = true;
                t.instruction = "The speaker felt {emotion} in this line.\n"
                                "Which of the conversation turns (lines) most likely caused this emotion? "
                                "If there are multiple possible answers, list them out. " +
                                std::string(kFormatEmotion);
                break;
        }
        return t;
    }
};

inline std::string build_judge_prompt(Domain domain, const Corpus& corpus, const Query& query) {
    const auto tpl = JudgeTemplate::for_domain(domain);
    std::string lines;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (i) lines += "\n";
        lines += std::to_string(i) + ". ";
        lines += tpl.speaker_labels ? corpus[i].speaker.value_or("") + ": " : tpl.line_prefix;
        lines += corpus[i].text;
    }
    std::string q = tpl.speaker_labels ? (query.speaker ? *query.speaker + ": " : std::string()) + query.text
                                       : tpl.query_prefix + query.text;
    std::string instruction = tpl.instruction;
    if (tpl.needs_emotion) {
        if (!query.emotion || query.emotion->empty()) throw MissingEmotion();
        const auto pos = instruction.find("{emotion}");
        instruction.replace(pos, 9, *query.emotion);
    }
    return tpl.corpus_header + "\n" + lines + "\n\n" + tpl.query_header + "\n" + q + "\n\n" + instruction;
}

struct JudgePick {
    std::size_t line = 0;
    std::string reason;
    bool operator==(const JudgePick&) const = default;
};

struct JudgeAnswer {
    std::vector<JudgePick> picks;
    std::string raw;
    std::vector<std::string> warnings;
};

namespace detail {

// End of the bracketed span starting at `open`, honoring JSON strings.
inline std::optional<std::size_t> matching_bracket(std::string_view s, std::size_t open) {
    int depth = 0;
    bool in_str = false, esc = false;
    for (std::size_t i = open; i < s.size(); ++i) {
        const char c = s[i];
        if (in_str) {
            if (esc) esc = false;
            else if (c == '\\') esc = true;
            else if (c == '"') in_str = false;
            continue;
        }
        if (c == '"') in_str = true;
        else if (c == '[' || c == '{') ++depth;
        else if (c == ']' || c == '}') {
            if (--depth == 0) return i;
        }
    }
    return std::nullopt;
}

inline std::optional<long long> line_value(const nlohmann::json& obj) {
    for (const char* key : {"line number", "line_number", "line"}) {
        auto it = obj.find(key);
        if (it == obj.end()) continue;
        if (it->is_number_integer()) return it->get<long long>();
        if (it->is_number_float()) {
            const double d = it->get<double>();
            if (d == static_cast<double>(static_cast<long long>(d))) return static_cast<long long>(d);
            return std::nullopt;
        }
        if (it->is_string()) {
            const auto& s = it->get_ref<const std::string&>();
            try {
                std::size_t used = 0;
                const long long v = std::stoll(s, &used);
                if (used == s.size()) return v;
            } catch (const std::exception&) {
            }
        }
        return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace detail

// Extracts the first JSON array of {"line number", "reason"} objects found in
// `raw`. Out-of-range lines are dropped with a warning.
inline JudgeAnswer parse_judge_answer(const std::string& raw, std::size_t n) {
    JudgeAnswer ans;
    ans.raw = raw;
    bool saw_array = false;
    for (std::size_t pos = raw.find('['); pos != std::string::npos; pos = raw.find('[', pos + 1)) {
        const auto close = detail::matching_bracket(raw, pos);
        if (!close) continue;
        nlohmann::json arr;
        try {
            arr = nlohmann::json::parse(raw.substr(pos, *close - pos + 1));
        } catch (const nlohmann::json::exception&) {
            continue;
        }
        if (!arr.is_array() || arr.empty()) continue;
        std::vector<JudgePick> picks;
        bool well_formed = true;
        for (const auto& item : arr) {
            if (!item.is_object()) {
                well_formed = false;
                break;
            }
            const auto line = detail::line_value(item);
            if (!line) {
                well_formed = false;
                break;
            }
            std::string reason;
            if (auto r = item.find("reason"); r != item.end() && r->is_string()) reason = r->get<std::string>();
            if (*line < 0 || static_cast<std::size_t>(*line) >= n) {
                ans.warnings.push_back("dropped out-of-range line " + std::to_string(*line));
                continue;
            }
            picks.push_back({static_cast<std::size_t>(*line), std::move(reason)});
        }
        if (!well_formed) continue;
        saw_array = true;
        if (picks.empty()) break;
        ans.picks = std::move(picks);
        return ans;
    }
    throw JudgeParseFailure(saw_array ? "NoValidLines" : "NoArray", raw);
}

struct JudgeConfig {
    std::string model_id = kDefaultJudgeModel;
    int max_attempts = 3;
    std::size_t max_tokens = 512;
    double temperature = 0.0;
};

struct JudgeResult {
    Ranking ranking;
    JudgeAnswer answer;
    int attempts = 0;
};

inline JudgeResult judge_example(Domain domain, const Corpus& corpus, const Query& query, ModelClient& client,
                                 const JudgeConfig& cfg = {}) {
    const auto prompt = build_judge_prompt(domain, corpus, query);
    std::string last_raw;
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        std::string raw;
        try {
            raw = client.generate(prompt, cfg.model_id, {cfg.max_tokens, cfg.temperature, attempt});
        } catch (const Unavailable& e) {
            throw ScorerUnavailable(std::string("llm-judge: ") + e.what());
        } catch (const WindowOverflow& e) {
            throw ScorerFailed(std::string("llm-judge: ") + e.what());
        } catch (const ServerError& e) {
            throw ScorerUnavailable("llm-judge: server error " + e.kind() + ": " + e.what());
        }
        try {
            auto ans = parse_judge_answer(raw, corpus.size());
            std::vector<std::size_t> head;
            for (const auto& p : ans.picks) head.push_back(p.line);
            JudgeResult out{ranking_from_head("llm-judge", corpus.size(), head), std::move(ans), attempt + 1};
            out.ranking.top1_only = true;
            return out;
        } catch (const JudgeParseFailure&) {
            last_raw = std::move(raw);
        }
    }
    throw ScorerFailed("llm-judge: no parsable answer after " + std::to_string(cfg.max_attempts) +
                       " attempts; last output: " + last_raw.substr(0, 200));
}

inline Ranking score_llm_judge(Domain domain, const Corpus& corpus, const Query& query, ModelClient& client,
                               const JudgeConfig& cfg = {}) {
    return judge_example(domain, corpus, query, client, cfg).ranking;
}

}  // namespace backtracing
