#pragma once

// Domain data model for backtracing benchmarks: corpora of sentences, queries,
// ground-truth cause sets, plus record-format I/O and sentence segmentation.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "backtracing/error.hpp"
#include "backtracing/hash.hpp"
#include "backtracing/text.hpp"

namespace backtracing {

enum class Domain { Lecture, NewsArticle, Conversation };

inline constexpr std::array<Domain, 3> kAllDomains = {Domain::Lecture, Domain::NewsArticle,
                                                      Domain::Conversation};

inline constexpr std::string_view domain_name(Domain d) noexcept {
    switch (d) {
        case Domain::Lecture: return "lecture";
        case Domain::NewsArticle: return "news";
        case Domain::Conversation: return "conversation";
    }
    return "lecture";
}

inline std::optional<Domain> parse_domain(std::string_view s) noexcept {
    for (Domain d : kAllDomains)
        if (domain_name(d) == s) return d;
    return std::nullopt;
}

// Upper bound on annotated causes per query.
inline constexpr std::size_t kMaxTargets = 5;

struct Sentence {
    std::size_t index = 0;
    std::string text;
    std::optional<std::string> speaker;

    bool operator==(const Sentence&) const = default;
};

struct Corpus {
    std::string id;
    Domain domain = Domain::Lecture;
    std::vector<Sentence> sentences;

    std::size_t size() const noexcept { return sentences.size(); }
    const Sentence& operator[](std::size_t i) const { return sentences.at(i); }

    bool operator==(const Corpus&) const = default;
};

struct Query {
    std::string text;
    std::optional<std::string> emotion;
    std::optional<std::string> speaker;

    bool operator==(const Query&) const = default;
};

struct BacktracingExample {
    std::string example_id;
    Corpus corpus;
    Query query;
    std::set<std::size_t> targets;

    bool operator==(const BacktracingExample&) const = default;
};

struct Dataset {
    Domain domain = Domain::Lecture;
    std::vector<BacktracingExample> examples;

    bool operator==(const Dataset&) const = default;
};

// Builds a corpus with contiguous indices from plain texts (and optional
// speakers, same length as texts when given).
inline Corpus make_corpus(std::string id, Domain domain, const std::vector<std::string>& texts,
                          const std::vector<std::string>& speakers = {}) {
    Corpus c{std::move(id), domain, {}};
    c.sentences.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        Sentence s{i, texts[i], std::nullopt};
        if (i < speakers.size()) s.speaker = speakers[i];
        c.sentences.push_back(std::move(s));
    }
    return c;
}

// ---------------------------------------------------------------------------
// Segmentation

namespace detail {

inline bool is_abbreviation(std::string_view word) {
    static const std::set<std::string, std::less<>> kAbbrev = {
        "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e",
        "inc", "ltd", "co", "corp", "mt", "fig", "no", "gen", "col", "lt", "sgt", "rev",
        "hon", "capt", "gov", "sen", "rep", "dept", "approx", "eq", "cf", "al", "jan",
        "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec"};
    std::string lower;
    for (char c : word) lower.push_back(text::ascii_lower(c));
    while (!lower.empty() && (lower.front() == '(' || lower.front() == '"' || lower.front() == '\''))
        lower.erase(lower.begin());
    return kAbbrev.count(lower) > 0;
}

inline bool is_closer(char c) noexcept {
    return c == '"' || c == '\'' || c == ')' || c == ']';
}

inline bool is_terminal(char c) noexcept { return c == '.' || c == '!' || c == '?'; }

inline bool starts_sentence(char c) noexcept {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

}  // namespace detail

// Splits raw text on terminal punctuation (. ! ?) that is followed by
// whitespace and then an uppercase letter or digit, optionally behind an
// opening quote or bracket. A period ending a stop-listed abbreviation never
// splits. Segments are trimmed and never empty.
inline std::vector<std::string> segment_document(std::string_view raw_text) {
    const std::string_view body = text::trim(raw_text);
    if (body.empty()) throw EmptyDocument();

    std::vector<std::string> out;
    std::size_t start = 0;
    std::size_t i = 0;
    const std::size_t n = body.size();
    while (i < n) {
        if (!detail::is_terminal(body[i])) {
            ++i;
            continue;
        }
        const std::size_t punct = i;
        std::size_t end = i;
        while (end < n && (detail::is_terminal(body[end]) || detail::is_closer(body[end]))) ++end;
        std::size_t next = end;
        while (next < n && text::is_space(body[next])) ++next;
        bool split = next > end && next < n;
        if (split) {
            std::size_t lead = next;
            while (lead < n && (body[lead] == '"' || body[lead] == '\'' || body[lead] == '('))
                ++lead;
            split = lead < n && detail::starts_sentence(body[lead]);
        }
        if (split && body[punct] == '.' && (punct == 0 || body[punct - 1] != '.')) {
            std::size_t wstart = punct;
            while (wstart > start && !text::is_space(body[wstart - 1])) --wstart;
            split = !detail::is_abbreviation(body.substr(wstart, punct - wstart));
        }
        if (split) {
            const auto seg = text::trim(body.substr(start, end - start));
            if (!seg.empty()) out.emplace_back(seg);
            start = next;
        }
        i = end;
    }
    const auto tail = text::trim(body.substr(start));
    if (!tail.empty()) out.emplace_back(tail);
    return out;
}

// ---------------------------------------------------------------------------
// Validation

inline std::vector<std::string> diagnose_example(const BacktracingExample& ex) {
    std::vector<std::string> diags;
    const auto& sents = ex.corpus.sentences;
    if (sents.empty()) diags.push_back("corpus has no sentences");
    bool bad_index = false, empty_text = false, missing_speaker = false;
    for (std::size_t i = 0; i < sents.size(); ++i) {
        if (sents[i].index != i) bad_index = true;
        if (text::trim(sents[i].text).empty()) empty_text = true;
        if (ex.corpus.domain == Domain::Conversation &&
            (!sents[i].speaker || text::trim(*sents[i].speaker).empty()))
            missing_speaker = true;
    }
    if (bad_index) diags.push_back("sentence indices are not contiguous from 0");
    if (empty_text) diags.push_back("corpus contains an empty sentence");
    if (missing_speaker) diags.push_back("conversation turn without speaker");
    if (text::trim(ex.query.text).empty()) diags.push_back("query text is empty");
    if (ex.targets.empty()) diags.push_back("target set is empty");
    if (ex.targets.size() > kMaxTargets)
        diags.push_back("more than " + std::to_string(kMaxTargets) + " targets");
    if (!ex.targets.empty() && *ex.targets.rbegin() >= sents.size())
        diags.push_back("target index " + std::to_string(*ex.targets.rbegin()) +
                        " out of range for corpus of " + std::to_string(sents.size()));
    return diags;
}

inline void validate_example(const BacktracingExample& ex) {
    auto diags = diagnose_example(ex);
    if (!diags.empty()) throw ValidationError(ex.example_id, std::move(diags));
}

// ---------------------------------------------------------------------------
// Record format: one JSON object per line.

inline std::string content_corpus_id(const std::vector<Sentence>& sentences) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : sentences) {
        nlohmann::json o{{"text", s.text}};
        if (s.speaker) o["speaker"] = *s.speaker;
        arr.push_back(std::move(o));
    }
    return "c" + sha256_hex(arr.dump()).substr(0, 16);
}

inline nlohmann::json example_to_json(const BacktracingExample& ex) {
    nlohmann::json sents = nlohmann::json::array();
    for (const auto& s : ex.corpus.sentences) {
        nlohmann::json o{{"text", s.text}};
        if (s.speaker) o["speaker"] = *s.speaker;
        sents.push_back(std::move(o));
    }
    nlohmann::json q{{"text", ex.query.text}};
    if (ex.query.speaker) q["speaker"] = *ex.query.speaker;
    if (ex.query.emotion) q["emotion"] = *ex.query.emotion;
    return {{"example_id", ex.example_id},
            {"domain", std::string(domain_name(ex.corpus.domain))},
            {"corpus_id", ex.corpus.id},
            {"sentences", std::move(sents)},
            {"query", std::move(q)},
            {"targets", std::vector<std::size_t>(ex.targets.begin(), ex.targets.end())}};
}

inline std::string serialize_example(const BacktracingExample& ex) {
    return example_to_json(ex).dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key,
                                     const std::string& src, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(src, line, std::string("missing field '") + key + "'");
    return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key,
                                  const std::string& src, std::size_t line) {
    const auto& v = require(obj, key, src, line);
    if (!v.is_string()) throw ParseError(src, line, std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

inline std::optional<std::string> optional_string(const nlohmann::json& obj, const char* key,
                                                  const std::string& src, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string())
        throw ParseError(src, line, std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
}

}  // namespace detail

// Parses one record. Shape errors raise ParseError; invariant violations are
// left to validate_example, except duplicate targets, which a set cannot hold.
inline BacktracingExample parse_example(std::string_view line_text, const std::string& source = "<input>",
                                        std::size_t line = 1) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(source, line, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(source, line, "record must be a JSON object");

    BacktracingExample ex;
    ex.example_id = detail::require_string(j, "example_id", source, line);
    const auto domain_s = detail::require_string(j, "domain", source, line);
    const auto domain = parse_domain(domain_s);
    if (!domain) throw ParseError(source, line, "unknown domain '" + domain_s + "'");
    ex.corpus.domain = *domain;

    const auto& sents = detail::require(j, "sentences", source, line);
    if (!sents.is_array()) throw ParseError(source, line, "field 'sentences' must be an array");
    for (std::size_t i = 0; i < sents.size(); ++i) {
        const auto& s = sents[i];
        if (!s.is_object()) throw ParseError(source, line, "sentence " + std::to_string(i) + " must be an object");
        ex.corpus.sentences.push_back({i, detail::require_string(s, "text", source, line),
                                       detail::optional_string(s, "speaker", source, line)});
    }
    if (auto cid = detail::optional_string(j, "corpus_id", source, line))
        ex.corpus.id = *cid;
    else
        ex.corpus.id = content_corpus_id(ex.corpus.sentences);

    const auto& q = detail::require(j, "query", source, line);
    if (!q.is_object()) throw ParseError(source, line, "field 'query' must be an object");
    ex.query.text = detail::require_string(q, "text", source, line);
    ex.query.speaker = detail::optional_string(q, "speaker", source, line);
    ex.query.emotion = detail::optional_string(q, "emotion", source, line);

    const auto& t = detail::require(j, "targets", source, line);
    if (!t.is_array()) throw ParseError(source, line, "field 'targets' must be an array");
    for (const auto& v : t) {
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw ParseError(source, line, "targets must be non-negative integers");
        if (!ex.targets.insert(v.get<std::size_t>()).second)
            throw ValidationError(ex.example_id, {"duplicate target " + v.dump()});
    }
    return ex;
}

inline Dataset parse_dataset(std::istream& in, Domain domain, const std::string& source) {
    Dataset ds{domain, {}};
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        auto ex = parse_example(line, source, lineno);
        if (ex.corpus.domain != domain)
            throw ValidationError(ex.example_id, {"domain '" + std::string(domain_name(ex.corpus.domain)) +
                                                  "' in a " + std::string(domain_name(domain)) + " dataset"});
        validate_example(ex);
        if (!seen.insert(ex.example_id).second)
            throw ValidationError(ex.example_id, {"duplicate example_id"});
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

inline Dataset load_dataset(const std::string& path, Domain domain) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path, 0, "cannot open file");
    return parse_dataset(in, domain, path);
}

inline std::string serialize_dataset(const Dataset& ds) {
    std::string out;
    for (const auto& ex : ds.examples) {
        out += serialize_example(ex);
        out.push_back('\n');
    }
    return out;
}

}  // namespace backtracing
