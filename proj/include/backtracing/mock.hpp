#pragma once

// Offline model backends: a rule-driven mock for constructed test cases, a
// fixture table replaying responses by canonical request hash, and a
// synthetic lexical "model" for end-to-end runs without checkpoints.

#include <json.hpp>

#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "backtracing/hash.hpp"
#include "backtracing/protocol.hpp"
#include "backtracing/text.hpp"
#include "backtracing/transport.hpp"

namespace backtracing::mock {

inline std::size_t whitespace_tokens(const std::string& s) {
    std::istringstream in(s);
    std::size_t n = 0;
    for (std::string w; in >> w;) ++n;
    return n;
}

class RuleMock : public protocol::Backend {
public:
    std::function<std::vector<double>(const std::string& text)> embed_fn;
    std::function<double(const std::string& query, const std::string& text)> cross_fn;
    std::function<double(const std::string& context, const std::string& continuation)> logprob_fn;
    std::function<std::string(const std::string& prompt, int attempt)> generate_fn;
    std::function<std::size_t(const std::string& text)> token_fn = whitespace_tokens;
    std::size_t context_window = 2048;
    std::optional<std::size_t> dimension;

    std::size_t calls(protocol::Op op) const { return calls_[static_cast<std::size_t>(op)].load(); }
    std::size_t total_calls() const {
        std::size_t n = 0;
        for (const auto& c : calls_) n += c.load();
        return n;
    }

    protocol::ModelResponse handle(const protocol::ModelRequest& req) override {
        using protocol::Op;
        calls_[static_cast<std::size_t>(req.op)]++;
        const auto& p = req.payload;
        switch (req.op) {
            case Op::Info: {
                nlohmann::json out{{"context_window", context_window}, {"model", req.model_id}};
                if (dimension) out["dimension"] = *dimension;
                return protocol::ok_response(std::move(out));
            }
            case Op::Embed: {
                if (!embed_fn) break;
                nlohmann::json vecs = nlohmann::json::array();
                for (const auto& t : p["texts"]) vecs.push_back(embed_fn(t.get<std::string>()));
                return protocol::ok_response({{"vectors", std::move(vecs)}});
            }
            case Op::CrossScore: {
                if (!cross_fn) break;
                nlohmann::json scores = nlohmann::json::array();
                for (const auto& pr : p["pairs"])
                    scores.push_back(cross_fn(pr[0].get<std::string>(), pr[1].get<std::string>()));
                return protocol::ok_response({{"scores", std::move(scores)}});
            }
            case Op::CondLogprob: {
                if (!logprob_fn) break;
                const auto ctx = p["context"].get<std::string>();
                const auto cont = p["continuation"].get<std::string>();
                if (cont.empty()) return protocol::ok_response({{"logprob", 0.0}, {"tokens", 0}});
                const std::size_t cont_tokens = token_fn(cont);
                const std::size_t needed = token_fn(ctx) + cont_tokens;
                if (needed > context_window)
                    return protocol::error_response(protocol::kWindowOverflow, "context window exceeded",
                                                    {{"needed", needed}, {"window", context_window}});
                return protocol::ok_response({{"logprob", logprob_fn(ctx, cont)}, {"tokens", cont_tokens}});
            }
            case Op::Generate: {
                if (!generate_fn) break;
                const auto prompt = p["prompt"].get<std::string>();
                const std::size_t needed = token_fn(prompt);
                if (needed > context_window)
                    return protocol::error_response(protocol::kWindowOverflow, "prompt exceeds context window",
                                                    {{"needed", needed}, {"window", context_window}});
                return protocol::ok_response({{"text", generate_fn(prompt, p.value("attempt", 0))}});
            }
            case Op::TokenCount:
                return protocol::ok_response({{"tokens", token_fn(p["text"].get<std::string>())}});
        }
        return protocol::error_response(protocol::kUnsupportedOp,
                                        std::string(protocol::op_name(req.op)) + " not configured on mock");
    }

private:
    std::array<std::atomic<std::size_t>, 6> calls_{};
};

// ---------------------------------------------------------------------------
// Synthetic model: deterministic functions of token overlap.

inline std::vector<double> hashed_embedding(const std::string& s, std::size_t dim) {
    std::vector<double> v(dim, 0.0);
    for (const auto& tok : text::word_tokens(s)) {
        const auto h = fnv1a64(tok);
        v[h % dim] += (h >> 63) ? -1.0 : 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm == 0.0) {
        v[0] = 1.0;
        return v;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

inline double overlap_score(const std::string& a, const std::string& b) {
    const auto ta = text::word_tokens(a);
    const auto tb = text::word_tokens(b);
    const std::set<std::string> sa(ta.begin(), ta.end());
    const std::set<std::string> sb(tb.begin(), tb.end());
    std::size_t shared = 0;
    for (const auto& t : sa) shared += sb.count(t);
    return static_cast<double>(shared) / std::sqrt(static_cast<double>(sb.size()) + 1.0);
}

// Continuation tokens already seen in the context are cheap, unseen ones
// expensive; always strictly negative for non-empty continuations.
inline double overlap_logprob(const std::string& context, const std::string& continuation) {
    const auto ctx = text::word_tokens(context);
    const std::set<std::string> seen(ctx.begin(), ctx.end());
    const auto toks = text::word_tokens(continuation);
    if (toks.empty()) return -1.0;
    double lp = 0.0;
    for (const auto& t : toks) lp -= seen.count(t) ? 0.5 : 3.0;
    return lp;
}

// Answers a line-numbered judge prompt with the line sharing most words with
// the query block.
inline std::string overlap_judge(const std::string& prompt) {
    static const std::regex kLine(R"(^(\d+)\. (.*)$)");
    std::istringstream in(prompt);
    std::vector<std::pair<std::size_t, std::string>> lines;
    std::string query, line;
    bool in_query = false;
    while (std::getline(in, line)) {
        std::smatch m;
        if (line.rfind("Now consider the following", 0) == 0) {
            in_query = true;
            continue;
        }
        if (in_query) {
            if (line.empty()) {
                if (!query.empty()) in_query = false;
                continue;
            }
            query += line + " ";
        } else if (std::regex_match(line, m, kLine)) {
            lines.emplace_back(std::stoul(m[1].str()), m[2].str());
        }
    }
    std::size_t best = lines.empty() ? 0 : lines.front().first;
    double best_score = -1.0;
    for (const auto& [idx, body] : lines) {
        const double s = overlap_score(query, body);
        if (s > best_score) {
            best_score = s;
            best = idx;
        }
    }
    return nlohmann::json::array({{{"line number", best}, {"reason", "largest word overlap with the query"}}}).dump();
}

inline std::shared_ptr<RuleMock> make_synthetic(std::size_t dimension = 64, std::size_t context_window = 4096) {
    auto m = std::make_shared<RuleMock>();
    m->dimension = dimension;
    m->context_window = context_window;
    m->embed_fn = [dimension](const std::string& t) { return hashed_embedding(t, dimension); };
    m->cross_fn = [](const std::string& q, const std::string& t) { return overlap_score(q, t); };
    m->logprob_fn = overlap_logprob;
    m->generate_fn = [](const std::string& prompt, int) { return overlap_judge(prompt); };
    return m;
}

// ---------------------------------------------------------------------------
// Fixture table: canonical request hash -> response.

class FixtureMock : public protocol::Backend {
public:
    explicit FixtureMock(std::shared_ptr<protocol::Backend> fallback = nullptr) : fallback_(std::move(fallback)) {}

    void add(const protocol::ModelRequest& req, const protocol::ModelResponse& resp) {
        table_[protocol::request_key(req)] = resp;
    }

    void add_raw(const std::string& key, const nlohmann::json& response) {
        if (!response.contains("ok")) throw std::runtime_error("fixture response for " + key + " lacks 'ok'");
        table_[key] = protocol::decode_response(response);
    }

    // Accepts either {"responses": {key: response}} or a response-cache JSONL
    // file ({"key", "response"} per line).
    void load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open fixture " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        const auto content = buf.str();
        try {
            const auto j = nlohmann::json::parse(content);
            if (j.is_object() && j.contains("responses")) {
                for (const auto& [k, v] : j["responses"].items()) add_raw(k, v);
                return;
            }
            if (j.is_object() && j.contains("key")) {
                add_raw(j["key"].get<std::string>(), j.at("response"));
                return;
            }
            throw std::runtime_error("fixture " + path + " has no 'responses' table");
        } catch (const nlohmann::json::parse_error&) {
            std::istringstream lines(content);
            std::string line;
            while (std::getline(lines, line)) {
                if (text::trim(line).empty()) continue;
                const auto j = nlohmann::json::parse(line);
                add_raw(j.at("key").get<std::string>(), j.at("response"));
            }
        }
    }

    std::size_t size() const noexcept { return table_.size(); }
    std::size_t misses() const noexcept { return misses_.load(); }

    protocol::ModelResponse handle(const protocol::ModelRequest& req) override {
        if (auto it = table_.find(protocol::request_key(req)); it != table_.end()) return it->second;
        ++misses_;
        if (fallback_) return fallback_->handle(req);
        return protocol::error_response("fixture_miss", "no fixture for request " + protocol::request_key(req));
    }

private:
    std::shared_ptr<protocol::Backend> fallback_;
    std::unordered_map<std::string, protocol::ModelResponse> table_;
    std::atomic<std::size_t> misses_{0};
};

}  // namespace backtracing::mock
