#pragma once

// Wire schema for model inference. One JSON message per line:
//   request  {"id", "op", "model", "payload"}
//   response {"id", "ok": true, "payload"} | {"id", "ok": false, "error": {"kind", "message"}}
//
// Payloads by op:
//   embed        {"texts": [str]}                         -> {"vectors": [[num]]}
//   cross_score  {"pairs": [[query, text]]}               -> {"scores": [num]}
//   cond_logprob {"context": str, "continuation": str}    -> {"logprob": num <= 0, "tokens": int}
//   generate     {"prompt", "max_tokens", "temperature", "attempt"} -> {"text": str}
//   token_count  {"text": str}                            -> {"tokens": int}
//   info         {}                                       -> {"dimension"?, "context_window", ...}
//
// cond_logprob scores the continuation appended verbatim to the context; the
// continuation's tokens are those of tokenize(context + continuation) beyond
// the length of tokenize(context).

#include <json.hpp>

#include <optional>
#include <string>
#include <string_view>

#include "backtracing/error.hpp"
#include "backtracing/hash.hpp"
#include "backtracing/text.hpp"

namespace backtracing::protocol {

enum class Op { Embed, CrossScore, CondLogprob, Generate, TokenCount, Info };

inline constexpr Op kAllOps[] = {Op::Embed, Op::CrossScore, Op::CondLogprob,
                                 Op::Generate, Op::TokenCount, Op::Info};

inline constexpr std::string_view op_name(Op op) noexcept {
    switch (op) {
        case Op::Embed: return "embed";
        case Op::CrossScore: return "cross_score";
        case Op::CondLogprob: return "cond_logprob";
        case Op::Generate: return "generate";
        case Op::TokenCount: return "token_count";
        case Op::Info: return "info";
    }
    return "info";
}

inline std::optional<Op> parse_op(std::string_view s) noexcept {
    for (Op op : kAllOps)
        if (op_name(op) == s) return op;
    return std::nullopt;
}

struct ModelRequest {
    Op op = Op::Info;
    std::string model_id;
    nlohmann::json payload = nlohmann::json::object();
};

struct ModelResponse {
    bool ok = false;
    nlohmann::json payload;  // when ok
    nlohmann::json error;    // {"kind", "message", ...} when !ok

    std::string error_kind() const { return ok ? std::string() : error.value("kind", "unknown"); }
    std::string error_message() const { return ok ? std::string() : error.value("message", ""); }
};

// Error kinds a server may return.
inline constexpr std::string_view kWindowOverflow = "window_overflow";
inline constexpr std::string_view kUnknownModel = "unknown_model";
inline constexpr std::string_view kBadRequest = "bad_request";
inline constexpr std::string_view kUnsupportedOp = "unsupported_op";

namespace detail {

inline nlohmann::json normalize(const nlohmann::json& j) {
    if (j.is_string()) return text::normalize_newlines(j.get_ref<const std::string&>());
    if (j.is_array()) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& v : j) out.push_back(normalize(v));
        return out;
    }
    if (j.is_object()) {
        nlohmann::json out = nlohmann::json::object();
        for (const auto& [k, v] : j.items()) out[text::normalize_newlines(k)] = normalize(v);
        return out;
    }
    return j;
}

}  // namespace detail

// Sorted keys, no insignificant whitespace, CRLF/CR folded to LF, UTF-8 kept
// verbatim.
inline std::string canonical_json(const nlohmann::json& j) {
    return detail::normalize(j).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline std::string request_key(const ModelRequest& req) {
    const nlohmann::json body{{"op", std::string(op_name(req.op))}, {"model", req.model_id}, {"payload", req.payload}};
    return sha256_hex(canonical_json(body));
}

inline nlohmann::json encode_request(const ModelRequest& req, const std::string& id) {
    return {{"id", id}, {"op", std::string(op_name(req.op))}, {"model", req.model_id}, {"payload", req.payload}};
}

inline ModelRequest decode_request(const nlohmann::json& j) {
    if (!j.is_object()) throw ProtocolViolation("request must be an object");
    const auto op_s = j.value("op", std::string());
    const auto op = parse_op(op_s);
    if (!op) throw ServerError(std::string(kUnsupportedOp), "unknown op '" + op_s + "'");
    ModelRequest req{*op, j.value("model", std::string()), j.value("payload", nlohmann::json::object())};
    return req;
}

inline nlohmann::json encode_response(const ModelResponse& r, const std::string& id) {
    if (r.ok) return {{"id", id}, {"ok", true}, {"payload", r.payload}};
    return {{"id", id}, {"ok", false}, {"error", r.error}};
}

inline ModelResponse decode_response(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("ok") || !j["ok"].is_boolean())
        throw ProtocolViolation("response lacks boolean 'ok'");
    ModelResponse r;
    r.ok = j["ok"].get<bool>();
    if (r.ok) {
        if (!j.contains("payload") || !j["payload"].is_object())
            throw ProtocolViolation("ok response lacks object 'payload'");
        r.payload = j["payload"];
    } else {
        if (!j.contains("error") || !j["error"].is_object() || !j["error"].contains("kind"))
            throw ProtocolViolation("error response lacks 'error.kind'");
        r.error = j["error"];
    }
    return r;
}

inline ModelResponse ok_response(nlohmann::json payload) { return {true, std::move(payload), nullptr}; }

inline ModelResponse error_response(std::string_view kind, const std::string& message,
                                    nlohmann::json extra = nlohmann::json::object()) {
    extra["kind"] = std::string(kind);
    extra["message"] = message;
    return {false, nullptr, std::move(extra)};
}

// Pre-flight payload check shared by client and servers.
inline void validate_request(const ModelRequest& req) {
    const auto& p = req.payload;
    const auto bad = [&](const std::string& what) {
        throw ServerError(std::string(kBadRequest), std::string(op_name(req.op)) + ": " + what);
    };
    if (!p.is_object()) bad("payload must be an object");
    switch (req.op) {
        case Op::Embed:
            if (!p.contains("texts") || !p["texts"].is_array() || p["texts"].empty()) bad("'texts' must be a non-empty array");
            for (const auto& t : p["texts"])
                if (!t.is_string()) bad("texts must be strings");
            break;
        case Op::CrossScore:
            if (!p.contains("pairs") || !p["pairs"].is_array() || p["pairs"].empty()) bad("'pairs' must be a non-empty array");
            for (const auto& pr : p["pairs"])
                if (!pr.is_array() || pr.size() != 2 || !pr[0].is_string() || !pr[1].is_string())
                    bad("each pair must be [string, string]");
            break;
        case Op::CondLogprob:
            if (!p.contains("context") || !p["context"].is_string() || !p.contains("continuation") ||
                !p["continuation"].is_string())
                bad("'context' and 'continuation' must be strings");
            break;
        case Op::Generate:
            if (!p.contains("prompt") || !p["prompt"].is_string()) bad("'prompt' must be a string");
            break;
        case Op::TokenCount:
            if (!p.contains("text") || !p["text"].is_string()) bad("'text' must be a string");
            break;
        case Op::Info:
            break;
    }
}

// Checks an ok response payload against its op's schema. Returns an empty
// string when valid, otherwise the first problem found.
inline std::string schema_problem(const ModelRequest& req, const ModelResponse& resp) {
    if (!resp.ok) return resp.error.contains("message") ? std::string() : "error lacks message";
    const auto& p = resp.payload;
    switch (req.op) {
        case Op::Embed: {
            if (!p.contains("vectors") || !p["vectors"].is_array()) return "missing vectors";
            if (p["vectors"].size() != req.payload["texts"].size()) return "vector count != text count";
            std::optional<std::size_t> dim;
            for (const auto& v : p["vectors"]) {
                if (!v.is_array() || v.empty()) return "vector must be a non-empty array";
                for (const auto& x : v)
                    if (!x.is_number()) return "vector entries must be numbers";
                if (dim && *dim != v.size()) return "non-uniform vector dimension";
                dim = v.size();
            }
            return {};
        }
        case Op::CrossScore:
            if (!p.contains("scores") || !p["scores"].is_array()) return "missing scores";
            if (p["scores"].size() != req.payload["pairs"].size()) return "score count != pair count";
            for (const auto& x : p["scores"])
                if (!x.is_number()) return "scores must be numbers";
            return {};
        case Op::CondLogprob:
            if (!p.contains("logprob") || !p["logprob"].is_number()) return "missing logprob";
            if (p["logprob"].get<double>() > 1e-9) return "logprob must be <= 0";
            if (!p.contains("tokens") || !p["tokens"].is_number_integer() || p["tokens"].get<long long>() < 0)
                return "tokens must be a non-negative integer";
            return {};
        case Op::Generate:
            if (!p.contains("text") || !p["text"].is_string()) return "missing text";
            return {};
        case Op::TokenCount:
            if (!p.contains("tokens") || !p["tokens"].is_number_integer() || p["tokens"].get<long long>() < 0)
                return "tokens must be a non-negative integer";
            return {};
        case Op::Info:
            if (!p.contains("context_window") || !p["context_window"].is_number_integer())
                return "missing context_window";
            if (p.contains("dimension") && !p["dimension"].is_number_integer()) return "dimension must be an integer";
            return {};
    }
    return {};
}

}  // namespace backtracing::protocol
