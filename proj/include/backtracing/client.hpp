#pragma once

#include <json.hpp>

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "backtracing/cache.hpp"
#include "backtracing/error.hpp"
#include "backtracing/protocol.hpp"
#include "backtracing/transport.hpp"

namespace backtracing {

struct ClientOptions {
    int max_attempts = 3;
    std::chrono::milliseconds backoff{200};
};

struct ModelInfo {
    std::optional<std::size_t> dimension;
    std::size_t context_window = 0;
    nlohmann::json raw;
};

struct LogprobResult {
    double logprob = 0.0;
    std::size_t tokens = 0;
};

// Outcome of one cond_logprob inside a batch: a value or a window overflow.
struct LogprobOutcome {
    std::optional<LogprobResult> value;
    std::optional<WindowOverflow> overflow;
};

struct LogprobQuery {
    std::string context;
    std::string continuation;
};

struct GenerateParams {
    std::size_t max_tokens = 512;
    double temperature = 0.0;
    int attempt = 0;
};

struct ClientStats {
    std::array<std::size_t, 6> network{};  // requests sent, by op
    std::array<std::size_t, 6> cache_hits{};

    std::size_t network_total() const {
        std::size_t n = 0;
        for (auto v : network) n += v;
        return n;
    }
    std::size_t network_for(protocol::Op op) const { return network[static_cast<std::size_t>(op)]; }
};

// Typed front end to the wire protocol. Consults the cache before the
// transport; retries Unavailable with exponential backoff; treats any schema
// breach as fatal. Safe to share across threads.
class ModelClient {
public:
    ModelClient(std::shared_ptr<protocol::Transport> transport, std::shared_ptr<ScoreCache> cache,
                ClientOptions options = {})
        : transport_(std::move(transport)),
          cache_(cache ? std::move(cache) : std::make_shared<ScoreCache>()),
          options_(options) {}

    bool has_transport() const noexcept { return transport_ != nullptr; }
    ScoreCache& cache() noexcept { return *cache_; }

    ClientStats stats() const {
        std::lock_guard lock(stats_mu_);
        return stats_;
    }

    void reset_stats() {
        std::lock_guard lock(stats_mu_);
        stats_ = {};
    }

    // Raw batched call; responses come back in request order.
    std::vector<protocol::ModelResponse> call(const std::vector<protocol::ModelRequest>& requests) {
        std::vector<protocol::ModelResponse> out(requests.size());
        std::vector<std::size_t> misses;
        std::vector<std::string> keys(requests.size());
        for (std::size_t i = 0; i < requests.size(); ++i) {
            protocol::validate_request(requests[i]);
            keys[i] = protocol::request_key(requests[i]);
            if (auto hit = cache_->get(keys[i])) {
                out[i] = std::move(*hit);
                count(requests[i].op, false);
            } else {
                misses.push_back(i);
            }
        }
        if (misses.empty()) return out;
        if (!transport_) throw Unavailable("no model server configured and response not cached");

        std::vector<nlohmann::json> wire;
        wire.reserve(misses.size());
        for (std::size_t i : misses) wire.push_back(protocol::encode_request(requests[i], next_id()));

        std::vector<nlohmann::json> replies;
        for (int attempt = 1;; ++attempt) {
            try {
                for (std::size_t i : misses) count(requests[i].op, true);
                replies = transport_->exchange(wire);
                break;
            } catch (const Unavailable&) {
                if (attempt >= options_.max_attempts) throw;
                std::this_thread::sleep_for(options_.backoff * (1 << (attempt - 1)));
            }
        }
        if (replies.size() != misses.size()) throw ProtocolViolation("response count mismatch");
        for (std::size_t m = 0; m < misses.size(); ++m) {
            const std::size_t i = misses[m];
            if (replies[m].value("id", std::string()) != wire[m]["id"])
                throw ProtocolViolation("response id does not match request id");
            auto resp = protocol::decode_response(replies[m]);
            if (const auto problem = protocol::schema_problem(requests[i], resp); !problem.empty())
                throw ProtocolViolation(std::string(protocol::op_name(requests[i].op)) + ": " + problem);
            if (resp.ok || resp.error_kind() == protocol::kWindowOverflow) cache_->put(keys[i], requests[i], resp);
            out[i] = std::move(resp);
        }
        return out;
    }

    ModelInfo info(const std::string& model) {
        {
            std::lock_guard lock(info_mu_);
            if (auto it = info_.find(model); it != info_.end()) return it->second;
        }
        auto resp = call_one({protocol::Op::Info, model, nlohmann::json::object()});
        ModelInfo mi;
        mi.raw = resp.payload;
        mi.context_window = resp.payload["context_window"].get<std::size_t>();
        if (resp.payload.contains("dimension")) mi.dimension = resp.payload["dimension"].get<std::size_t>();
        std::lock_guard lock(info_mu_);
        info_[model] = mi;
        return mi;
    }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts, const std::string& model) {
        auto resp = call_one({protocol::Op::Embed, model, {{"texts", texts}}});
        std::vector<std::vector<double>> vecs;
        vecs.reserve(texts.size());
        for (const auto& v : resp.payload["vectors"]) vecs.push_back(v.get<std::vector<double>>());
        check_dimension(model, vecs.front().size());
        return vecs;
    }

    std::vector<double> cross_score(const std::vector<std::pair<std::string, std::string>>& pairs,
                                    const std::string& model) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [a, b] : pairs) arr.push_back({a, b});
        auto resp = call_one({protocol::Op::CrossScore, model, {{"pairs", std::move(arr)}}});
        return resp.payload["scores"].get<std::vector<double>>();
    }

    LogprobResult cond_logprob(const std::string& context, const std::string& continuation, const std::string& model) {
        auto out = cond_logprob_many({{context, continuation}}, model);
        if (out[0].overflow) throw *out[0].overflow;
        return *out[0].value;
    }

    // Pipelines all requests in one exchange. Overflows are reported per
    // entry; any other server error throws.
    std::vector<LogprobOutcome> cond_logprob_many(const std::vector<LogprobQuery>& queries, const std::string& model) {
        std::vector<LogprobOutcome> out(queries.size());
        std::vector<protocol::ModelRequest> reqs;
        std::vector<std::size_t> where;
        for (std::size_t i = 0; i < queries.size(); ++i) {
            if (queries[i].continuation.empty()) {
                out[i].value = LogprobResult{0.0, 0};
                continue;
            }
            reqs.push_back({protocol::Op::CondLogprob, model,
                            {{"context", queries[i].context}, {"continuation", queries[i].continuation}}});
            where.push_back(i);
        }
        if (reqs.empty()) return out;
        auto resps = call(reqs);
        for (std::size_t r = 0; r < resps.size(); ++r) {
            auto& o = out[where[r]];
            if (resps[r].ok) {
                o.value = LogprobResult{resps[r].payload["logprob"].get<double>(),
                                        resps[r].payload["tokens"].get<std::size_t>()};
            } else if (resps[r].error_kind() == protocol::kWindowOverflow) {
                o.overflow = WindowOverflow(resps[r].error.value("needed", std::size_t{0}),
                                            resps[r].error.value("window", std::size_t{0}));
            } else {
                raise(resps[r]);
            }
        }
        return out;
    }

    std::string generate(const std::string& prompt, const std::string& model, const GenerateParams& params = {}) {
        nlohmann::json payload{{"prompt", prompt},
                               {"max_tokens", params.max_tokens},
                               {"temperature", params.temperature},
                               {"attempt", params.attempt}};
        return call_one({protocol::Op::Generate, model, std::move(payload)}).payload["text"].get<std::string>();
    }

    std::size_t token_count(const std::string& text, const std::string& model) {
        return call_one({protocol::Op::TokenCount, model, {{"text", text}}}).payload["tokens"].get<std::size_t>();
    }

private:
    protocol::ModelResponse call_one(const protocol::ModelRequest& req) {
        auto resp = std::move(call({req}).front());
        if (!resp.ok) raise(resp);
        return resp;
    }

    [[noreturn]] static void raise(const protocol::ModelResponse& resp) {
        if (resp.error_kind() == protocol::kWindowOverflow)
            throw WindowOverflow(resp.error.value("needed", std::size_t{0}), resp.error.value("window", std::size_t{0}));
        throw ServerError(resp.error_kind(), resp.error_message());
    }

    void check_dimension(const std::string& model, std::size_t dim) {
        std::lock_guard lock(info_mu_);
        auto [it, inserted] = dims_.emplace(model, dim);
        if (!inserted && it->second != dim)
            throw ProtocolViolation("embedding dimension changed for " + model);
        if (auto inf = info_.find(model); inf != info_.end() && inf->second.dimension && *inf->second.dimension != dim)
            throw ProtocolViolation("embedding dimension differs from declared dimension for " + model);
    }

    void count(protocol::Op op, bool network) {
        std::lock_guard lock(stats_mu_);
        (network ? stats_.network : stats_.cache_hits)[static_cast<std::size_t>(op)]++;
    }

    std::string next_id() { return "r" + std::to_string(++id_counter_); }

    std::shared_ptr<protocol::Transport> transport_;
    std::shared_ptr<ScoreCache> cache_;
    ClientOptions options_;
    std::atomic<std::uint64_t> id_counter_{0};
    mutable std::mutex stats_mu_;
    ClientStats stats_;
    std::mutex info_mu_;
    std::unordered_map<std::string, ModelInfo> info_;
    std::unordered_map<std::string, std::size_t> dims_;
};

}  // namespace backtracing
