#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include "backtracing/protocol.hpp"

namespace backtracing {

// Persistent response cache keyed by request_key(). Backed by an append-only
// JSONL file: {"key", "op", "model", "response"}. A torn final line from an
// interrupted writer is ignored on load. Many readers, one writer at a time.
class ScoreCache {
public:
    ScoreCache() = default;  // memory only

    explicit ScoreCache(const std::filesystem::path& dir) : path_(dir / "responses.jsonl") {
        std::filesystem::create_directories(dir);
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                auto j = nlohmann::json::parse(line);
                entries_[j.at("key").get<std::string>()] = j.at("response").dump();
            } catch (const std::exception&) {
                // torn write
            }
        }
        out_.open(path_, std::ios::app);
    }

    std::optional<protocol::ModelResponse> get(const std::string& key) const {
        std::shared_lock lock(mu_);
        const auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return protocol::decode_response(nlohmann::json::parse(it->second));
    }

    void put(const std::string& key, const protocol::ModelRequest& req, const protocol::ModelResponse& resp) {
        auto encoded = protocol::encode_response(resp, "");
        encoded.erase("id");
        std::unique_lock lock(mu_);
        if (entries_.count(key)) return;
        auto dumped = encoded.dump();
        if (out_.is_open()) {
            const nlohmann::json line{{"key", key},
                                      {"op", std::string(protocol::op_name(req.op))},
                                      {"model", req.model_id},
                                      {"response", encoded}};
            out_ << line.dump() << '\n';
            out_.flush();
        }
        entries_.emplace(key, std::move(dumped));
    }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return entries_.size();
    }

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, std::string> entries_;
    std::ofstream out_;
};

}  // namespace backtracing
