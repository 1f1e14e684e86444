#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "backtracing/backtracing.hpp"

namespace bt_test {

namespace bt = backtracing;

inline std::shared_ptr<bt::ModelClient> client_over(std::shared_ptr<bt::protocol::Backend> backend,
                                                    std::shared_ptr<bt::ScoreCache> cache = nullptr) {
    auto transport = std::make_shared<bt::protocol::InProcessTransport>(std::move(backend));
    return std::make_shared<bt::ModelClient>(transport, cache ? cache : std::make_shared<bt::ScoreCache>(),
                                             bt::ClientOptions{3, std::chrono::milliseconds(1)});
}

inline bt::Corpus corpus(const std::vector<std::string>& texts, bt::Domain d = bt::Domain::Lecture,
                         const std::vector<std::string>& speakers = {}) {
    auto c = bt::make_corpus("c", d, texts, speakers);
    if (d == bt::Domain::Conversation && speakers.empty())
        for (auto& s : c.sentences) s.speaker = s.index % 2 ? "B" : "A";
    return c;
}

inline bt::BacktracingExample example(std::string id, bt::Corpus c, std::string query, std::set<std::size_t> targets) {
    bt::BacktracingExample ex;
    ex.example_id = std::move(id);
    ex.corpus = std::move(c);
    ex.query.text = std::move(query);
    if (ex.corpus.domain == bt::Domain::Conversation) {
        ex.query.speaker = "A";
        ex.query.emotion = "anger";
    }
    ex.targets = std::move(targets);
    return ex;
}

// Sentences "s0".."s{n-1}".
inline std::vector<std::string> numbered(std::size_t n, const std::string& stem = "s") {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(stem + std::to_string(i));
    return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("bt-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string golden_dir() { return std::string(BT_TEST_DIR) + "/golden"; }

}  // namespace bt_test
