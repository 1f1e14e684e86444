#pragma once

// Method x domain sweeps over persisted run directories:
//
//   <out>/run-<config hash>/
//     config.json                         snapshot of the result-affecting config
//     examples/<method>/<domain>/<id>.json        ranking + result per example
//     examples/<method>/<domain>/<id>.skipped.json  scorer unavailable; retried on resume
//     report.txt  report.csv  report.json
//
// Every file is written to a temporary name and renamed into place.

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "backtracing/cache.hpp"
#include "backtracing/client.hpp"
#include "backtracing/core.hpp"
#include "backtracing/evaluation.hpp"
#include "backtracing/hash.hpp"
#include "backtracing/protocol.hpp"
#include "backtracing/registry.hpp"

namespace backtracing {

namespace fs = std::filesystem;

inline void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." +
           std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// File-name safe rendering of ids and method labels.
inline std::string file_slug(const std::string& s) {
    std::string out;
    for (char c : s) out.push_back(text::is_ascii_alnum(c) || c == '-' || c == '_' || c == '.' ? c : '_');
    if (out.empty() || out == "." || out == "..") out = "_" + out;
    if (out != s) out += "-" + sha256_hex(s).substr(0, 8);
    return out;
}

inline const char* chunk_mode_name(ChunkMode m) {
    switch (m) {
        case ChunkMode::Auto: return "auto";
        case ChunkMode::Always: return "always";
        case ChunkMode::Never: return "never";
    }
    return "auto";
}

inline ChunkMode parse_chunk_mode(const std::string& s) {
    if (s == "auto") return ChunkMode::Auto;
    if (s == "always") return ChunkMode::Always;
    if (s == "never") return ChunkMode::Never;
    throw std::invalid_argument("chunk mode must be auto|always|never, got '" + s + "'");
}

struct RunConfig {
    std::map<Domain, std::string> datasets;
    std::vector<std::string> methods;
    ScorerSettings scorer;
    std::string cache_dir;    // empty: memory-only cache
    std::string server_addr;  // empty: offline
    std::string out_dir = "runs";
    std::size_t jobs = 1;
    double max_failure_rate = 0.10;

    void validate() const {
        if (datasets.empty()) throw std::invalid_argument("run needs at least one dataset");
        if (methods.empty()) throw std::invalid_argument("run needs at least one method");
        for (const auto& m : methods) MethodSpec::parse(m);
        if (scorer.rerank_k < 1) throw std::invalid_argument("rerank k must be >= 1");
        if (scorer.likelihood.chunk_k < 1) throw std::invalid_argument("chunk k must be >= 1");
        scorer.bm25.validate();
    }

    // Fields that change results. Dataset files enter by content hash, so
    // neither paths nor operational settings (cache, server, jobs) do.
    nlohmann::json snapshot() const {
        nlohmann::json ds = nlohmann::json::object();
        for (const auto& [d, path] : datasets) ds[std::string(domain_name(d))] = "sha256:" + sha256_hex(read_file(path));
        const auto& s = scorer;
        return {{"datasets", ds},
                {"methods", methods},
                {"seed", s.seed},
                {"bm25", {{"k1", s.bm25.k1}, {"b", s.bm25.b}}},
                {"bi_model", s.bi_model},
                {"bi_qa_model", s.bi_qa_model},
                {"cross_model", s.cross_model},
                {"rerank_k", s.rerank_k},
                {"likelihood",
                 {{"model", s.likelihood.model_id},
                  {"chunk_k", s.likelihood.chunk_k},
                  {"chunk_mode", chunk_mode_name(s.likelihood.chunk_mode)},
                  {"length_normalize", s.likelihood.length_normalize}}},
                {"judge",
                 {{"model", s.judge.model_id},
                  {"max_attempts", s.judge.max_attempts},
                  {"max_tokens", s.judge.max_tokens},
                  {"temperature", s.judge.temperature},
                  {"prompt_version", std::string(kJudgePromptVersion)}}},
                {"templates", s.template_overrides}};
    }

    std::string config_hash() const { return sha256_hex(protocol::canonical_json(snapshot())).substr(0, 12); }
};

struct RunSummary {
    fs::path run_dir;
    std::size_t scored = 0;
    std::size_t resumed = 0;
    std::size_t failed = 0;
    std::size_t skipped = 0;
    ClientStats stats;
    bool failure_threshold_exceeded = false;
};

inline std::shared_ptr<ModelClient> make_client(const std::string& server_addr, const std::string& cache_dir,
                                                ClientOptions options = {}) {
    std::shared_ptr<protocol::Transport> transport;
    if (!server_addr.empty()) transport = std::make_shared<protocol::SocketTransport>(server_addr);
    auto cache = cache_dir.empty() ? std::make_shared<ScoreCache>() : std::make_shared<ScoreCache>(fs::path(cache_dir));
    return std::make_shared<ModelClient>(std::move(transport), std::move(cache), options);
}

namespace detail {

inline fs::path artifact_path(const fs::path& run_dir, const std::string& method, Domain d, const std::string& id,
                              const char* suffix = ".json") {
    return run_dir / "examples" / file_slug(method) / std::string(domain_name(d)) / (file_slug(id) + suffix);
}

}  // namespace detail

inline EvalReport load_run_report(const fs::path& run_dir);

// Scores every (method, example) not already persisted in the run directory.
// `client` may be null for lexical-only runs; when given it overrides
// server_addr/cache_dir from the config.
inline RunSummary cmd_run(const RunConfig& cfg, std::shared_ptr<ModelClient> client = nullptr) {
    cfg.validate();
    std::vector<MethodSpec> specs;
    for (const auto& m : cfg.methods) specs.push_back(MethodSpec::parse(m));
    const bool neural = std::any_of(specs.begin(), specs.end(), [](const auto& s) { return needs_model_server(s.name); });

    if (neural && !client) client = make_client(cfg.server_addr, cfg.cache_dir);
    if (neural && !client->has_transport() && client->cache().size() == 0)
        throw Unavailable("neural methods need a model server: set BT_SERVER_ADDR (or --server), "
                          "or point BT_CACHE_DIR (or --cache-dir) at a warm response cache");

    std::vector<Dataset> datasets;
    for (const auto& [d, path] : cfg.datasets) datasets.push_back(load_dataset(path, d));

    RunSummary sum;
    sum.run_dir = fs::path(cfg.out_dir) / ("run-" + cfg.config_hash());
    fs::create_directories(sum.run_dir);
    write_atomic(sum.run_dir / "config.json", cfg.snapshot().dump(2) + "\n");

    struct Job {
        const MethodSpec* spec;
        const BacktracingExample* ex;
    };
    std::vector<Job> jobs;
    for (const auto& spec : specs)
        for (const auto& ds : datasets)
            for (const auto& ex : ds.examples) jobs.push_back({&spec, &ex});

    const auto stats_before = client ? client->stats() : ClientStats{};
    std::atomic<std::size_t> next{0}, scored{0}, resumed{0}, failed{0}, skipped{0};
    std::mutex err_mu;
    std::exception_ptr fatal;

    const auto worker = [&] {
        for (;;) {
            const std::size_t i = next++;
            if (i >= jobs.size()) return;
            {
                std::lock_guard lock(err_mu);
                if (fatal) return;
            }
            const auto& spec = *jobs[i].spec;
            const auto& ex = *jobs[i].ex;
            const auto label = spec.label();
            const auto done = detail::artifact_path(sum.run_dir, label, ex.corpus.domain, ex.example_id);
            const auto skip_marker = detail::artifact_path(sum.run_dir, label, ex.corpus.domain, ex.example_id, ".skipped.json");
            if (fs::exists(done)) {
                ++resumed;
                continue;
            }
            try {
                nlohmann::json artifact;
                try {
                    auto scored_ex = score_example(spec, ex, client.get(), cfg.scorer);
                    const auto result = evaluate_example(ex, scored_ex.ranking);
                    artifact = {{"example_id", ex.example_id},
                                {"ranking", ranking_to_json(scored_ex.ranking)},
                                {"result", result_to_json(result)},
                                {"extra", scored_ex.extra}};
                    ++scored;
                } catch (const ScorerFailed& e) {
                    const auto result = failed_result(ex, label, spec.name == "llm-judge", e.what());
                    artifact = {{"example_id", ex.example_id}, {"ranking", nullptr}, {"result", result_to_json(result)},
                                {"extra", nlohmann::json::object()}};
                    ++failed;
                }
                write_atomic(done, artifact.dump() + "\n");
                if (fs::exists(skip_marker)) fs::remove(skip_marker);
            } catch (const ScorerUnavailable& e) {
                write_atomic(skip_marker, nlohmann::json{{"example_id", ex.example_id}, {"method", label},
                                                         {"domain", std::string(domain_name(ex.corpus.domain))},
                                                         {"reason", e.what()}}
                                              .dump() + "\n");
                ++skipped;
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!fatal) fatal = std::current_exception();
                return;
            }
        }
    };

    const std::size_t nthreads = std::max<std::size_t>(1, std::min(cfg.jobs, jobs.size()));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (fatal) std::rethrow_exception(fatal);

    sum.scored = scored;
    sum.resumed = resumed;
    sum.failed = failed;
    sum.skipped = skipped;
    if (client) {
        const auto after = client->stats();
        for (std::size_t k = 0; k < after.network.size(); ++k) {
            sum.stats.network[k] = after.network[k] - stats_before.network[k];
            sum.stats.cache_hits[k] = after.cache_hits[k] - stats_before.cache_hits[k];
        }
    }

    // Failure rate over all persisted results, so resumed runs are judged the same.
    const auto report = load_run_report(sum.run_dir);
    std::size_t total = 0, failures = 0, skips = 0;
    for (const auto& [_, c] : report.cells) {
        total += c.n;
        failures += c.failed;
        skips += c.skipped;
    }
    sum.failure_threshold_exceeded =
        skips > 0 || (total > 0 && static_cast<double>(failures) > cfg.max_failure_rate * static_cast<double>(total));
    write_atomic(sum.run_dir / "report.txt", render_report(report));
    write_atomic(sum.run_dir / "report.csv", report_csv(report));
    write_atomic(sum.run_dir / "report.json", report_json(report).dump(2) + "\n");
    return sum;
}

inline EvalReport load_run_report(const fs::path& run_dir) {
    if (!fs::exists(run_dir / "config.json")) throw std::runtime_error(run_dir.string() + " is not a run directory");
    const auto config = nlohmann::json::parse(read_file(run_dir / "config.json"));
    std::vector<std::string> order;
    for (const auto& m : config.value("methods", nlohmann::json::array())) order.push_back(MethodSpec::parse(m).label());

    std::vector<fs::path> files;
    if (fs::exists(run_dir / "examples"))
        for (const auto& e : fs::recursive_directory_iterator(run_dir / "examples"))
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::vector<ExampleResult> results;
    std::map<std::pair<std::string, Domain>, std::size_t> skipped;
    for (const auto& f : files) {
        const auto name = f.filename().string();
        const auto j = nlohmann::json::parse(read_file(f));
        if (name.size() > 13 && name.ends_with(".skipped.json")) {
            auto done = f;
            done.replace_filename(name.substr(0, name.size() - 13) + ".json");
            if (!fs::exists(done))
                ++skipped[{j.at("method").get<std::string>(),
                           parse_domain(j.at("domain").get<std::string>()).value_or(Domain::Lecture)}];
            continue;
        }
        results.push_back(result_from_json(j.at("result")));
    }
    if (results.empty() && skipped.empty()) throw EmptyReport();
    return aggregate(results, skipped, order);
}

inline std::string cmd_report(const fs::path& run_dir) {
    const auto report = load_run_report(run_dir);
    const auto text = render_report(report);
    write_atomic(run_dir / "report.txt", text);
    write_atomic(run_dir / "report.csv", report_csv(report));
    write_atomic(run_dir / "report.json", report_json(report).dump(2) + "\n");
    return text;
}

// ---------------------------------------------------------------------------
// Ingest: upstream layouts -> benchmark records.

namespace detail {

inline std::vector<std::size_t> read_indices(const nlohmann::json& rec, std::initializer_list<const char*> keys,
                                             const std::string& src, std::size_t line) {
    for (const char* k : keys) {
        auto it = rec.find(k);
        if (it == rec.end()) continue;
        std::vector<std::size_t> out;
        const auto push = [&](const nlohmann::json& v) {
            if (!v.is_number_integer() || v.get<long long>() < 0)
                throw ParseError(src, line, std::string("'") + k + "' must hold non-negative integers");
            out.push_back(v.get<std::size_t>());
        };
        if (it->is_array())
            for (const auto& v : *it) push(v);
        else
            push(*it);
        return out;
    }
    throw ParseError(src, line, "record has no target field");
}

inline std::string read_id(const nlohmann::json& rec, std::initializer_list<const char*> keys, const std::string& src,
                           std::size_t line) {
    for (const char* k : keys) {
        auto it = rec.find(k);
        if (it == rec.end()) continue;
        if (it->is_string()) return it->get<std::string>();
        if (it->is_number_integer()) return std::to_string(it->get<long long>());
    }
    throw ParseError(src, line, "record has no id field");
}

inline BacktracingExample convert_record(const std::string& layout, Domain domain, const nlohmann::json& rec,
                                         const std::string& src, std::size_t line) {
    if (!rec.is_object()) throw ParseError(src, line, "record must be a JSON object");
    BacktracingExample ex;
    ex.corpus.domain = domain;
    const auto str = [&](const char* key) {
        auto it = rec.find(key);
        if (it == rec.end() || !it->is_string()) throw ParseError(src, line, std::string("missing string '") + key + "'");
        return it->get<std::string>();
    };
    std::vector<std::string> texts, speakers;
    if (layout == "lecture") {
        ex.example_id = read_id(rec, {"id", "example_id"}, src, line);
        const auto& tr = rec.contains("transcript") ? rec["transcript"] : throw ParseError(src, line, "missing 'transcript'");
        if (tr.is_string()) {
            texts = segment_document(tr.get<std::string>());
        } else if (tr.is_array()) {
            for (const auto& s : tr) {
                if (!s.is_string()) throw ParseError(src, line, "transcript entries must be strings");
                texts.push_back(s.get<std::string>());
            }
        } else {
            throw ParseError(src, line, "'transcript' must be a string or array");
        }
        ex.query.text = rec.contains("comment") ? str("comment") : str("query");
        if (rec.contains("lecture_id")) ex.corpus.id = read_id(rec, {"lecture_id"}, src, line);
    } else if (layout == "news") {
        ex.example_id = read_id(rec, {"id", "example_id"}, src, line);
        if (!rec.contains("sentences") || !rec["sentences"].is_array()) throw ParseError(src, line, "missing 'sentences'");
        for (const auto& s : rec["sentences"]) {
            if (!s.is_string()) throw ParseError(src, line, "sentences must be strings");
            texts.push_back(s.get<std::string>());
        }
        ex.query.text = str("question");
        if (rec.contains("article_id")) ex.corpus.id = read_id(rec, {"article_id"}, src, line);
    } else if (layout == "conversation") {
        ex.example_id = read_id(rec, {"id", "example_id"}, src, line);
        if (!rec.contains("turns") || !rec["turns"].is_array()) throw ParseError(src, line, "missing 'turns'");
        for (const auto& t : rec["turns"]) {
            if (!t.is_object() || !t.contains("speaker") || !t.contains("utterance"))
                throw ParseError(src, line, "turns need 'speaker' and 'utterance'");
            speakers.push_back(t["speaker"].get<std::string>());
            texts.push_back(t["utterance"].get<std::string>());
        }
        if (!rec.contains("query") || !rec["query"].is_object()) throw ParseError(src, line, "missing 'query' object");
        const auto& q = rec["query"];
        ex.query.text = q.value("utterance", std::string());
        if (q.contains("speaker")) ex.query.speaker = q["speaker"].get<std::string>();
        if (q.contains("emotion")) ex.query.emotion = q["emotion"].get<std::string>();
        if (rec.contains("dialog_id")) ex.corpus.id = read_id(rec, {"dialog_id"}, src, line);
    } else {
        throw std::invalid_argument("unknown ingest layout '" + layout + "'");
    }
    ex.corpus.sentences = make_corpus("", domain, texts, speakers).sentences;
    if (ex.corpus.id.empty()) ex.corpus.id = content_corpus_id(ex.corpus.sentences);
    const auto idx = read_indices(rec, {"targets", "causes", "sentence_index"}, src, line);
    for (std::size_t i : idx)
        if (!ex.targets.insert(i).second) throw ValidationError(ex.example_id, {"duplicate target " + std::to_string(i)});
    return ex;
}

}  // namespace detail

inline constexpr std::string_view kIngestLayouts[] = {"benchmark", "lecture", "news", "conversation"};

// Converts `source` (JSONL in `layout`) into benchmark records at `out`.
// Returns the record count. Output is deterministic for a given input.
inline std::size_t cmd_ingest(const std::string& layout, Domain domain, const std::string& source, const std::string& out) {
    std::ifstream in(source, std::ios::binary);
    if (!in) throw ParseError(source, 0, "cannot open file");
    Dataset ds{domain, {}};
    if (layout == "benchmark") {
        ds = parse_dataset(in, domain, source);
    } else {
        std::set<std::string> seen;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (text::trim(line).empty()) continue;
            nlohmann::json rec;
            try {
                rec = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(source, lineno, std::string("malformed JSON: ") + e.what());
            }
            auto ex = detail::convert_record(layout, domain, rec, source, lineno);
            validate_example(ex);
            if (!seen.insert(ex.example_id).second) throw ValidationError(ex.example_id, {"duplicate example_id"});
            ds.examples.push_back(std::move(ex));
        }
    }
    write_atomic(out, serialize_dataset(ds));
    return ds.examples.size();
}

// ---------------------------------------------------------------------------
// Analysis outputs (plot-ready CSV).

inline std::string similarity_csv(const std::vector<SimilarityRow>& rows) {
    std::ostringstream out;
    out << "example_id,gt,max,diff\n";
    for (const auto& r : rows)
        out << r.example_id << ',' << format_fixed(r.gt, 6) << ',' << format_fixed(r.max, 6) << ','
            << format_fixed(r.diff, 6) << '\n';
    return out.str();
}

inline std::string locations_csv(Domain d, const LocationHistogram& h) {
    std::ostringstream out;
    out << "domain,bin,bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < h.bins; ++b)
        out << domain_name(d) << ',' << b << ',' << format_fixed(h.bin_lo(b), 4) << ','
            << format_fixed(h.bin_lo(b + 1), 4) << ',' << h.counts[b] << '\n';
    return out.str();
}

inline std::string groups_csv(const std::map<CauseKey, std::vector<std::string>>& groups) {
    std::ostringstream out;
    out << "corpus_id,target_index,group_size,example_ids\n";
    for (const auto& [key, ids] : groups) out << key.corpus_id << ',' << key.index << ',' << ids.size() << ',' << text::join(ids, ";") << '\n';
    return out.str();
}

}  // namespace backtracing
