#include <CLI11.hpp>

#include <pthread.h>

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "backtracing/backtracing.hpp"

namespace bt = backtracing;

namespace {

std::string env_or(const char* name, const std::string& fallback = {}) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::stringstream ss(item);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!bt::text::trim(part).empty()) out.emplace_back(bt::text::trim(part));
    }
    return out;
}

bt::Domain domain_arg(const std::string& s) {
    if (auto d = bt::parse_domain(s)) return *d;
    throw CLI::ValidationError("--domain", "must be lecture, news or conversation");
}

// In-process backend selected with --mock: "synthetic" or "fixture:<path>".
std::shared_ptr<bt::protocol::Backend> make_mock(const std::string& spec) {
    if (spec == "synthetic") return bt::mock::make_synthetic();
    if (spec.rfind("fixture:", 0) == 0) {
        auto f = std::make_shared<bt::mock::FixtureMock>();
        f->load(spec.substr(8));
        return f;
    }
    throw CLI::ValidationError("--mock", "expected 'synthetic' or 'fixture:<path>'");
}

std::shared_ptr<bt::ModelClient> client_for(const std::string& mock, const std::string& server,
                                            const std::string& cache_dir) {
    if (mock.empty()) return bt::make_client(server, cache_dir);
    auto cache = cache_dir.empty() ? std::make_shared<bt::ScoreCache>() : std::make_shared<bt::ScoreCache>(cache_dir);
    return std::make_shared<bt::ModelClient>(std::make_shared<bt::protocol::InProcessTransport>(make_mock(mock)),
                                             std::move(cache));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rank corpus sentences by how likely they caused a query"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Convert an upstream dataset layout into benchmark JSONL");
    std::string ing_layout = "benchmark", ing_domain, ing_in, ing_out;
    ingest->add_option("--layout", ing_layout, "benchmark | lecture | news | conversation")
        ->check(CLI::IsMember({"benchmark", "lecture", "news", "conversation"}));
    ingest->add_option("--domain", ing_domain, "Target domain")->required();
    ingest->add_option("--in", ing_in, "Source JSONL")->required()->check(CLI::ExistingFile);
    ingest->add_option("--out", ing_out, "Destination JSONL")->required();

    // run
    auto* run = app.add_subcommand("run", "Score datasets with a set of methods and write a report");
    std::string lecture, news, conversation, templates_path, mock_spec, chunk_mode = "auto";
    std::vector<std::string> methods;
    bt::RunConfig cfg;
    cfg.server_addr = env_or("BT_SERVER_ADDR");
    cfg.cache_dir = env_or("BT_CACHE_DIR");
    run->add_option("--lecture", lecture, "Lecture dataset JSONL")->check(CLI::ExistingFile);
    run->add_option("--news", news, "News dataset JSONL")->check(CLI::ExistingFile);
    run->add_option("--conversation", conversation, "Conversation dataset JSONL")->check(CLI::ExistingFile);
    run->add_option("--methods,-m", methods, "Comma-separated methods, name[@model]")->required();
    run->add_option("--out,-o", cfg.out_dir, "Output root")->capture_default_str();
    run->add_option("--server", cfg.server_addr, "Model server host:port (BT_SERVER_ADDR)");
    run->add_option("--cache-dir", cfg.cache_dir, "Response cache directory (BT_CACHE_DIR)");
    run->add_option("--mock", mock_spec, "Use an in-process backend: synthetic | fixture:<path>");
    run->add_option("--jobs,-j", cfg.jobs, "Parallel examples")->capture_default_str()->check(CLI::PositiveNumber);
    run->add_option("--max-failure-rate", cfg.max_failure_rate, "Exit 3 above this failed fraction")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    run->add_option("--seed", cfg.scorer.seed, "Seed for the random baseline")->capture_default_str();
    run->add_option("--bm25-k1", cfg.scorer.bm25.k1)->capture_default_str();
    run->add_option("--bm25-b", cfg.scorer.bm25.b)->capture_default_str();
    run->add_option("--bi-model", cfg.scorer.bi_model)->capture_default_str();
    run->add_option("--bi-qa-model", cfg.scorer.bi_qa_model)->capture_default_str();
    run->add_option("--cross-model", cfg.scorer.cross_model)->capture_default_str();
    run->add_option("--rerank-k", cfg.scorer.rerank_k)->capture_default_str();
    run->add_option("--lm-model", cfg.scorer.likelihood.model_id)->capture_default_str();
    run->add_option("--chunk-k", cfg.scorer.likelihood.chunk_k)->capture_default_str();
    run->add_option("--chunk-mode", chunk_mode)->capture_default_str()->check(CLI::IsMember({"auto", "always", "never"}));
    run->add_flag("--length-normalize", cfg.scorer.likelihood.length_normalize, "Per-token query log-likelihood");
    run->add_option("--judge-model", cfg.scorer.judge.model_id)->capture_default_str();
    run->add_option("--judge-attempts", cfg.scorer.judge.max_attempts)->capture_default_str();
    run->add_option("--templates", templates_path, "JSON file of per-domain template overrides")
        ->check(CLI::ExistingFile);

    // report
    auto* report = app.add_subcommand("report", "Re-render the report of a run directory");
    std::string run_dir;
    std::string report_format = "text";
    report->add_option("run_dir", run_dir)->required()->check(CLI::ExistingDirectory);
    report->add_option("--format", report_format)->check(CLI::IsMember({"text", "csv", "json"}));

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Dataset analyses as CSV");
    std::string an_kind, an_domain, an_data, an_out, an_model = bt::kDefaultBiModel, an_mock;
    std::size_t an_bins = 10;
    std::string an_server = env_or("BT_SERVER_ADDR"), an_cache = env_or("BT_CACHE_DIR");
    analyze->add_option("kind", an_kind, "similarity | locations | groups")
        ->required()
        ->check(CLI::IsMember({"similarity", "locations", "groups"}));
    analyze->add_option("--domain", an_domain)->required();
    analyze->add_option("--data", an_data)->required()->check(CLI::ExistingFile);
    analyze->add_option("--out", an_out, "CSV path (stdout if omitted)");
    analyze->add_option("--model", an_model, "Embedding model for similarity")->capture_default_str();
    analyze->add_option("--bins", an_bins)->capture_default_str()->check(CLI::PositiveNumber);
    analyze->add_option("--server", an_server);
    analyze->add_option("--cache-dir", an_cache);
    analyze->add_option("--mock", an_mock);

    // mock-serve
    auto* serve = app.add_subcommand("mock-serve", "Serve a mock model backend over the line protocol");
    std::string serve_addr = "127.0.0.1:0", serve_fixture;
    bool serve_synthetic = false;
    serve->add_option("--addr", serve_addr)->capture_default_str();
    serve->add_option("--fixture", serve_fixture, "Fixture table or cache JSONL")->check(CLI::ExistingFile);
    serve->add_flag("--synthetic", serve_synthetic, "Answer with the synthetic overlap model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*ingest) {
            const auto n = bt::cmd_ingest(ing_layout, domain_arg(ing_domain), ing_in, ing_out);
            std::cout << "wrote " << n << " examples to " << ing_out << "\n";
            return 0;
        }
        if (*run) {
            if (!lecture.empty()) cfg.datasets[bt::Domain::Lecture] = lecture;
            if (!news.empty()) cfg.datasets[bt::Domain::NewsArticle] = news;
            if (!conversation.empty()) cfg.datasets[bt::Domain::Conversation] = conversation;
            if (cfg.datasets.empty()) {
                std::cerr << "error: give at least one of --lecture, --news, --conversation\n";
                return 2;
            }
            cfg.methods = split_list(methods);
            try {
                cfg.validate();
            } catch (const std::invalid_argument& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 2;
            }
            cfg.scorer.likelihood.chunk_mode = bt::parse_chunk_mode(chunk_mode);
            if (!templates_path.empty()) cfg.scorer.template_overrides = nlohmann::json::parse(bt::read_file(templates_path));
            std::shared_ptr<bt::ModelClient> client;
            if (!mock_spec.empty()) client = client_for(mock_spec, "", cfg.cache_dir);
            const auto sum = bt::cmd_run(cfg, client);
            std::cout << bt::read_file(sum.run_dir / "report.txt");
            std::cerr << "run dir: " << sum.run_dir.string() << "\n"
                      << "scored " << sum.scored << ", resumed " << sum.resumed << ", failed " << sum.failed
                      << ", skipped " << sum.skipped << ", network requests " << sum.stats.network_total() << "\n";
            if (sum.failure_threshold_exceeded) {
                std::cerr << "error: failures or skipped examples exceed the allowed rate\n";
                return 3;
            }
            return 0;
        }
        if (*report) {
            const auto text = bt::cmd_report(run_dir);
            if (report_format == "text") std::cout << text;
            else if (report_format == "csv") std::cout << bt::read_file(bt::fs::path(run_dir) / "report.csv");
            else std::cout << bt::read_file(bt::fs::path(run_dir) / "report.json");
            return 0;
        }
        if (*analyze) {
            const auto d = domain_arg(an_domain);
            const auto ds = bt::load_dataset(an_data, d);
            std::string csv;
            if (an_kind == "similarity") {
                auto client = client_for(an_mock, an_server, an_cache);
                csv = bt::similarity_csv(bt::analyze_similarity(ds, *client, an_model));
            } else if (an_kind == "locations") {
                csv = bt::locations_csv(d, bt::analyze_locations(ds, an_bins));
            } else {
                csv = bt::groups_csv(bt::group_by_cause(ds));
            }
            if (an_out.empty()) std::cout << csv;
            else bt::write_atomic(an_out, csv);
            return 0;
        }
        if (*serve) {
            std::shared_ptr<bt::protocol::Backend> backend;
            std::shared_ptr<bt::protocol::Backend> synthetic;
            if (serve_synthetic) synthetic = bt::mock::make_synthetic();
            if (!serve_fixture.empty()) {
                auto f = std::make_shared<bt::mock::FixtureMock>(synthetic);
                f->load(serve_fixture);
                backend = f;
            } else if (synthetic) {
                backend = synthetic;
            } else {
                std::cerr << "error: mock-serve needs --synthetic and/or --fixture\n";
                return 2;
            }
            sigset_t sigs;
            sigemptyset(&sigs);
            sigaddset(&sigs, SIGINT);
            sigaddset(&sigs, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &sigs, nullptr);
            bt::protocol::TcpLineServer server(backend, serve_addr);
            server.start();
            std::cout << server.addr() << std::endl;
            int sig = 0;
            sigwait(&sigs, &sig);
            server.stop();
            std::cerr << "served " << server.requests_served() << " requests\n";
            return 0;
        }
    } catch (const bt::Error& e) {
        std::cerr << "error [" << e.kind() << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
