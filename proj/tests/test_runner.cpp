#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace backtracing;
namespace fs = std::filesystem;
using bt_test::corpus;
using bt_test::example;

namespace {

std::string write_text(const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
    return p.string();
}

std::vector<BacktracingExample> lecture_examples(std::size_t count) {
    const std::vector<std::string> texts = {"Today we study derivatives.", "A derivative is a rate of change.",
                                            "Consider f of x equals x squared.", "Its slope at x is two x.",
                                            "Integrals undo derivatives.", "We will see why next week."};
    const std::vector<std::string> queries = {"why is the slope two x", "what is a rate of change", "why next week",
                                              "how do integrals undo them", "what is f of x"};
    std::vector<BacktracingExample> out;
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(example("lec-" + std::to_string(i), corpus(texts), queries[i % queries.size()], {i % texts.size()}));
    return out;
}

RunConfig lexical_config(const fs::path& dir, std::size_t n = 5) {
    RunConfig cfg;
    cfg.datasets[Domain::Lecture] = write_text(dir / "lec.jsonl", serialize_dataset({Domain::Lecture, lecture_examples(n)}));
    cfg.methods = {"random", "edit", "bm25"};
    cfg.out_dir = (dir / "out").string();
    return cfg;
}

std::map<std::string, std::string> artifacts(const fs::path& run_dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(run_dir / "examples"))
        if (e.is_regular_file()) out[fs::relative(e.path(), run_dir).string()] = read_file(e.path());
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Ingest

TEST(Ingest, LectureLayoutIdempotent) {
    const auto dir = bt_test::temp_dir("ingest-lec");
    const auto src = write_text(dir / "src.jsonl",
                                R"({"id": 1, "transcript": "Today we talk about limits. A limit is a value. Dr. Lee agrees.", )"
                                R"("comment": "What is a limit?", "targets": [1], "lecture_id": "L1"})"
                                "\n"
                                R"({"id": "2", "transcript": ["First point.", "Second point."], "query": "Why second?", )"
                                R"("sentence_index": 1})"
                                "\n");
    EXPECT_EQ(cmd_ingest("lecture", Domain::Lecture, src, (dir / "a.jsonl").string()), 2u);
    EXPECT_EQ(cmd_ingest("lecture", Domain::Lecture, src, (dir / "b.jsonl").string()), 2u);
    EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "b.jsonl"));
    const auto ds = load_dataset((dir / "a.jsonl").string(), Domain::Lecture);
    ASSERT_EQ(ds.examples.size(), 2u);
    EXPECT_EQ(ds.examples[0].example_id, "1");
    EXPECT_EQ(ds.examples[0].corpus.size(), 3u);
    EXPECT_EQ(ds.examples[0].corpus.sentences[2].text, "Dr. Lee agrees.");
    EXPECT_EQ(ds.examples[0].corpus.id, "L1");
    EXPECT_EQ(ds.examples[1].targets, std::set<std::size_t>{1});

    // Re-ingesting benchmark output is a fixed point.
    EXPECT_EQ(cmd_ingest("benchmark", Domain::Lecture, (dir / "a.jsonl").string(), (dir / "c.jsonl").string()), 2u);
    EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "c.jsonl"));
}

TEST(Ingest, NewsAndConversationLayouts) {
    const auto dir = bt_test::temp_dir("ingest-other");
    const auto news = write_text(dir / "news.jsonl",
                                 R"({"id": "n1", "sentences": ["A.", "B.", "C."], "question": "Why B?", "causes": [1, 2]})"
                                 "\n");
    EXPECT_EQ(cmd_ingest("news", Domain::NewsArticle, news, (dir / "n.jsonl").string()), 1u);
    EXPECT_EQ(load_dataset((dir / "n.jsonl").string(), Domain::NewsArticle).examples[0].targets,
              (std::set<std::size_t>{1, 2}));

    const auto conv = write_text(
        dir / "conv.jsonl",
        R"({"id": "c1", "dialog_id": "d9", "turns": [{"speaker": "A", "utterance": "Hi."}, {"speaker": "B", "utterance": "Go away."}], )"
        R"("query": {"utterance": "Rude!", "speaker": "A", "emotion": "anger"}, "targets": 1})"
        "\n");
    EXPECT_EQ(cmd_ingest("conversation", Domain::Conversation, conv, (dir / "c.jsonl").string()), 1u);
    const auto ds = load_dataset((dir / "c.jsonl").string(), Domain::Conversation);
    EXPECT_EQ(ds.examples[0].corpus.sentences[1].speaker, "B");
    EXPECT_EQ(ds.examples[0].query.emotion, "anger");
    EXPECT_EQ(ds.examples[0].corpus.id, "d9");
}

TEST(Ingest, Errors) {
    const auto dir = bt_test::temp_dir("ingest-err");
    const auto empty_q = write_text(dir / "e.jsonl", R"({"id": "bad", "sentences": ["A."], "question": " ", "targets": [0]})");
    try {
        cmd_ingest("news", Domain::NewsArticle, empty_q, (dir / "o.jsonl").string());
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.example_id(), "bad");
    }
    EXPECT_FALSE(fs::exists(dir / "o.jsonl"));
    const auto broken = write_text(dir / "b.jsonl", "\n{oops\n");
    try {
        cmd_ingest("news", Domain::NewsArticle, broken, (dir / "o.jsonl").string());
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(cmd_ingest("news", Domain::NewsArticle, (dir / "none.jsonl").string(), (dir / "o.jsonl").string()),
                 ParseError);
    const auto notarget = write_text(dir / "t.jsonl", R"({"id": "x", "sentences": ["A."], "question": "q"})");
    EXPECT_THROW(cmd_ingest("news", Domain::NewsArticle, notarget, (dir / "o.jsonl").string()), ParseError);
}

// ---------------------------------------------------------------------------
// Run

TEST(Run, LexicalOfflineAndResume) {
    const auto dir = bt_test::temp_dir("run-lex");
    const auto cfg = lexical_config(dir);
    const auto first = cmd_run(cfg);
    EXPECT_EQ(first.scored, 15u);
    EXPECT_EQ(first.resumed, 0u);
    EXPECT_FALSE(first.failure_threshold_exceeded);
    EXPECT_TRUE(fs::exists(first.run_dir / "config.json"));
    EXPECT_TRUE(fs::exists(first.run_dir / "report.txt"));
    EXPECT_TRUE(fs::exists(first.run_dir / "report.csv"));
    EXPECT_TRUE(fs::exists(first.run_dir / "report.json"));
    EXPECT_TRUE(fs::exists(first.run_dir / "examples" / "bm25" / "lecture" / "lec-0.json"));
    const auto report = read_file(first.run_dir / "report.txt");
    EXPECT_EQ(cmd_report(first.run_dir), report);

    const auto second = cmd_run(cfg);
    EXPECT_EQ(second.run_dir, first.run_dir);
    EXPECT_EQ(second.scored, 0u);
    EXPECT_EQ(second.resumed, 15u);
    EXPECT_EQ(read_file(second.run_dir / "report.txt"), report);
}

TEST(Run, InterruptedResumeEqualsFullRun) {
    const auto dir = bt_test::temp_dir("run-interrupt");
    auto cfg = lexical_config(dir, 5);
    const auto full = cmd_run(cfg);
    const auto expected = artifacts(full.run_dir);
    const auto report = read_file(full.run_dir / "report.txt");
    // Simulate interruption: drop some artifacts and the reports.
    std::size_t removed = 0;
    for (const auto& [rel, _] : expected)
        if (removed++ % 2 == 0) fs::remove(full.run_dir / rel);
    fs::remove(full.run_dir / "report.txt");
    const auto resumed = cmd_run(cfg);
    EXPECT_EQ(resumed.scored, 8u);
    EXPECT_EQ(artifacts(resumed.run_dir), expected);
    EXPECT_EQ(read_file(resumed.run_dir / "report.txt"), report);
}

TEST(Run, SeedOnlyAffectsRandom) {
    const auto dir = bt_test::temp_dir("run-seed");
    auto cfg = lexical_config(dir, 5);
    const auto a = cmd_run(cfg);
    cfg.scorer.seed = 777;
    const auto b = cmd_run(cfg);
    ASSERT_NE(a.run_dir, b.run_dir);
    const auto aa = artifacts(a.run_dir), bb = artifacts(b.run_dir);
    ASSERT_EQ(aa.size(), bb.size());
    bool random_differs = false;
    for (const auto& [rel, content] : aa) {
        if (rel.rfind("examples/random", 0) == 0)
            random_differs = random_differs || content != bb.at(rel);
        else
            EXPECT_EQ(content, bb.at(rel)) << rel;
    }
    EXPECT_TRUE(random_differs);
}

TEST(Run, ConfigHashIgnoresOperationalFields) {
    const auto dir = bt_test::temp_dir("run-hash");
    auto cfg = lexical_config(dir);
    const auto h = cfg.config_hash();
    cfg.jobs = 8;
    cfg.cache_dir = "/elsewhere";
    cfg.server_addr = "127.0.0.1:1";
    cfg.out_dir = "x";
    EXPECT_EQ(cfg.config_hash(), h);
    cfg.scorer.bm25.k1 = 1.5;
    EXPECT_NE(cfg.config_hash(), h);
    cfg.scorer.bm25.k1 = 1.2;
    write_text(cfg.datasets[Domain::Lecture], serialize_dataset({Domain::Lecture, lecture_examples(4)}));
    EXPECT_NE(cfg.config_hash(), h);
}

TEST(Run, ValidationErrors) {
    RunConfig cfg;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.datasets[Domain::Lecture] = "x";
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.methods = {"nope"};
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Run, NeuralWithoutServerOrCacheFailsFast) {
    const auto dir = bt_test::temp_dir("run-preflight");
    auto cfg = lexical_config(dir);
    cfg.methods = {"bm25", "bi"};
    cfg.cache_dir = (dir / "empty-cache").string();
    EXPECT_THROW(cmd_run(cfg), Unavailable);
    EXPECT_FALSE(fs::exists(fs::path(cfg.out_dir)));
}

TEST(Run, NeuralMockAndCacheReplay) {
    const auto dir = bt_test::temp_dir("run-neural");
    auto cfg = lexical_config(dir, 4);
    cfg.methods = {"bi", "cross", "rerank", "ll-single", "ll-auto", "ll-ate", "llm-judge"};
    cfg.cache_dir = (dir / "cache").string();
    auto backend = mock::make_synthetic();
    {
        auto transport = std::make_shared<protocol::InProcessTransport>(backend);
        auto client = std::make_shared<ModelClient>(transport, std::make_shared<ScoreCache>(fs::path(cfg.cache_dir)));
        const auto s = cmd_run(cfg, client);
        EXPECT_EQ(s.scored, 28u);
        EXPECT_GT(s.stats.network_total(), 0u);
        EXPECT_FALSE(s.failure_threshold_exceeded);
    }
    const auto first_report = read_file(fs::path(cfg.out_dir) / ("run-" + cfg.config_hash()) / "report.txt");
    EXPECT_NE(first_report.find("N/A"), std::string::npos);

    cfg.out_dir = (dir / "out2").string();
    const auto replay = cmd_run(cfg);  // no server: everything must come from the cache
    EXPECT_EQ(replay.scored, 28u);
    EXPECT_EQ(replay.stats.network_total(), 0u);
    EXPECT_EQ(read_file(replay.run_dir / "report.txt"), first_report);
}

TEST(Run, JobsDoNotChangeResults) {
    const auto dir = bt_test::temp_dir("run-jobs");
    auto cfg = lexical_config(dir, 12);
    cfg.methods = {"random", "bm25", "bi", "ll-ate"};
    auto client = bt_test::client_over(mock::make_synthetic());
    const auto serial = cmd_run(cfg, client);
    const auto expected = artifacts(serial.run_dir);
    const auto report = read_file(serial.run_dir / "report.txt");
    cfg.out_dir = (dir / "parallel").string();
    cfg.jobs = 6;
    const auto parallel = cmd_run(cfg, bt_test::client_over(mock::make_synthetic()));
    EXPECT_EQ(artifacts(parallel.run_dir), expected);
    EXPECT_EQ(read_file(parallel.run_dir / "report.txt"), report);
}

TEST(Run, FailuresAndSkipsAccounted) {
    const auto dir = bt_test::temp_dir("run-fail");
    auto cfg = lexical_config(dir, 4);
    cfg.methods = {"llm-judge"};
    auto bad = std::make_shared<mock::RuleMock>();
    bad->generate_fn = [](const std::string&, int) { return std::string("no idea"); };
    const auto failing = cmd_run(cfg, bt_test::client_over(bad));
    EXPECT_EQ(failing.failed, 4u);
    EXPECT_TRUE(failing.failure_threshold_exceeded);
    const auto rep = load_run_report(failing.run_dir);
    EXPECT_EQ(rep.find("llm-judge", Domain::Lecture)->failed, 4u);
    EXPECT_EQ(rep.find("llm-judge", Domain::Lecture)->n, 4u);
    const auto art = nlohmann::json::parse(read_file(failing.run_dir / "examples" / "llm-judge" / "lecture" / "lec-0.json"));
    EXPECT_TRUE(art["ranking"].is_null());

    cfg.methods = {"bi"};
    auto transport = std::make_shared<protocol::InProcessTransport>(mock::make_synthetic());
    transport->set_available(false);
    auto down = std::make_shared<ModelClient>(transport, nullptr, ClientOptions{2, std::chrono::milliseconds(1)});
    const auto skipping = cmd_run(cfg, down);
    EXPECT_EQ(skipping.skipped, 4u);
    EXPECT_TRUE(skipping.failure_threshold_exceeded);
    EXPECT_TRUE(fs::exists(skipping.run_dir / "examples" / "bi" / "lecture" / "lec-0.skipped.json"));
    EXPECT_NE(read_file(skipping.run_dir / "report.txt").find("4 skipped"), std::string::npos);

    // Once the server is back, skipped examples are scored on resume.
    const auto recovered = cmd_run(cfg, bt_test::client_over(mock::make_synthetic()));
    EXPECT_EQ(recovered.scored, 4u);
    EXPECT_FALSE(recovered.failure_threshold_exceeded);
}

TEST(Run, FailureRateThreshold) {
    const auto dir = bt_test::temp_dir("run-rate");
    auto cfg = lexical_config(dir, 10);
    cfg.methods = {"llm-judge"};
    auto m = std::make_shared<mock::RuleMock>();
    m->generate_fn = [](const std::string& prompt, int) {
        return prompt.find("Student: why next week") != std::string::npos ? std::string("?") : std::string(R"([{"line number": 0}])");
    };
    cfg.max_failure_rate = 0.25;
    const auto s = cmd_run(cfg, bt_test::client_over(m));
    EXPECT_EQ(s.failed, 2u);
    EXPECT_FALSE(s.failure_threshold_exceeded);
    cfg.max_failure_rate = 0.1;
    EXPECT_TRUE(cmd_run(cfg, bt_test::client_over(m)).failure_threshold_exceeded);
}

TEST(Report, EmptyRunThrows) {
    const auto dir = bt_test::temp_dir("report-empty");
    write_atomic(dir / "config.json", "{}\n");
    EXPECT_THROW(cmd_report(dir), EmptyReport);
    EXPECT_THROW(cmd_report(dir / "missing"), std::runtime_error);
}

TEST(AnalysisCsv, Formats) {
    EXPECT_EQ(similarity_csv({{"a", 0.5, 0.75, 0.25}}).substr(0, 22), "example_id,gt,max,diff");
    LocationHistogram h{2, {1, 3}, {0.0, 1.0, 1.0, 1.0}};
    const auto loc = locations_csv(Domain::NewsArticle, h);
    EXPECT_EQ(loc.substr(0, loc.find('\n')), "domain,bin,bin_lo,bin_hi,count");
    EXPECT_NE(loc.find("news,1,0.5"), std::string::npos);
    std::map<CauseKey, std::vector<std::string>> g{{{"c", 10}, {"q1", "q2", "q3"}}};
    EXPECT_NE(groups_csv(g).find("c,10,3,q1;q2;q3"), std::string::npos);
}

TEST(Files, SlugAndAtomicWrite) {
    EXPECT_EQ(file_slug("lec-0"), "lec-0");
    const auto s = file_slug("a/b c");
    EXPECT_NE(s, file_slug("a_b_c"));
    EXPECT_EQ(s.find('/'), std::string::npos);
    const auto dir = bt_test::temp_dir("atomic");
    write_atomic(dir / "sub" / "f.txt", "hello");
    EXPECT_EQ(read_file(dir / "sub" / "f.txt"), "hello");
    for (const auto& e : fs::directory_iterator(dir / "sub")) EXPECT_EQ(e.path().filename(), "f.txt");
}

TEST(Run, OverTcpServer) {
    const auto dir = bt_test::temp_dir("run-tcp");
    auto cfg = lexical_config(dir, 3);
    cfg.methods = {"cross", "ll-auto"};
    protocol::TcpLineServer server(mock::make_synthetic(), "127.0.0.1:0");
    server.start();
    cfg.server_addr = server.addr();
    const auto s = cmd_run(cfg);
    EXPECT_EQ(s.scored, 6u);
    EXPECT_EQ(s.skipped, 0u);
    EXPECT_GT(server.requests_served(), 0u);
    server.stop();
}
