#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace backtracing;
using bt_test::corpus;
using bt_test::example;

TEST(Segment, TwoClauses) {
    EXPECT_EQ(segment_document("A. B."), (std::vector<std::string>{"A.", "B."}));
}

TEST(Segment, NoTerminator) { EXPECT_EQ(segment_document("Hello"), (std::vector<std::string>{"Hello"})); }

TEST(Segment, Abbreviation) {
    EXPECT_EQ(segment_document("Dr. Smith left. He returned."),
              (std::vector<std::string>{"Dr. Smith left.", "He returned."}));
}

TEST(Segment, ExclamationQuestionAndQuotes) {
    EXPECT_EQ(segment_document("Really?! \"Yes.\" (Then) we go. 3 apples remain"),
              (std::vector<std::string>{"Really?!", "\"Yes.\"", "(Then) we go.", "3 apples remain"}));
}

TEST(Segment, LowercaseAfterPeriodDoesNotSplit) {
    EXPECT_EQ(segment_document("Use e.g. this one. And x = 3.5 works."),
              (std::vector<std::string>{"Use e.g. this one.", "And x = 3.5 works."}));
}

TEST(Segment, Empty) {
    EXPECT_THROW(segment_document(""), EmptyDocument);
    EXPECT_THROW(segment_document(" \n\t "), EmptyDocument);
}

TEST(Segment, ReconstructsModuloWhitespace) {
    std::mt19937_64 rng(7);
    const std::vector<std::string> words = {"The", "cat", "sat.", "Dr.", "Who?", "It", "ran!", "9", "x.", "e.g.", "\"Go.\""};
    const auto squash = [](std::string_view s) {
        std::string out;
        for (char c : s)
            if (!text::is_space(c)) out.push_back(c);
        return out;
    };
    for (int iter = 0; iter < 500; ++iter) {
        std::string raw;
        const int n = 1 + static_cast<int>(rng() % 12);
        for (int w = 0; w < n; ++w) {
            raw += words[rng() % words.size()];
            raw += (rng() % 4 == 0) ? "\n  " : " ";
        }
        const auto segs = segment_document(raw);
        ASSERT_GE(segs.size(), 1u);
        for (const auto& s : segs) ASSERT_FALSE(text::trim(s).empty());
        EXPECT_EQ(squash(text::join(segs, " ")), squash(raw)) << raw;
    }
}

TEST(Validate, Cases) {
    EXPECT_NO_THROW(validate_example(example("a", corpus(bt_test::numbered(5)), "q", {0})));
    EXPECT_THROW(validate_example(example("b", corpus(bt_test::numbered(5)), "q", {})), ValidationError);
    EXPECT_THROW(validate_example(example("c", corpus(bt_test::numbered(10)), "q", {0, 1, 2, 3, 4, 5})),
                 ValidationError);
    EXPECT_NO_THROW(validate_example(example("d", corpus(bt_test::numbered(10)), "q", {0, 1, 2, 3, 4})));
    EXPECT_THROW(validate_example(example("e", corpus(bt_test::numbered(5)), "q", {5})), ValidationError);
    EXPECT_THROW(validate_example(example("f", corpus(bt_test::numbered(5)), "  ", {1})), ValidationError);
    EXPECT_THROW(validate_example(example("g", Corpus{"c", Domain::Lecture, {}}, "q", {0})), ValidationError);
}

TEST(Validate, OneDiagnosticPerViolation) {
    auto ex = example("multi", corpus({"a", " "}), "", {});
    const auto diags = diagnose_example(ex);
    EXPECT_EQ(diags.size(), 3u);
    try {
        validate_example(ex);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.example_id(), "multi");
        EXPECT_EQ(e.diagnostics(), diags);
    }
}

TEST(Validate, ConversationNeedsSpeakers) {
    auto ex = example("c1", corpus({"hi", "there"}, Domain::Conversation), "q", {0});
    EXPECT_NO_THROW(validate_example(ex));
    ex.corpus.sentences[1].speaker.reset();
    EXPECT_THROW(validate_example(ex), ValidationError);
}

namespace {

std::string record(const std::string& id, const std::string& targets, const std::string& domain = "lecture") {
    return R"({"example_id":")" + id + R"(","domain":")" + domain +
           R"(","sentences":[{"text":"One."},{"text":"Two."},{"text":"Three."}],"query":{"text":"Why?"},"targets":)" +
           targets + "}";
}

}  // namespace

TEST(Dataset, ParsesAndRoundTrips) {
    std::istringstream in(record("a", "[0]") + "\n\n" + record("b", "[1,2]") + "\n");
    const auto ds = parse_dataset(in, Domain::Lecture, "mem");
    ASSERT_EQ(ds.examples.size(), 2u);
    EXPECT_EQ(ds.examples[1].targets, (std::set<std::size_t>{1, 2}));
    EXPECT_EQ(ds.examples[0].corpus.id, ds.examples[1].corpus.id);
    std::istringstream again(serialize_dataset(ds));
    EXPECT_EQ(parse_dataset(again, Domain::Lecture, "mem2"), ds);
}

TEST(Dataset, ConversationRoundTrip) {
    auto ex = example("c", corpus({"Hi.", "Héllo ünïcode ✓"}, Domain::Conversation), "Ugh", {1});
    Dataset ds{Domain::Conversation, {ex}};
    std::istringstream in(serialize_dataset(ds));
    EXPECT_EQ(parse_dataset(in, Domain::Conversation, "mem"), ds);
}

TEST(Dataset, TargetEqualToNIsValidationError) {
    std::istringstream in(record("a", "[0]") + "\n" + record("bad", "[3]") + "\n");
    try {
        parse_dataset(in, Domain::Lecture, "mem");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.example_id(), "bad");
    }
}

TEST(Dataset, MalformedRecordReportsLine) {
    std::istringstream in(record("a", "[0]") + "\n{not json\n");
    try {
        parse_dataset(in, Domain::Lecture, "file.jsonl");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_NE(std::string(e.what()).find("file.jsonl"), std::string::npos);
    }
    std::istringstream missing(R"({"example_id":"x","domain":"lecture","sentences":[],"query":{"text":"q"}})");
    EXPECT_THROW(parse_dataset(missing, Domain::Lecture, "m"), ParseError);
}

TEST(Dataset, RejectsDomainMismatchAndDuplicates) {
    std::istringstream wrong(record("a", "[0]", "news"));
    EXPECT_THROW(parse_dataset(wrong, Domain::Lecture, "m"), ValidationError);
    std::istringstream dup(record("a", "[0]") + "\n" + record("a", "[1]"));
    EXPECT_THROW(parse_dataset(dup, Domain::Lecture, "m"), ValidationError);
    std::istringstream duptarget(record("a", "[1,1]"));
    EXPECT_THROW(parse_dataset(duptarget, Domain::Lecture, "m"), ValidationError);
}

TEST(Dataset, LoadFromFile) {
    const auto dir = bt_test::temp_dir("core");
    const auto path = (dir / "d.jsonl").string();
    std::ofstream(path) << record("a", "[0]") << "\n";
    EXPECT_EQ(load_dataset(path, Domain::Lecture).examples.size(), 1u);
    EXPECT_THROW(load_dataset((dir / "missing.jsonl").string(), Domain::Lecture), ParseError);
}

TEST(Domain, Names) {
    for (auto d : kAllDomains) EXPECT_EQ(parse_domain(domain_name(d)), d);
    EXPECT_FALSE(parse_domain("sight").has_value());
}

TEST(Text, Utf8AndTokens) {
    EXPECT_EQ(text::decode_utf8("aé€😀"), (std::u32string{U'a', U'é', U'€', U'\U0001F600'}));
    EXPECT_EQ(text::decode_utf8("\xff"), std::u32string{U'\uFFFD'});
    EXPECT_EQ(text::word_tokens("The cat's HAT, 42!"), (std::vector<std::string>{"the", "cat", "s", "hat", "42"}));
    EXPECT_EQ(text::normalize_newlines("a\r\nb\rc"), "a\nb\nc");
}

TEST(Ranking, OrderAndTies) {
    const auto r = make_ranking("m", {1.0, 3.0, 3.0, std::nan(""), kUnscored, 2.0});
    EXPECT_EQ(r.order, (std::vector<std::size_t>{1, 2, 5, 0, 3, 4}));
    EXPECT_TRUE(is_valid_order(r));
}

TEST(Ranking, FromHeadAndJson) {
    auto r = ranking_from_head("judge", 5, {3, 1});
    EXPECT_EQ(r.order, (std::vector<std::size_t>{3, 1, 0, 2, 4}));
    EXPECT_TRUE(is_valid_order(r));
    r.excluded = {4};
    r.top1_only = true;
    r.components["x"] = {1, 2, 3, 4, 5};
    const auto back = ranking_from_json(nlohmann::json::parse(ranking_to_json(r).dump()));
    EXPECT_EQ(back, r);
}
