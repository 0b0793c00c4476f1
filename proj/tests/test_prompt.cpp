#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "tvlab/prompt.hpp"

using namespace tvlab;

namespace {

TaskCorpus build_corpus() {
    TaskCorpus::Config cfg;
    cfg.seed = 3;
    cfg.vocab.colors = 8;
    cfg.vocab.animals = 10;
    cfg.vocab.fruits = 8;
    cfg.vocab.objects = 48;
    cfg.vocab.filler = 48;
    cfg.mapping_pairs = 24;
    cfg.dataset_size = 64;
    return TaskCorpus::build(cfg);
}

}  // namespace

TEST_CASE("zero-shot prompt grammar") {
    auto corpus = build_corpus();
    auto data = corpus.generate_dataset(corpus.spec("antonym"), 24, 1);
    auto layout = build_prompt(corpus.vocab(), "antonym", data, 0, data[0], false, 1);
    REQUIRE(layout.size() == 7);
    CHECK(layout.roles[0] == TokenRole::BOS);
    CHECK(layout.roles[1] == TokenRole::Q);
    CHECK(layout.roles[2] == TokenRole::COLON_AFTER_Q);
    CHECK(layout.roles[3] == TokenRole::QUERY_WORD);
    CHECK(layout.roles[4] == TokenRole::NEWLINE_BEFORE_A);
    CHECK(layout.roles[5] == TokenRole::A);
    CHECK(layout.roles[6] == TokenRole::COLON_PRE_ANSWER);
    CHECK(layout.tokens[3] == corpus.vocab().id_of(data[0].query[0]));
    CHECK(layout.example_index[3] == 0);
}

TEST_CASE("k-shot prompts end at the pre-answer colon and exclude the test query") {
    auto corpus = build_corpus();
    auto data = corpus.generate_dataset(corpus.spec("antonym"), 24, 1);
    for (int k : {1, 3, 8}) {
        auto layout = build_prompt(corpus.vocab(), "antonym", data, k, data[5], false, 9);
        CHECK(layout.roles.back() == TokenRole::COLON_PRE_ANSWER);
        CHECK(layout.example_index.back() == k);
        int colons = 0;
        for (auto r : layout.roles) {
            if (r == TokenRole::COLON_PRE_ANSWER) ++colons;
        }
        CHECK(colons == k + 1);
        auto decoded = decode_prompt(corpus.vocab(), layout);
        CHECK(decoded.final_query == data[5].query);
        CHECK(decoded.final_answer.empty());
        std::set<std::string> demo_queries;
        for (const auto& d : decoded.demos) {
            CHECK(d.query != data[5].query);
            CHECK(demo_queries.insert(d.query[0]).second);  // without replacement
            // demonstration answers are present and correct
            CHECK(d.answer == corpus.answer(corpus.spec("antonym"), d.query));
        }
    }
}

TEST_CASE("round trip recovers k, demonstrations, and the test query") {
    auto corpus = build_corpus();
    auto data = corpus.generate_dataset(corpus.spec("reverse_all_of_3"), 64, 2);
    auto layout = build_prompt(corpus.vocab(), "reverse_all_of_3", data, 4, data[7], false, 21);
    CHECK(layout.k == 4);
    auto decoded = decode_prompt(corpus.vocab(), layout);
    CHECK(decoded.demos.size() == 4);
    CHECK(decoded.final_query == data[7].query);
    for (const auto& d : decoded.demos) {
        CHECK(d.answer == corpus.answer(corpus.spec("reverse_all_of_3"), d.query));
    }
}

TEST_CASE("dummy prompts swap in a distinct final query") {
    auto corpus = build_corpus();
    auto data = corpus.generate_dataset(corpus.spec("antonym"), 24, 1);
    auto layout = build_prompt(corpus.vocab(), "antonym", data, 6, data[2], true, 77);
    CHECK(layout.dummy);
    CHECK(layout.test_query.query == data[2].query);  // the graded query is kept
    auto decoded = decode_prompt(corpus.vocab(), layout);
    for (const auto& d : decoded.demos) {
        CHECK(d.query != decoded.final_query);
    }
    CHECK(decoded.final_answer.empty());
}

TEST_CASE("token count is affine in k for fixed arity") {
    auto corpus = build_corpus();
    auto data = corpus.generate_dataset(corpus.spec("count_color_in_3"), 64, 1);
    std::vector<size_t> sizes;
    for (int k : {0, 1, 2, 3, 4}) {
        sizes.push_back(build_prompt(corpus.vocab(), "count_color_in_3", data, k, data[0], false, 5).size());
    }
    const size_t slope = sizes[1] - sizes[0];
    for (size_t i = 1; i < sizes.size(); ++i) {
        CHECK(sizes[i] - sizes[i - 1] == slope);
    }
}

TEST_CASE("k exceeding the available pairs is an error") {
    auto corpus = build_corpus();
    auto data = corpus.generate_dataset(corpus.spec("antonym"), 24, 1);
    CHECK_THROWS_AS(build_prompt(corpus.vocab(), "antonym", data, 24, data[0], false, 1), Error);
    CHECK_THROWS_AS(build_prompt(corpus.vocab(), "antonym", data, 23, data[0], true, 1), Error);
    CHECK_NOTHROW(build_prompt(corpus.vocab(), "antonym", data, 23, data[0], false, 1));
}

TEST_CASE("locate_role addresses format tokens") {
    auto corpus = build_corpus();
    auto data = corpus.generate_dataset(corpus.spec("antonym"), 24, 1);
    auto layout = build_prompt(corpus.vocab(), "antonym", data, 1, data[0], false, 2);
    CHECK(locate_role(layout, TokenRole::COLON_PRE_ANSWER, layout.k) == layout.size() - 1);
    CHECK(locate_role(layout, TokenRole::Q, 0) == 1);
    CHECK_THROWS_AS(locate_role(layout, TokenRole::NEWLINE_BEFORE_A, 2), Error);
    CHECK_THROWS_AS(locate_role(layout, TokenRole::NEWLINE_AFTER_ANSWER, 1), Error);
}

TEST_CASE("grading is exact match per unit") {
    auto r = grade({"rise", "nobody", "broken"}, {"rise", "nobody", "broken"});
    CHECK(r.mean == doctest::Approx(1.0));
    r = grade({"rise", "somebody", "broken"}, {"rise", "nobody", "broken"});
    CHECK(r.mean == doctest::Approx(2.0 / 3.0));
    CHECK(r.unit_correct == std::vector<uint8_t>{1, 0, 1});
    r = grade({}, {"x"});
    CHECK(r.mean == 0.0);
    // surplus ignored
    r = grade({"a", "b", "c"}, {"a"});
    CHECK(r.mean == 1.0);
    // grade(x, x) == 1 for any list
    for (const auto& units : std::vector<std::vector<std::string>>{{}, {"q"}, {"a", "b"}}) {
        CHECK(grade(units, units).mean == 1.0);
    }
}

TEST_CASE("detokenize splits on commas and stops at newline") {
    auto corpus = build_corpus();
    const auto& v = corpus.vocab();
    const TokenId w1 = v.category("colors")[0];
    const TokenId w2 = v.category("animals")[0];
    auto units = detokenize(v, {w1, TOK_COMMA, w2, TOK_NEWLINE});
    CHECK(units == std::vector<std::string>{v.word_of(w1), v.word_of(w2)});
    units = detokenize(v, {w1, TOK_NEWLINE, w2});
    CHECK(units == std::vector<std::string>{v.word_of(w1)});
    // a lone comma yields two empty units, neither of which can be correct
    units = detokenize(v, {TOK_COMMA});
    CHECK(units == std::vector<std::string>{"", ""});
    CHECK(grade(units, {"x"}).mean == 0.0);
    CHECK_THROWS_AS(detokenize(v, {static_cast<TokenId>(99999)}), Error);
}

TEST_CASE("prompt text rendering") {
    auto corpus = build_corpus();
    auto data = corpus.generate_dataset(corpus.spec("antonym"), 24, 1);
    std::vector<QAPair> demos = {data[0]};
    auto layout = compose_prompt(corpus.vocab(), "antonym", demos, data[1], false);
    std::string expected = "Q: " + data[0].query[0] + "\nA: " + data[0].answer[0] + "\nQ: " +
                           data[1].query[0] + "\nA:";
    CHECK(render_prompt_text(corpus.vocab(), layout) == expected);
}

TEST_CASE("answer loss mask covers answers, answer commas, and answer newlines") {
    auto corpus = build_corpus();
    auto data = corpus.generate_dataset(corpus.spec("reverse_all_of_3"), 32, 2);
    auto layout = compose_prompt(corpus.vocab(), "reverse_all_of_3", {data[0]}, data[1], true);
    auto mask = answer_loss_mask(layout);
    REQUIRE(mask.size() == layout.size() - 1);
    for (size_t t = 0; t + 1 < layout.size(); ++t) {
        const TokenRole next = layout.roles[t + 1];
        bool expect = next == TokenRole::ANSWER_WORD || next == TokenRole::NEWLINE_AFTER_ANSWER ||
                      (next == TokenRole::COMMA && layout.roles[t] == TokenRole::ANSWER_WORD);
        CHECK(mask[t] == (expect ? 1 : 0));
    }
    // each example contributes 3 answer words + 2 commas + 1 newline
    size_t count = 0;
    for (auto m : mask) count += m;
    CHECK(count == 2 * 6);
}
