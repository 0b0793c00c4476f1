#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tvlab/experiments.hpp"

using namespace tvlab;

namespace {

struct Fixture {
    TaskCorpus corpus;
    Model model;

    static Fixture make() {
        TaskCorpus::Config cc;
        cc.seed = 29;
        cc.vocab.colors = 8;
        cc.vocab.animals = 10;
        cc.vocab.fruits = 8;
        cc.vocab.objects = 40;
        cc.vocab.filler = 40;
        cc.mapping_pairs = 20;
        cc.dataset_size = 20;
        auto corpus = TaskCorpus::build(cc);
        ModelConfig mc;
        mc.n_layers = 3;
        mc.d_model = 32;
        mc.n_heads = 4;
        mc.context_len = 320;
        mc.vocab_size = static_cast<int>(corpus.vocab().size());
        auto model = init_model(mc, 31);
        return {std::move(corpus), std::move(model)};
    }
};

}  // namespace

TEST_CASE("candidate layer grids") {
    CHECK(candidate_layers(8, 2, 3) == std::vector<int>{2, 5, 8});
    CHECK(candidate_layers(3, 0, 1) == std::vector<int>{0, 1, 2, 3});
    CHECK(candidate_layers(8, 8, 3) == std::vector<int>{8});
    CHECK_THROWS_AS(candidate_layers(8, 9, 3), Error);
}

TEST_CASE("argmax over layers breaks ties toward the lower layer") {
    CHECK(argmax_layer({{2, 0.5}, {5, 0.7}, {8, 0.6}}) == 5);
    CHECK(argmax_layer({{2, 0.7}, {5, 0.7}, {8, 0.6}}) == 2);
    CHECK(argmax_layer({{4, 0.1}}) == 4);
    // invariant under any positive rescaling
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::pair<int, double>> table;
        for (int l = 0; l < 6; ++l) table.emplace_back(l, rng.real());
        const double scale = 0.1 + 5.0 * rng.real();
        auto scaled = table;
        for (auto& [l, acc] : scaled) acc *= scale;
        CHECK(argmax_layer(table) == argmax_layer(scaled));
    }
}

TEST_CASE("mode layer: most frequent, ties toward the lower layer") {
    CHECK(mode_layer({5, 5, 8}) == 5);
    CHECK(mode_layer({5, 5, 8, 8}) == 5);
    CHECK(mode_layer({7}) == 7);
    CHECK_THROWS_AS(mode_layer({}), Error);
}

TEST_CASE("layer search returns the argmax layer with a full table") {
    auto f = Fixture::make();
    auto data = f.corpus.generate_dataset(f.corpus.spec("antonym"), 20, 1);
    auto split = split_dev_eval(data, 6, 2);
    auto result = layer_search(f.model, f.corpus, "antonym", TokenRole::COLON_PRE_ANSWER, 3, data,
                               split.dev, candidate_layers(3), 7, 2);
    CHECK(result.table.size() == 4);
    CHECK(result.records.size() == 4 * split.dev.size());
    CHECK(result.best_layer == argmax_layer(result.table));
    // single candidate is returned regardless of accuracy
    auto single = layer_search(f.model, f.corpus, "antonym", TokenRole::COLON_PRE_ANSWER, 3, data,
                               split.dev, {2}, 7, 2);
    CHECK(single.best_layer == 2);
}

TEST_CASE("k-shot sweep: cells, ratio conventions, and record completeness") {
    auto f = Fixture::make();
    auto data = f.corpus.generate_dataset(f.corpus.spec("antonym"), 20, 1);
    Dataset eval_set(data.begin(), data.begin() + 5);
    auto result = k_shot_sweep(f.model, f.corpus, "antonym", {0, 1, 2}, 1,
                               TokenRole::COLON_PRE_ANSWER, data, eval_set, 3, 2);
    REQUIRE(result.cells.size() == 3);
    for (const auto& cell : result.cells) {
        CHECK(cell.zero == result.cells[0].zero);  // zero setting is k-independent
        if (cell.few == 0.0) {
            CHECK(cell.ratio == 0.0);  // x/0 -> 0 by convention
        } else {
            CHECK(cell.ratio == doctest::Approx(cell.recon / cell.few));
        }
    }
    // an untrained model scores 0 somewhere; the warning list reflects any 0-few cells
    size_t zero_few = 0;
    for (const auto& cell : result.cells) {
        if (cell.few == 0.0) ++zero_few;
    }
    CHECK(result.warnings.size() == zero_few);
    // records: zero once + (few + recon) per k
    CHECK(result.records.size() == eval_set.size() * (1 + 2 * 3));
}

TEST_CASE("hard-to-transfer flag thresholds strictly below") {
    SweepResult sweep;
    sweep.task = "t";
    sweep.cells = {{32, 0.1, 0.49, 1.0, 0.49}};
    CHECK(flag_hard_to_transfer(sweep, 0.5, 32));
    sweep.cells = {{32, 0.1, 0.50, 1.0, 0.50}};
    CHECK_FALSE(flag_hard_to_transfer(sweep, 0.5, 32));
    sweep.cells = {{8, 0.1, 0.2, 0.9, 0.22}};
    CHECK_THROWS_AS(flag_hard_to_transfer(sweep, 0.5, 32), Error);
}

TEST_CASE("locality grid covers every (layer, role, example) with nulls where absent") {
    auto f = Fixture::make();
    auto data = f.corpus.generate_dataset(f.corpus.spec("antonym"), 20, 1);
    auto split = split_dev_eval(data, 4, 2);
    const int k = 2;
    auto result = token_locality_grid(f.model, f.corpus, "antonym", k, data, split.dev,
                                      Dataset(split.eval.begin(), split.eval.begin() + 4),
                                      candidate_layers(3), 5, 2);
    const size_t n_layers = 4, n_roles = 5, n_examples = static_cast<size_t>(k) + 1;
    CHECK(result.cells.size() == n_layers * n_roles * n_examples);
    for (const auto& cell : result.cells) {
        CHECK(cell.dev_accuracy.has_value());  // at k=2 every grid locus exists
    }
    CHECK(result.roles.size() == n_roles);
    CHECK(result.grid_records.size() == n_layers * n_roles * n_examples * split.dev.size());

    // at k=0, only example 0 exists; other columns are explicit nulls
    auto zero = token_locality_grid(f.model, f.corpus, "antonym", 0, data, split.dev,
                                    Dataset(split.eval.begin(), split.eval.begin() + 2),
                                    candidate_layers(3), 5, 2);
    for (const auto& cell : zero.cells) {
        CHECK(cell.example == 0);
        CHECK(cell.dev_accuracy.has_value());
    }
}

TEST_CASE("per-unit decay conditions on fully correct few-shot responses") {
    auto f = Fixture::make();
    auto data = f.corpus.generate_dataset(f.corpus.spec("reverse_all_of_3"), 40, 1);
    Dataset eval_set(data.begin(), data.begin() + 8);
    auto result = per_unit_decay(f.model, f.corpus, "reverse_all_of_3", 2, 1, data, eval_set, 3, 2);
    CHECK(result.few_records.size() == eval_set.size());
    size_t fully_correct = 0;
    for (const auto& r : result.few_records) {
        bool full = true;
        for (auto c : r.unit_correct) {
            if (!c) full = false;
        }
        if (full) ++fully_correct;
    }
    CHECK(result.conditioning_size == fully_correct);
    if (fully_correct == 0) {
        CHECK_FALSE(result.defined);  // explicit undefined, not zeros
        CHECK(result.per_unit.empty());
    } else {
        CHECK(result.defined);
        CHECK(result.per_unit.size() == 3);
    }
    // single-unit tasks are rejected
    CHECK_THROWS_AS(per_unit_decay(f.model, f.corpus, "antonym", 2, 1, data, eval_set, 3, 2),
                    Error);
}

TEST_CASE("locality rejects content-word roles by construction") {
    // the grid roles are fixed format tokens; ANSWER_WORD is not among them
    for (TokenRole role : locality_roles()) {
        CHECK(role != TokenRole::ANSWER_WORD);
        CHECK(role != TokenRole::QUERY_WORD);
    }
    CHECK(locality_roles().size() == 5);
}
