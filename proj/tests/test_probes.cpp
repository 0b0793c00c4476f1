#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tvlab/probes.hpp"

using namespace tvlab;

namespace {

// Orthogonal class offsets plus small noise: linearly separable by a wide
// margin (offset distance 2.0 against noise radius << 1).
ProbeDataset separable_dataset(int n_classes, int n_per_class, int dim, uint64_t seed) {
    ProbeDataset ds;
    for (int c = 0; c < n_classes; ++c) ds.labels.push_back("task" + std::to_string(c));
    Rng rng(seed);
    for (int c = 0; c < n_classes; ++c) {
        for (int i = 0; i < n_per_class; ++i) {
            Eigen::VectorXf x = Eigen::VectorXf::Zero(dim);
            x(c) = 2.0f;
            for (int d = 0; d < dim; ++d) x(d) += 0.05f * static_cast<float>(rng.normal());
            ds.examples.push_back({x, c});
        }
    }
    return ds;
}

double min_margin(const ProbeDataset& ds, int n_classes) {
    // direct margin check: along axis c, class-c points sit above all others
    double margin = 1e30;
    for (int c = 0; c < n_classes; ++c) {
        double own_min = 1e30, other_max = -1e30;
        for (const auto& e : ds.examples) {
            const double v = e.x(c);
            if (e.label == c) {
                own_min = std::min(own_min, v);
            } else {
                other_max = std::max(other_max, v);
            }
        }
        margin = std::min(margin, own_min - other_max);
    }
    return margin;
}

}  // namespace

TEST_CASE("separable synthetic data decodes perfectly") {
    auto ds = separable_dataset(6, 40, 16, 3);
    CHECK(min_margin(ds, 6) > 0.5);  // separability verified independently
    auto probe = train_probe(ds, 20, 64, 0.05, 0.25, 1);
    CHECK(probe.test_accuracy == 1.0);
    CHECK(probe.test_count == 6 * 10);
    CHECK(probe.train_count == 6 * 30);
}

TEST_CASE("shuffled labels decode at chance level") {
    const int n_classes = 5;
    auto base = separable_dataset(n_classes, 40, 16, 7);
    double mean_acc = 0.0;
    const int n_seeds = 10;
    for (int s = 0; s < n_seeds; ++s) {
        auto ds = base;
        Rng rng(derive_seed(100, "shuffle", "", static_cast<uint64_t>(s)));
        // permute labels while keeping the label multiset balanced
        std::vector<int> labels;
        for (const auto& e : ds.examples) labels.push_back(e.label);
        rng.shuffle(labels);
        for (size_t i = 0; i < ds.examples.size(); ++i) ds.examples[i].label = labels[i];
        auto probe = train_probe(ds, 20, 64, 0.05, 0.25, static_cast<uint64_t>(s));
        mean_acc += probe.test_accuracy;
    }
    mean_acc /= n_seeds;
    CHECK(std::abs(mean_acc - 1.0 / n_classes) < 0.05);  // within 5 points of chance
}

TEST_CASE("zero epochs yields the untrained baseline") {
    auto ds = separable_dataset(4, 20, 8, 5);
    auto probe = train_probe(ds, 0, 64, 0.05, 0.25, 2);
    CHECK(probe.weight.isZero());
    CHECK(probe.bias.isZero());
    // all-zero scores: argmax ties resolve to label 0, so accuracy = 1/classes
    CHECK(probe.test_accuracy == doctest::Approx(0.25));
}

TEST_CASE("probe training is bit-deterministic per seed") {
    auto ds = separable_dataset(4, 24, 8, 9);
    auto a = train_probe(ds, 10, 32, 0.02, 0.25, 77);
    auto b = train_probe(ds, 10, 32, 0.02, 0.25, 77);
    CHECK(a.weight == b.weight);
    CHECK(a.bias == b.bias);
    auto c = train_probe(ds, 10, 32, 0.02, 0.25, 78);
    CHECK(a.weight != c.weight);
}

TEST_CASE("stratified holdout and balance enforcement") {
    auto ds = separable_dataset(3, 20, 8, 11);
    auto probe = train_probe(ds, 1, 16, 0.01, 0.25, 1);
    CHECK(probe.test_count == 15);  // 5 per class exactly

    ds.examples.pop_back();  // unbalanced now
    CHECK_THROWS_AS(train_probe(ds, 1, 16, 0.01, 0.25, 1), Error);

    ProbeDataset single;
    single.labels = {"only"};
    single.examples.push_back({Eigen::VectorXf::Zero(4), 0});
    CHECK_THROWS_AS(train_probe(single, 1, 16, 0.01, 0.25, 1), Error);
}

TEST_CASE("activation collection is balanced and matches the extraction path") {
    TaskCorpus::Config cc;
    cc.seed = 3;
    cc.vocab.colors = 8;
    cc.vocab.animals = 10;
    cc.vocab.fruits = 8;
    cc.vocab.objects = 40;
    cc.vocab.filler = 40;
    cc.mapping_pairs = 20;
    cc.dataset_size = 20;
    auto corpus = TaskCorpus::build(cc);
    ModelConfig mc;
    mc.n_layers = 2;
    mc.d_model = 32;
    mc.n_heads = 2;
    mc.context_len = 256;
    mc.vocab_size = static_cast<int>(corpus.vocab().size());
    auto model = init_model(mc, 17);

    auto ds = collect_activations(model, corpus, {"antonym", "english-french", "word_length"},
                                  TokenRole::COLON_PRE_ANSWER, 1, 6, 2, 13, 2);
    CHECK(ds.examples.size() == 18);
    std::map<int, int> counts;
    for (const auto& e : ds.examples) counts[e.label] += 1;
    for (const auto& [label, count] : counts) CHECK(count == 6);

    // same tap path as extract_task_vector for an identical prompt
    auto data = corpus.generate_dataset(corpus.spec("antonym"), 20, 0);
    const uint64_t prompt_seed = derive_seed(13, "probe-prompt", "antonym", 0);
    auto layout = build_prompt(corpus.vocab(), "antonym", data, 2, data[0], true, prompt_seed);
    auto tv = extract_task_vector(model, layout, 1, TokenRole::COLON_PRE_ANSWER, 2, prompt_seed);
    CHECK(ds.examples[0].x == tv.values);
}

TEST_CASE("decode grid has one cell per (layer, role instance)") {
    TaskCorpus::Config cc;
    cc.seed = 19;
    cc.vocab.colors = 8;
    cc.vocab.animals = 10;
    cc.vocab.fruits = 8;
    cc.vocab.objects = 40;
    cc.vocab.filler = 40;
    cc.mapping_pairs = 20;
    cc.dataset_size = 20;
    auto corpus = TaskCorpus::build(cc);
    ModelConfig mc;
    mc.n_layers = 2;
    mc.d_model = 32;
    mc.n_heads = 2;
    mc.context_len = 256;
    mc.vocab_size = static_cast<int>(corpus.vocab().size());
    auto model = init_model(mc, 23);

    const std::vector<TokenRole> roles = {TokenRole::Q, TokenRole::COLON_PRE_ANSWER};
    auto grid = decode_grid(model, corpus, {"antonym", "english-french"}, {0, 1, 2}, roles, 1, 8,
                            3, 2);
    CHECK(grid.cells.size() == 3 * 2 * 2);  // layers x roles x examples(0..1)
    CHECK(grid.chance == doctest::Approx(0.5));
    for (const auto& cell : grid.cells) {
        CHECK(cell.accuracy.has_value());
    }
}
