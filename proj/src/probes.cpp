#include "tvlab/probes.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include <nlohmann/json.hpp>

namespace tvlab {

using nlohmann::json;

namespace {

// Collects activations for several loci in one pass; loci absent from the
// prompt grammar are skipped (reported back as missing).
struct LocusKey {
    int layer;
    TokenRole role;
    int example;
    bool operator<(const LocusKey& o) const {
        return std::tie(layer, role, example) < std::tie(o.layer, o.role, o.example);
    }
};

}  // namespace

ProbeDataset collect_activations(const Model& model, const TaskCorpus& corpus,
                                 const std::vector<std::string>& tasks, TokenRole role, int layer,
                                 int n_per_task, int k, uint64_t seed, size_t workers,
                                 int example_index) {
    check(!tasks.empty(), "collect_activations: no tasks");
    check(n_per_task >= 1, "collect_activations: n_per_task must be >= 1");
    const int ex = example_index < 0 ? k : example_index;
    ProbeDataset out;
    out.labels = tasks;
    out.layer = layer;
    out.role = role;
    out.example_index = ex;
    out.k = k;
    out.examples.resize(tasks.size() * static_cast<size_t>(n_per_task));

    const auto& vocab = corpus.vocab();
    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        const auto& task = tasks[ti];
        const auto& spec = corpus.spec(task);
        Dataset data = corpus.generate_dataset(spec, corpus.dataset_size_for(spec), 0);

        // distinct prompts: re-derive on collision, bounded attempts
        std::vector<PromptLayout> prompts;
        std::set<uint64_t> prompt_hashes;
        uint64_t attempt = 0;
        while (prompts.size() < static_cast<size_t>(n_per_task)) {
            check(attempt < 16 * static_cast<uint64_t>(n_per_task) + 64,
                  "task '" + task + "': cannot build " + std::to_string(n_per_task) +
                      " distinct prompts");
            const uint64_t prompt_seed = derive_seed(seed, "probe-prompt", task, attempt);
            ++attempt;
            auto layout = build_prompt(vocab, task, data, k, data[0], true, prompt_seed);
            const uint64_t h = fnv1a64_bytes(layout.tokens.data(),
                                             layout.tokens.size() * sizeof(TokenId));
            if (!prompt_hashes.insert(h).second) continue;
            prompts.push_back(std::move(layout));
        }

        parallel_for(prompts.size(), workers, [&](size_t i) {
            auto tv = extract_task_vector(model, prompts[i], layer, role, ex, 0);
            out.examples[ti * static_cast<size_t>(n_per_task) + i] = {std::move(tv.values),
                                                                      static_cast<int>(ti)};
        });
    }
    return out;
}

namespace {

int predict(const LinearProbe& probe, const Eigen::VectorXf& x) {
    Eigen::VectorXf scores = probe.weight * x + probe.bias;
    Eigen::Index best = 0;
    scores.maxCoeff(&best);  // ties resolve to the lowest index
    return static_cast<int>(best);
}

}  // namespace

double probe_accuracy(const LinearProbe& probe, const std::vector<ProbeExample>& examples) {
    if (examples.empty()) return 0.0;
    size_t correct = 0;
    for (const auto& e : examples) {
        if (predict(probe, e.x) == e.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

LinearProbe train_probe(const ProbeDataset& dataset, int epochs, int batch, double lr,
                        double holdout, uint64_t seed) {
    check(!dataset.examples.empty(), "train_probe: empty dataset");
    const auto n_labels = static_cast<int>(dataset.labels.size());
    check(n_labels >= 2, "train_probe: needs at least 2 classes");
    check(holdout > 0.0 && holdout < 1.0, "train_probe: holdout must be in (0, 1)");
    const auto d = static_cast<int>(dataset.examples.front().x.size());

    // balance check + stratified split
    std::vector<std::vector<size_t>> by_label(static_cast<size_t>(n_labels));
    for (size_t i = 0; i < dataset.examples.size(); ++i) {
        const int label = dataset.examples[i].label;
        check(label >= 0 && label < n_labels, "train_probe: label out of range");
        by_label[static_cast<size_t>(label)].push_back(i);
    }
    for (const auto& idx : by_label) {
        check(idx.size() == by_label.front().size(),
              "train_probe: dataset is not balanced across tasks");
        check(!idx.empty(), "train_probe: a class has no examples");
    }

    Rng rng(derive_seed(seed, "probe-train"));
    std::vector<size_t> train_idx, test_idx;
    for (auto& idx : by_label) {
        rng.shuffle(idx);
        const auto h = static_cast<size_t>(
            std::llround(holdout * static_cast<double>(idx.size())));
        for (size_t i = 0; i < idx.size(); ++i) {
            (i < h ? test_idx : train_idx).push_back(idx[i]);
        }
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    LinearProbe probe;
    probe.weight = Eigen::MatrixXf::Zero(n_labels, d);
    probe.bias = Eigen::VectorXf::Zero(n_labels);
    probe.epochs = epochs;
    probe.batch = batch;
    probe.lr = lr;
    probe.seed = seed;
    probe.train_count = train_idx.size();
    probe.test_count = test_idx.size();

    Eigen::MatrixXf dW(n_labels, d);
    Eigen::VectorXf db(n_labels);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(train_idx);
        for (size_t start = 0; start < train_idx.size(); start += static_cast<size_t>(batch)) {
            const size_t count = std::min<size_t>(static_cast<size_t>(batch), train_idx.size() - start);
            dW.setZero();
            db.setZero();
            for (size_t i = 0; i < count; ++i) {
                const auto& e = dataset.examples[train_idx[start + i]];
                Eigen::VectorXf scores = probe.weight * e.x + probe.bias;
                const float mx = scores.maxCoeff();
                Eigen::VectorXf p = (scores.array() - mx).exp();
                p /= p.sum();
                p(e.label) -= 1.0f;
                dW.noalias() += p * e.x.transpose();
                db += p;
            }
            const float scale = static_cast<float>(lr) / static_cast<float>(count);
            probe.weight.noalias() -= scale * dW;
            probe.bias -= scale * db;
        }
    }

    std::vector<ProbeExample> test;
    for (size_t i : test_idx) test.push_back(dataset.examples[i]);
    probe.test_accuracy = probe_accuracy(probe, test);
    return probe;
}

ProbeGrid decode_grid(const Model& model, const TaskCorpus& corpus,
                      const std::vector<std::string>& tasks, const std::vector<int>& layers,
                      const std::vector<TokenRole>& roles, int k, int n_per_task, uint64_t seed,
                      size_t workers, std::vector<LinearProbe>* probes_out) {
    check(!tasks.empty() && !layers.empty() && !roles.empty(), "decode_grid: empty axis");
    ProbeGrid grid;
    grid.tasks = tasks;
    grid.k = k;
    grid.chance = 1.0 / static_cast<double>(tasks.size());

    // which (role, example) columns exist in this grammar
    std::vector<std::pair<TokenRole, int>> columns, missing;
    {
        const auto& spec = corpus.spec(tasks.front());
        Dataset data = corpus.generate_dataset(spec, corpus.dataset_size_for(spec), 0);
        auto probe_prompt =
            build_prompt(corpus.vocab(), tasks.front(), data, k, data[0], true, seed);
        for (TokenRole role : roles) {
            for (int ex = 0; ex <= k; ++ex) {
                (has_role(probe_prompt, role, ex) ? columns : missing).emplace_back(role, ex);
            }
        }
    }

    // all activations in one tapped pass per prompt
    struct CellData {
        std::vector<ProbeExample> examples;
    };
    std::vector<CellData> cell_data(layers.size() * columns.size());
    const auto cell_index = [&](size_t li, size_t ci) { return li * columns.size() + ci; };
    for (auto& c : cell_data) {
        c.examples.resize(tasks.size() * static_cast<size_t>(n_per_task));
    }

    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        const auto& task = tasks[ti];
        const auto& spec = corpus.spec(task);
        Dataset data = corpus.generate_dataset(spec, corpus.dataset_size_for(spec), 0);
        parallel_for(static_cast<size_t>(n_per_task), workers, [&](size_t i) {
            const uint64_t prompt_seed = derive_seed(seed, "grid-prompt", task, i);
            auto layout = build_prompt(corpus.vocab(), task, data, k, data[0], true, prompt_seed);
            auto vectors = extract_task_vectors(model, layout, layers, columns, prompt_seed);
            size_t vi = 0;
            for (size_t li = 0; li < layers.size(); ++li) {
                for (size_t ci = 0; ci < columns.size(); ++ci) {
                    cell_data[cell_index(li, ci)]
                        .examples[ti * static_cast<size_t>(n_per_task) + i] = {
                        std::move(vectors[vi++].values), static_cast<int>(ti)};
                }
            }
        });
    }

    // train one probe per cell
    std::vector<std::optional<double>> acc(cell_data.size());
    std::vector<LinearProbe> probes(cell_data.size());
    parallel_for(cell_data.size(), workers, [&](size_t idx) {
        ProbeDataset ds;
        ds.labels = tasks;
        ds.k = k;
        ds.examples = std::move(cell_data[idx].examples);
        probes[idx] = train_probe(ds, 20, 256, 0.01, 0.25, derive_seed(seed, "grid-cell", "", idx));
        acc[idx] = probes[idx].test_accuracy;
    });

    if (probes_out) probes_out->clear();
    for (size_t li = 0; li < layers.size(); ++li) {
        for (size_t ci = 0; ci < columns.size(); ++ci) {
            grid.cells.push_back({layers[li], columns[ci].first, columns[ci].second,
                                  acc[cell_index(li, ci)]});
            if (probes_out) probes_out->push_back(probes[cell_index(li, ci)]);
        }
        for (const auto& [role, ex] : missing) {
            grid.cells.push_back({layers[li], role, ex, std::nullopt});
            if (probes_out) probes_out->emplace_back();
        }
    }
    return grid;
}

void save_probe(const std::filesystem::path& path, const LinearProbe& probe,
                const ProbeDataset& dataset) {
    std::vector<unsigned char> bytes;
    bytes.insert(bytes.end(), {'A', 'C', 'T', 'V'});
    auto put_u32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    };
    put_u32(1);
    const auto total = static_cast<uint32_t>(probe.weight.size() + probe.bias.size());
    put_u32(total);
    size_t at = bytes.size();
    bytes.resize(at + static_cast<size_t>(total) * 4);
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major =
        probe.weight;
    std::memcpy(bytes.data() + at, row_major.data(), static_cast<size_t>(row_major.size()) * 4);
    std::memcpy(bytes.data() + at + static_cast<size_t>(row_major.size()) * 4, probe.bias.data(),
                static_cast<size_t>(probe.bias.size()) * 4);
    write_file_atomic(path, bytes.data(), bytes.size());

    json j;
    j["kind"] = "linear_probe";
    j["labels"] = dataset.labels;
    j["layer"] = dataset.layer;
    j["role"] = role_name(dataset.role);
    j["example_index"] = dataset.example_index;
    j["k"] = dataset.k;
    j["epochs"] = probe.epochs;
    j["batch"] = probe.batch;
    j["lr"] = probe.lr;
    j["seed"] = probe.seed;
    j["test_accuracy"] = probe.test_accuracy;
    j["weight_shape"] = {probe.weight.rows(), probe.weight.cols()};
    write_file_atomic(path.string() + ".json", j.dump(2) + "\n");
}

}  // namespace tvlab
