#include "tvlab/intervene.hpp"

#include <cstring>

#include <nlohmann/json.hpp>

namespace tvlab {

using nlohmann::json;

TaskVector extract_task_vector(const Model& model, const PromptLayout& layout, int layer,
                               TokenRole role, int example_index, uint64_t prompt_seed) {
    auto vs = extract_task_vectors(model, layout, {layer}, {{role, example_index}}, prompt_seed);
    return std::move(vs.front());
}

std::vector<TaskVector> extract_task_vectors(const Model& model, const PromptLayout& layout,
                                             const std::vector<int>& layers,
                                             const std::vector<std::pair<TokenRole, int>>& loci,
                                             uint64_t prompt_seed) {
    std::vector<TapPoint> taps;
    taps.reserve(layers.size() * loci.size());
    for (int layer : layers) {
        const int internal = layer_to_internal(model.config, layer);
        check(internal >= 0 && internal <= model.config.n_layers,
              "extraction layer " + std::to_string(layer) + " out of range");
        for (const auto& [role, ex] : loci) {
            taps.push_back({internal, static_cast<int>(locate_role(layout, role, ex))});
        }
    }
    auto out = forward(model, layout.tokens, taps, {}, false);
    std::vector<TaskVector> vectors;
    vectors.reserve(taps.size());
    size_t i = 0;
    for (int layer : layers) {
        for (const auto& [role, ex] : loci) {
            TaskVector tv;
            tv.values = std::move(out.tapped[i++]);
            tv.prov = {layout.task, layout.k, layer, role, ex, prompt_seed};
            vectors.push_back(std::move(tv));
        }
    }
    return vectors;
}

Aggregate aggregate_records(const std::vector<EvalRecord>& records) {
    Aggregate a;
    for (const auto& r : records) {
        for (uint8_t c : r.unit_correct) {
            a.total_units += 1;
            a.correct_units += c;
        }
    }
    return a;
}

EvalRecord recontextualize(const Model& model, const Vocabulary& vocab,
                           const PromptLayout& zero_layout, const TaskVector& vector,
                           PatchMode mode, int max_units) {
    check(zero_layout.k == 0, "recontextualize expects a zero-shot prompt");
    check(vector.values.size() == model.config.d_model,
          "task vector dimension does not match the model");
    if (!has_role(zero_layout, vector.prov.role, 0)) {
        fail(std::string("role ") + role_name(vector.prov.role) + " not addressable at k=0");
    }
    const int pos = static_cast<int>(locate_role(zero_layout, vector.prov.role, 0));
    InterventionPlan plan;
    plan.entries.push_back(
        {{layer_to_internal(model.config, vector.prov.layer), pos}, vector.values, mode});
    auto generated = generate_greedy(model, zero_layout.tokens, plan, 2 * max_units + 1);
    EvalRecord rec;
    rec.task = zero_layout.task;
    rec.setting = "recon";
    rec.k = vector.prov.k;
    rec.layer = vector.prov.layer;
    rec.role = role_name(vector.prov.role);
    rec.example = vector.prov.example_index;
    rec.mode = mode == PatchMode::overwrite ? "overwrite" : "add";
    rec.query = zero_layout.test_query.query;
    rec.gold = zero_layout.test_query.answer;
    rec.generated = detokenize(vocab, generated);
    auto g = grade(rec.generated, rec.gold);
    rec.unit_correct = g.unit_correct;
    rec.mean = g.mean;
    rec.prompt_seed = vector.prov.prompt_seed;
    return rec;
}

Setting Setting::zero() { return {}; }

Setting Setting::few(int k) {
    Setting s;
    s.type = Type::few;
    s.k = k;
    return s;
}

Setting Setting::recon(int k, int layer, TokenRole role, PatchMode mode) {
    Setting s;
    s.type = Type::recon;
    s.k = k;
    s.layer = layer;
    s.role = role;
    s.mode = mode;
    return s;
}

RunResult run_setting(const Model& model, const TaskCorpus& corpus, const std::string& task,
                      const Setting& setting, const Dataset& demo_pool, const Dataset& eval_set,
                      uint64_t seed, size_t workers) {
    const auto& spec = corpus.spec(task);
    const auto& vocab = corpus.vocab();
    const int max_units = spec.answer_units;
    RunResult out;
    out.records.resize(eval_set.size());

    parallel_for(eval_set.size(), workers, [&](size_t i) {
        const QAPair& query = eval_set[i];
        const uint64_t prompt_seed = derive_seed(seed, "record", task, i);
        auto zero_layout = compose_prompt(vocab, task, {}, query, false);
        EvalRecord rec;
        switch (setting.type) {
            case Setting::Type::zero: {
                auto generated = generate_greedy(model, zero_layout.tokens, {}, 2 * max_units + 1);
                rec.task = task;
                rec.setting = "zero";
                rec.k = 0;
                rec.query = query.query;
                rec.gold = query.answer;
                rec.generated = detokenize(vocab, generated);
                break;
            }
            case Setting::Type::few: {
                auto layout =
                    build_prompt(vocab, task, demo_pool, setting.k, query, false, prompt_seed);
                auto generated = generate_greedy(model, layout.tokens, {}, 2 * max_units + 1);
                rec.task = task;
                rec.setting = "few";
                rec.k = setting.k;
                rec.query = query.query;
                rec.gold = query.answer;
                rec.generated = detokenize(vocab, generated);
                break;
            }
            case Setting::Type::recon: {
                auto source =
                    build_prompt(vocab, task, demo_pool, setting.k, query, true, prompt_seed);
                const int ex = setting.example_index < 0 ? setting.k : setting.example_index;
                auto tv = extract_task_vector(model, source, setting.layer, setting.role, ex,
                                              prompt_seed);
                rec = recontextualize(model, vocab, zero_layout, tv, setting.mode, max_units);
                break;
            }
        }
        if (setting.type != Setting::Type::recon) {
            auto g = grade(rec.generated, rec.gold);
            rec.unit_correct = g.unit_correct;
            rec.mean = g.mean;
            rec.prompt_seed = prompt_seed;
        }
        out.records[i] = std::move(rec);
    });

    out.aggregate = aggregate_records(out.records);
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string EvalRecord::to_json() const {
    json j;
    j["task"] = task;
    j["setting"] = setting;
    j["k"] = k;
    if (setting == "recon") {
        j["layer"] = layer;
        j["role"] = role;
        j["example"] = example;
        j["mode"] = mode;
    }
    j["query"] = query;
    j["gold"] = gold;
    j["generated"] = generated;
    j["unit_correct"] = unit_correct;
    j["mean"] = mean;
    j["prompt_seed"] = prompt_seed;
    return j.dump();
}

EvalRecord EvalRecord::from_json(const std::string& text) {
    json j = json::parse(text);
    EvalRecord r;
    r.task = j.at("task").get<std::string>();
    r.setting = j.at("setting").get<std::string>();
    r.k = j.at("k").get<int>();
    r.layer = j.value("layer", -1);
    r.role = j.value("role", std::string{});
    r.example = j.value("example", -1);
    r.mode = j.value("mode", std::string{});
    r.query = j.at("query").get<std::vector<std::string>>();
    r.gold = j.at("gold").get<std::vector<std::string>>();
    r.generated = j.at("generated").get<std::vector<std::string>>();
    r.unit_correct = j.at("unit_correct").get<std::vector<uint8_t>>();
    r.mean = j.at("mean").get<double>();
    r.prompt_seed = j.at("prompt_seed").get<uint64_t>();
    return r;
}

std::string records_to_jsonl(const std::vector<EvalRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.to_json();
        out += '\n';
    }
    return out;
}

std::vector<EvalRecord> records_from_jsonl(const std::string& text) {
    std::vector<EvalRecord> out;
    size_t start = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start) out.push_back(EvalRecord::from_json(text.substr(start, end - start)));
        start = end + 1;
    }
    return out;
}

namespace {
constexpr uint32_t kActvVersion = 1;
}

void save_task_vector(const std::filesystem::path& path, const TaskVector& vector) {
    std::vector<unsigned char> bytes;
    bytes.insert(bytes.end(), {'A', 'C', 'T', 'V'});
    auto put_u32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    };
    put_u32(kActvVersion);
    put_u32(static_cast<uint32_t>(vector.values.size()));
    const size_t at = bytes.size();
    bytes.resize(at + static_cast<size_t>(vector.values.size()) * 4);
    std::memcpy(bytes.data() + at, vector.values.data(),
                static_cast<size_t>(vector.values.size()) * 4);
    write_file_atomic(path, bytes.data(), bytes.size());

    json j;
    j["task"] = vector.prov.task;
    j["k"] = vector.prov.k;
    j["layer"] = vector.prov.layer;
    j["role"] = role_name(vector.prov.role);
    j["example_index"] = vector.prov.example_index;
    j["prompt_seed"] = vector.prov.prompt_seed;
    write_file_atomic(path.string() + ".json", j.dump(2) + "\n");
}

TaskVector load_task_vector(const std::filesystem::path& path) {
    auto bytes = read_binary_file(path);
    check(bytes.size() >= 12, "ACTV file too short: " + path.string());
    check(std::memcmp(bytes.data(), "ACTV", 4) == 0, "not an ACTV file: " + path.string());
    auto get_u32 = [&](size_t off) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[off + static_cast<size_t>(i)]) << (8 * i);
        return v;
    };
    check(get_u32(4) == kActvVersion, "unsupported ACTV version");
    const uint32_t dim = get_u32(8);
    check(bytes.size() == 12 + static_cast<size_t>(dim) * 4, "ACTV size mismatch");
    TaskVector tv;
    tv.values.resize(dim);
    std::memcpy(tv.values.data(), bytes.data() + 12, static_cast<size_t>(dim) * 4);

    json j = json::parse(read_text_file(path.string() + ".json"));
    tv.prov.task = j.at("task").get<std::string>();
    tv.prov.k = j.at("k").get<int>();
    tv.prov.layer = j.at("layer").get<int>();
    tv.prov.role = role_from_name(j.at("role").get<std::string>());
    tv.prov.example_index = j.at("example_index").get<int>();
    tv.prov.prompt_seed = j.at("prompt_seed").get<uint64_t>();
    return tv;
}

}  // namespace tvlab
