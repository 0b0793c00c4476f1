#include "tvlab/tasks.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

namespace tvlab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// MappingTable
// ---------------------------------------------------------------------------

TokenId MappingTable::apply(TokenId source) const {
    auto it = lookup_.find(source);
    if (it == lookup_.end()) {
        fail("mapping '" + name + "' has no entry for token " + std::to_string(source));
    }
    return it->second;
}

MappingTable MappingTable::make(std::string name, std::vector<std::pair<TokenId, TokenId>> pairs) {
    MappingTable t;
    t.name = std::move(name);
    t.pairs = std::move(pairs);
    std::set<TokenId> sources, targets;
    for (const auto& [s, d] : t.pairs) {
        check(sources.insert(s).second, "mapping '" + t.name + "': repeated source");
        check(targets.insert(d).second, "mapping '" + t.name + "': repeated target");
        t.sources_.push_back(s);
        t.lookup_[s] = d;
    }
    for (TokenId s : t.sources_) {
        check(targets.count(s) == 0, "mapping '" + t.name + "': source and target sets overlap");
    }
    return t;
}

MappingTable MappingTable::sample(std::string name, const std::vector<TokenId>& source_slice,
                                  const std::vector<TokenId>& target_slice, uint64_t seed) {
    check(source_slice.size() == target_slice.size(),
          "mapping '" + name + "': slice sizes differ");
    std::vector<TokenId> targets = target_slice;
    Rng rng(seed);
    rng.shuffle(targets);
    std::vector<std::pair<TokenId, TokenId>> pairs;
    pairs.reserve(source_slice.size());
    for (size_t i = 0; i < source_slice.size(); ++i) {
        pairs.emplace_back(source_slice[i], targets[i]);
    }
    return make(std::move(name), std::move(pairs));
}

// ---------------------------------------------------------------------------
// TaskSpec
// ---------------------------------------------------------------------------

const char* family_name(TaskFamily family) {
    switch (family) {
        case TaskFamily::mapping: return "mapping";
        case TaskFamily::choose_position: return "choose-position";
        case TaskFamily::count_category: return "count-category";
        case TaskFamily::position_of_category: return "position-of-category";
        case TaskFamily::word_length: return "word-length";
        case TaskFamily::repeat_x3: return "repeat-x3";
        case TaskFamily::all_but_category: return "all-but-category";
        case TaskFamily::choose_multi: return "choose-multi";
        case TaskFamily::reverse_list: return "reverse-list";
        case TaskFamily::shift_list: return "shift-list";
        case TaskFamily::mixed_chain: return "mixed-chain";
    }
    return "?";
}

void TaskSpec::validate() const {
    check(!name.empty(), "task spec without a name");
    check(answer_units >= 1, "task '" + name + "': answer_units must be >= 1");
    if (family == TaskFamily::mixed_chain) {
        check(sub.size() >= 2, "task '" + name + "': a mixed chain needs at least 2 sub-tasks");
        bool all_same = true;
        for (const auto& s : sub) {
            check(s.family == TaskFamily::mapping && s.answer_units == 1,
                  "task '" + name + "': chains are over single-unit mapping tasks only ('" +
                      s.name + "' is not one)");
            if (s.mapping != sub.front().mapping) all_same = false;
        }
        check(!all_same, "task '" + name + "': chain sub-tasks must differ in family or mapping");
    }
}

TaskSpec compose_mixed_task(const std::string& name, const std::vector<TaskSpec>& sub_specs) {
    check(!sub_specs.empty(), "compose_mixed_task: empty chain");
    for (const auto& s : sub_specs) {
        check(s.family == TaskFamily::mapping && s.answer_units == 1,
              "compose_mixed_task: sub-task '" + s.name + "' must be a single-unit mapping task");
    }
    if (sub_specs.size() == 1) {
        TaskSpec t = sub_specs.front();
        t.name = name;
        return t;
    }
    TaskSpec t;
    t.name = name;
    t.family = TaskFamily::mixed_chain;
    t.sub = sub_specs;
    t.answer_units = static_cast<int>(sub_specs.size());
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// TaskCorpus
// ---------------------------------------------------------------------------

namespace {

uint64_t falling_factorial(uint64_t n, uint64_t k) {
    // saturating P(n, k)
    uint64_t out = 1;
    for (uint64_t i = 0; i < k; ++i) {
        if (n <= i) return 0;
        uint64_t f = n - i;
        if (out > UINT64_MAX / f) return UINT64_MAX;
        out *= f;
    }
    return out;
}

uint64_t choose(uint64_t n, uint64_t k) {
    if (k > n) return 0;
    uint64_t out = 1;
    for (uint64_t i = 1; i <= k; ++i) {
        out = out * (n - k + i) / i;
    }
    return out;
}

std::string query_key(const std::vector<std::string>& query) {
    std::string key;
    for (const auto& w : query) {
        key += w;
        key += '\x1f';
    }
    return key;
}

const char* kCountWords[] = {"one", "two", "three"};
const char* kOrdinalWords[] = {"first", "second", "third"};

}  // namespace

const TaskSpec& TaskCorpus::spec(const std::string& name) const {
    auto it = spec_index_.find(name);
    if (it == spec_index_.end()) fail("unknown task: '" + name + "'");
    return specs_[it->second];
}

bool TaskCorpus::has_task(const std::string& name) const { return spec_index_.count(name) > 0; }

const MappingTable& TaskCorpus::mapping(const std::string& name) const {
    auto it = mappings_.find(name);
    if (it == mappings_.end()) fail("unknown mapping: '" + name + "'");
    return it->second;
}

void TaskCorpus::add_spec(TaskSpec spec) {
    spec.validate();
    check(spec_index_.count(spec.name) == 0, "duplicate task name: '" + spec.name + "'");
    spec_index_[spec.name] = specs_.size();
    specs_.push_back(std::move(spec));
}

std::vector<std::string> TaskCorpus::category_words(const std::string& name) const {
    std::vector<std::string> out;
    for (TokenId id : vocab_.category(name)) out.push_back(vocab_.word_of(id));
    return out;
}

std::vector<std::string> TaskCorpus::pool_excluding(const std::string& target_category) const {
    std::vector<std::string> out;
    for (const char* name : kContentCategories) {
        if (target_category == name) continue;
        for (TokenId id : vocab_.category(name)) out.push_back(vocab_.word_of(id));
    }
    return out;
}

std::vector<std::string> TaskCorpus::answer(const TaskSpec& spec,
                                            const std::vector<std::string>& query) const {
    switch (spec.family) {
        case TaskFamily::mapping: {
            check(query.size() == 1, "task '" + spec.name + "': expected a 1-word query");
            const auto& m = mapping(spec.mapping);
            return {vocab_.word_of(m.apply(vocab_.id_of(query[0])))};
        }
        case TaskFamily::choose_position: {
            check(spec.positions.size() == 1, "choose_position: exactly one position");
            return {query.at(static_cast<size_t>(spec.positions[0]))};
        }
        case TaskFamily::count_category: {
            const auto& cat = vocab_.category(spec.target_category);
            int n = 0;
            for (const auto& w : query) {
                TokenId id = vocab_.id_of(w);
                if (std::find(cat.begin(), cat.end(), id) != cat.end()) ++n;
            }
            check(n >= 1 && n <= 3, "count out of the one..three label range");
            return {kCountWords[n - 1]};
        }
        case TaskFamily::position_of_category: {
            const auto& cat = vocab_.category(spec.target_category);
            int pos = -1;
            for (size_t i = 0; i < query.size(); ++i) {
                TokenId id = vocab_.id_of(query[i]);
                if (std::find(cat.begin(), cat.end(), id) != cat.end()) {
                    check(pos < 0, "task '" + spec.name + "': more than one target-category word");
                    pos = static_cast<int>(i);
                }
            }
            check(pos >= 0 && pos <= 2, "target position outside the first..third label range");
            return {kOrdinalWords[pos]};
        }
        case TaskFamily::word_length: {
            check(query.size() == 1, "word_length: expected a 1-word query");
            return {std::to_string(query[0].size())};
        }
        case TaskFamily::repeat_x3: {
            const auto& m = mapping(spec.mapping);
            std::vector<std::string> out;
            for (const auto& w : query) out.push_back(vocab_.word_of(m.apply(vocab_.id_of(w))));
            return out;
        }
        case TaskFamily::all_but_category: {
            const auto& cat = vocab_.category(spec.target_category);
            std::vector<std::string> out;
            for (const auto& w : query) {
                TokenId id = vocab_.id_of(w);
                if (std::find(cat.begin(), cat.end(), id) == cat.end()) out.push_back(w);
            }
            return out;
        }
        case TaskFamily::choose_multi: {
            std::vector<std::string> out;
            for (int p : spec.positions) out.push_back(query.at(static_cast<size_t>(p)));
            return out;
        }
        case TaskFamily::reverse_list: {
            return {query.rbegin(), query.rend()};
        }
        case TaskFamily::shift_list: {
            std::vector<std::string> out(query.begin() + 1, query.end());
            out.push_back(query.front());
            return out;
        }
        case TaskFamily::mixed_chain: {
            check(query.size() == spec.sub.size(), "mixed chain arity mismatch");
            std::vector<std::string> out;
            for (size_t i = 0; i < spec.sub.size(); ++i) {
                auto unit = answer(spec.sub[i], {query[i]});
                out.push_back(unit[0]);
            }
            return out;
        }
    }
    fail("unreachable task family");
}

uint64_t TaskCorpus::max_distinct_queries(const TaskSpec& spec) const {
    switch (spec.family) {
        case TaskFamily::mapping:
            return mapping(spec.mapping).sources().size();
        case TaskFamily::word_length:
            return vocab_.content_words().size();
        case TaskFamily::choose_position:
        case TaskFamily::choose_multi:
        case TaskFamily::reverse_list:
        case TaskFamily::shift_list:
            return falling_factorial(vocab_.content_words().size(),
                                     static_cast<uint64_t>(spec.list_len));
        case TaskFamily::count_category: {
            const uint64_t t_words = vocab_.category(spec.target_category).size();
            const uint64_t d_words = pool_excluding(spec.target_category).size();
            const auto n = static_cast<uint64_t>(spec.list_len);
            uint64_t total = 0;
            for (uint64_t t = 1; t < n; ++t) {
                total += choose(n, t) * falling_factorial(t_words, t) *
                         falling_factorial(d_words, n - t);
            }
            return total;
        }
        case TaskFamily::position_of_category: {
            const uint64_t t_words = vocab_.category(spec.target_category).size();
            const uint64_t d_words = pool_excluding(spec.target_category).size();
            const auto n = static_cast<uint64_t>(spec.list_len);
            return n * t_words * falling_factorial(d_words, n - 1);
        }
        case TaskFamily::all_but_category: {
            const uint64_t t_words = vocab_.category(spec.target_category).size();
            const uint64_t keep_words = spec.keep_category.empty()
                                            ? pool_excluding(spec.target_category).size()
                                            : vocab_.category(spec.keep_category).size();
            const auto n = static_cast<uint64_t>(spec.list_len);
            const auto d = static_cast<uint64_t>(spec.drop_count);
            return choose(n, d) * falling_factorial(t_words, d) *
                   falling_factorial(keep_words, n - d);
        }
        case TaskFamily::repeat_x3:
            return falling_factorial(mapping(spec.mapping).sources().size(), 3);
        case TaskFamily::mixed_chain: {
            // Positions drawing from the same source slice must hold distinct
            // words; slices are either identical or disjoint here.
            std::map<std::string, uint64_t> used;  // slice key -> positions so far
            uint64_t total = 1;
            for (const auto& s : spec.sub) {
                const auto& srcs = mapping(s.mapping).sources();
                std::string key = std::to_string(srcs.front()) + ":" + std::to_string(srcs.back());
                uint64_t prior = used[key]++;
                total *= (srcs.size() - prior);
            }
            return total;
        }
    }
    fail("unreachable task family");
}

QAPair TaskCorpus::sample_query(const TaskSpec& spec, Rng& rng) const {
    QAPair pair;
    auto draw_distinct = [&](const std::vector<std::string>& pool, size_t n) {
        auto idx = rng.sample_without_replacement(pool.size(), n);
        std::vector<std::string> out;
        for (size_t i : idx) out.push_back(pool[i]);
        return out;
    };
    switch (spec.family) {
        case TaskFamily::mapping: {
            const auto& srcs = mapping(spec.mapping).sources();
            pair.query = {vocab_.word_of(srcs[rng.index(srcs.size())])};
            break;
        }
        case TaskFamily::word_length: {
            const auto& pool = vocab_.content_words();
            pair.query = {vocab_.word_of(pool[rng.index(pool.size())])};
            break;
        }
        case TaskFamily::choose_position:
        case TaskFamily::choose_multi:
        case TaskFamily::reverse_list:
        case TaskFamily::shift_list:
            pair.query = draw_distinct(list_pool_, static_cast<size_t>(spec.list_len));
            break;
        case TaskFamily::count_category: {
            const auto n = static_cast<size_t>(spec.list_len);
            const size_t t = 1 + rng.index(n - 1);  // 1 .. n-1 targets
            auto targets = draw_distinct(category_words(spec.target_category), t);
            auto others = draw_distinct(pool_excluding(spec.target_category), n - t);
            auto slots = rng.sample_without_replacement(n, t);
            pair.query.assign(n, "");
            for (size_t i = 0; i < t; ++i) pair.query[slots[i]] = targets[i];
            size_t oi = 0;
            for (auto& w : pair.query) {
                if (w.empty()) w = others[oi++];
            }
            break;
        }
        case TaskFamily::position_of_category: {
            const auto n = static_cast<size_t>(spec.list_len);
            auto target = draw_distinct(category_words(spec.target_category), 1);
            auto others = draw_distinct(pool_excluding(spec.target_category), n - 1);
            size_t slot = rng.index(n);
            pair.query = others;
            pair.query.insert(pair.query.begin() + static_cast<ptrdiff_t>(slot), target[0]);
            break;
        }
        case TaskFamily::all_but_category: {
            const auto n = static_cast<size_t>(spec.list_len);
            const auto d = static_cast<size_t>(spec.drop_count);
            auto dropped = draw_distinct(category_words(spec.target_category), d);
            auto kept = draw_distinct(spec.keep_category.empty()
                                          ? pool_excluding(spec.target_category)
                                          : category_words(spec.keep_category),
                                      n - d);
            auto slots = rng.sample_without_replacement(n, d);
            pair.query.assign(n, "");
            for (size_t i = 0; i < d; ++i) pair.query[slots[i]] = dropped[i];
            size_t ki = 0;
            for (auto& w : pair.query) {
                if (w.empty()) w = kept[ki++];
            }
            break;
        }
        case TaskFamily::repeat_x3: {
            const auto& srcs = mapping(spec.mapping).sources();
            std::vector<std::string> pool;
            for (TokenId id : srcs) pool.push_back(vocab_.word_of(id));
            pair.query = draw_distinct(pool, 3);
            break;
        }
        case TaskFamily::mixed_chain: {
            std::set<std::string> taken;
            for (const auto& s : spec.sub) {
                const auto& srcs = mapping(s.mapping).sources();
                std::string w;
                do {
                    w = vocab_.word_of(srcs[rng.index(srcs.size())]);
                } while (taken.count(w) > 0);
                taken.insert(w);
                pair.query.push_back(w);
            }
            break;
        }
    }
    pair.answer = answer(spec, pair.query);
    return pair;
}

Dataset TaskCorpus::generate_dataset(const TaskSpec& spec, size_t size, uint64_t seed) const {
    const uint64_t max = max_distinct_queries(spec);
    if (size > max) {
        fail("task '" + spec.name + "': requested " + std::to_string(size) +
             " pairs but only " + std::to_string(max) + " distinct queries are constructible");
    }
    Rng rng(derive_seed(config_.seed, "dataset", spec.name, seed));

    Dataset out;
    out.reserve(size);

    const bool enumerable =
        spec.family == TaskFamily::mapping || spec.family == TaskFamily::word_length;
    if (enumerable) {
        std::vector<std::string> pool;
        if (spec.family == TaskFamily::mapping) {
            for (TokenId id : mapping(spec.mapping).sources()) pool.push_back(vocab_.word_of(id));
        } else {
            for (TokenId id : vocab_.content_words()) pool.push_back(vocab_.word_of(id));
        }
        rng.shuffle(pool);
        for (size_t i = 0; i < size; ++i) {
            QAPair p;
            p.query = {pool[i]};
            p.answer = answer(spec, p.query);
            out.push_back(std::move(p));
        }
        return out;
    }

    std::set<std::string> seen;
    uint64_t attempts = 0;
    const uint64_t attempt_limit =
        64 * static_cast<uint64_t>(size) + (max < 262144 ? 24 * max : 262144);
    while (out.size() < size) {
        check(attempts++ < attempt_limit,
              "task '" + spec.name + "': query sampling stalled (" + std::to_string(out.size()) +
                  " of " + std::to_string(size) + " found, " + std::to_string(max) +
                  " constructible)");
        QAPair p = sample_query(spec, rng);
        if (!seen.insert(query_key(p.query)).second) continue;
        out.push_back(std::move(p));
    }
    return out;
}

size_t TaskCorpus::dataset_size_for(const TaskSpec& spec) const {
    auto it = config_.dataset_size_overrides.find(spec.name);
    if (it != config_.dataset_size_overrides.end()) return static_cast<size_t>(it->second);
    const uint64_t max = max_distinct_queries(spec);
    return static_cast<size_t>(
        std::min<uint64_t>(static_cast<uint64_t>(config_.dataset_size), max));
}

MappingTable TaskCorpus::sample_fresh_mapping(const std::string& name, uint64_t seed) const {
    auto it = mapping_slices_.find(name);
    if (it == mapping_slices_.end()) fail("unknown mapping: '" + name + "'");
    return MappingTable::sample(name + "#fresh", it->second.first, it->second.second,
                                derive_seed(config_.seed, "fresh-mapping", name, seed));
}

std::vector<std::string> TaskCorpus::simple_tasks() {
    return {"antonym",
            "country-capital",
            "english-french",
            "product-company",
            "color_v_animal_3",
            "fruit_v_animal_3",
            "choose_first_of_5",
            "choose_middle_of_5",
            "choose_last_of_5",
            "word_length",
            "count_color_in_3",
            "count_fruit_in_3",
            "position_of_color_in_3",
            "position_of_fruit_in_3"};
}

std::vector<std::string> TaskCorpus::longer_tasks() {
    return {"antonym_x3",
            "product-company_x3",
            "all_but_color_in_3",
            "all_but_fruit_in_3",
            "choose_first_last_of_3",
            "choose_first_middle_last_of_5",
            "reverse_all_of_3",
            "reverse_all_of_5",
            "shift_all_of_3",
            "shift_all_of_5"};
}

std::vector<std::string> TaskCorpus::mixed_tasks() {
    return {"antonym+product-company",
            "english-french+antonym",
            "product-company+english-french",
            "antonym+country-capital+english-french",
            "english-french+product-company+antonym",
            "country-capital+antonym+product-company"};
}

std::vector<std::string> TaskCorpus::shared_vocab_list_tasks() {
    return {"choose_first_of_5",
            "choose_middle_of_5",
            "choose_last_of_5",
            "choose_first_last_of_3",
            "choose_first_middle_last_of_5",
            "reverse_all_of_3",
            "reverse_all_of_5",
            "shift_all_of_3",
            "shift_all_of_5"};
}

TaskCorpus TaskCorpus::build(const Config& config) {
    TaskCorpus c;
    c.config_ = config;
    c.vocab_ = build_vocabulary(config.seed, config.vocab);
    for (TokenId id : c.vocab_.content_words()) c.list_pool_.push_back(c.vocab_.word_of(id));

    const int m = config.mapping_pairs;
    check(m >= 3, "mapping_pairs must be >= 3");
    auto slice = [&](const char* cat, int from, int count) {
        const auto& ids = c.vocab_.category(cat);
        check(static_cast<int>(ids.size()) >= from + count,
              std::string("category '") + cat + "' too small for the mapping tasks: needs " +
                  std::to_string(from + count) + " words, has " + std::to_string(ids.size()));
        return std::vector<TokenId>(ids.begin() + from, ids.begin() + from + count);
    };
    // antonym / english-french share a source slice, as do country-capital /
    // product-company, so a single demonstration does not trivially give the
    // task away through its vocabulary.
    const auto filler_src = slice("filler", 0, m);
    const auto filler_dst = slice("filler", m, m);
    const auto object_src = slice("objects", 0, m);
    const auto object_dst = slice("objects", m, m);
    const std::tuple<const char*, const std::vector<TokenId>*, const std::vector<TokenId>*>
        mapping_plan[] = {
            {"antonym", &filler_src, &filler_dst},
            {"english-french", &filler_src, &filler_dst},
            {"country-capital", &object_src, &object_dst},
            {"product-company", &object_src, &object_dst},
        };
    for (const auto& [name, src, dst] : mapping_plan) {
        c.mappings_.emplace(
            name, MappingTable::sample(name, *src, *dst, derive_seed(config.seed, "mapping", name)));
        c.mapping_slices_.emplace(name, std::make_pair(*src, *dst));
    }

    auto mapping_spec = [&](const std::string& name) {
        TaskSpec t;
        t.name = name;
        t.family = TaskFamily::mapping;
        t.mapping = name;
        t.answer_units = 1;
        return t;
    };
    auto choose_spec = [&](const std::string& name, int n, std::vector<int> pos) {
        TaskSpec t;
        t.name = name;
        t.family = pos.size() == 1 ? TaskFamily::choose_position : TaskFamily::choose_multi;
        t.list_len = n;
        t.positions = std::move(pos);
        t.answer_units = static_cast<int>(t.positions.size());
        return t;
    };
    auto all_but_spec = [&](const std::string& name, const std::string& dropped, int drop_count,
                            const std::string& keep) {
        TaskSpec t;
        t.name = name;
        t.family = TaskFamily::all_but_category;
        t.list_len = 3;
        t.target_category = dropped;
        t.drop_count = drop_count;
        t.keep_category = keep;
        t.answer_units = 3 - drop_count;
        return t;
    };
    auto cat_spec = [&](const std::string& name, TaskFamily family, const std::string& target) {
        TaskSpec t;
        t.name = name;
        t.family = family;
        t.list_len = 3;
        t.target_category = target;
        t.answer_units = 1;
        return t;
    };
    auto list_spec = [&](const std::string& name, TaskFamily family, int n) {
        TaskSpec t;
        t.name = name;
        t.family = family;
        t.list_len = n;
        t.answer_units = n;
        return t;
    };
    auto repeat_spec = [&](const std::string& name, const std::string& mapping) {
        TaskSpec t;
        t.name = name;
        t.family = TaskFamily::repeat_x3;
        t.mapping = mapping;
        t.answer_units = 3;
        return t;
    };

    std::vector<TaskSpec> suite;
    suite.push_back(mapping_spec("antonym"));
    suite.push_back(mapping_spec("country-capital"));
    suite.push_back(mapping_spec("english-french"));
    suite.push_back(mapping_spec("product-company"));
    // the unique color (fruit) among animals
    suite.push_back(all_but_spec("color_v_animal_3", "animals", 2, "colors"));
    suite.push_back(all_but_spec("fruit_v_animal_3", "animals", 2, "fruits"));
    suite.push_back(choose_spec("choose_first_of_5", 5, {0}));
    suite.push_back(choose_spec("choose_middle_of_5", 5, {2}));
    suite.push_back(choose_spec("choose_last_of_5", 5, {4}));
    {
        TaskSpec t;
        t.name = "word_length";
        t.family = TaskFamily::word_length;
        t.answer_units = 1;
        suite.push_back(t);
    }
    suite.push_back(cat_spec("count_color_in_3", TaskFamily::count_category, "colors"));
    suite.push_back(cat_spec("count_fruit_in_3", TaskFamily::count_category, "fruits"));
    suite.push_back(cat_spec("position_of_color_in_3", TaskFamily::position_of_category, "colors"));
    suite.push_back(cat_spec("position_of_fruit_in_3", TaskFamily::position_of_category, "fruits"));

    suite.push_back(repeat_spec("antonym_x3", "antonym"));
    suite.push_back(repeat_spec("product-company_x3", "product-company"));
    suite.push_back(all_but_spec("all_but_color_in_3", "colors", 1, ""));
    suite.push_back(all_but_spec("all_but_fruit_in_3", "fruits", 1, ""));
    suite.push_back(choose_spec("choose_first_last_of_3", 3, {0, 2}));
    suite.push_back(choose_spec("choose_first_middle_last_of_5", 5, {0, 2, 4}));
    suite.push_back(list_spec("reverse_all_of_3", TaskFamily::reverse_list, 3));
    suite.push_back(list_spec("reverse_all_of_5", TaskFamily::reverse_list, 5));
    suite.push_back(list_spec("shift_all_of_3", TaskFamily::shift_list, 3));
    suite.push_back(list_spec("shift_all_of_5", TaskFamily::shift_list, 5));

    auto chain = [&](const std::vector<std::string>& parts) {
        std::vector<TaskSpec> subs;
        std::string name;
        for (const auto& p : parts) {
            subs.push_back(mapping_spec(p));
            if (!name.empty()) name += "+";
            name += p;
        }
        return compose_mixed_task(name, subs);
    };
    suite.push_back(chain({"antonym", "product-company"}));
    suite.push_back(chain({"english-french", "antonym"}));
    suite.push_back(chain({"product-company", "english-french"}));
    suite.push_back(chain({"antonym", "country-capital", "english-french"}));
    suite.push_back(chain({"english-french", "product-company", "antonym"}));
    suite.push_back(chain({"country-capital", "antonym", "product-company"}));

    std::set<std::string> enabled(config.tasks.begin(), config.tasks.end());
    for (auto& t : suite) {
        if (!enabled.empty() && enabled.count(t.name) == 0) continue;
        c.add_spec(std::move(t));
    }
    if (!enabled.empty()) {
        for (const auto& name : enabled) {
            check(c.has_task(name), "unknown task in config: '" + name + "'");
        }
    }

    // Each category a task touches must offer at least 3 words; a thinner one
    // cannot produce non-degenerate queries.
    for (const auto& t : c.specs_) {
        std::vector<std::string> needed;
        if (!t.target_category.empty()) needed.push_back(t.target_category);
        if (!t.keep_category.empty()) needed.push_back(t.keep_category);
        for (const auto& cat : needed) {
            check(c.vocab_.category(cat).size() >= 3,
                  "task '" + t.name + "' needs at least 3 words in category '" + cat + "', got " +
                      std::to_string(c.vocab_.category(cat).size()));
        }
        if (t.list_len > 0) {
            check(c.list_pool_.size() >= static_cast<size_t>(t.list_len),
                  "task '" + t.name + "' needs a content pool of at least " +
                      std::to_string(t.list_len) + " words");
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Splits and serialization
// ---------------------------------------------------------------------------

SplitResult split_dev_eval(const Dataset& dataset, size_t dev_size, uint64_t seed) {
    check(dev_size < dataset.size(),
          "dev_size " + std::to_string(dev_size) + " must be smaller than the dataset (" +
              std::to_string(dataset.size()) + ")");
    Rng rng(derive_seed(seed, "split"));
    auto dev_idx = rng.sample_without_replacement(dataset.size(), dev_size);
    std::vector<bool> in_dev(dataset.size(), false);
    for (size_t i : dev_idx) in_dev[i] = true;
    SplitResult out;
    for (size_t i = 0; i < dataset.size(); ++i) {
        (in_dev[i] ? out.dev : out.eval).push_back(dataset[i]);
    }
    return out;
}

std::string dataset_to_jsonl(const std::string& task, const Dataset& dataset) {
    std::string out;
    for (const auto& p : dataset) {
        json j;
        j["task"] = task;
        j["query"] = p.query;
        j["answer"] = p.answer;
        out += j.dump();
        out += '\n';
    }
    return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
    Dataset out;
    size_t start = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start) {
            json j = json::parse(text.substr(start, end - start));
            QAPair p;
            p.query = j.at("query").get<std::vector<std::string>>();
            p.answer = j.at("answer").get<std::vector<std::string>>();
            out.push_back(std::move(p));
        }
        start = end + 1;
    }
    return out;
}

}  // namespace tvlab
