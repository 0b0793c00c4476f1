#include "tvlab/vocab.hpp"

#include <nlohmann/json.hpp>

namespace tvlab {

using nlohmann::json;

const char* const kContentCategories[5] = {"colors", "animals", "fruits", "objects", "filler"};

namespace {

const char* kSpecialSurface[NUM_SPECIAL_TOKENS] = {"<bos>", "Q", "A", ":", ",", "\n"};

std::string make_word(Rng& rng) {
    static const char vowels[] = "aeiou";
    static const char consonants[] = "bcdfghjklmnprstvwz";
    const size_t len = 3 + rng.index(7);  // 3..9
    std::string w;
    w.reserve(len);
    bool vowel = rng.index(2) == 0;
    for (size_t i = 0; i < len; ++i) {
        if (vowel) {
            w += vowels[rng.index(sizeof(vowels) - 1)];
        } else {
            w += consonants[rng.index(sizeof(consonants) - 1)];
        }
        vowel = !vowel;
    }
    return w;
}

}  // namespace

TokenId Vocabulary::id_of(const std::string& word) const {
    auto it = ids_.find(word);
    if (it == ids_.end()) fail("unknown word: '" + word + "'");
    return it->second;
}

const std::string& Vocabulary::word_of(TokenId id) const {
    if (id < 0 || static_cast<size_t>(id) >= words_.size()) {
        fail("unknown token id: " + std::to_string(id));
    }
    return words_[static_cast<size_t>(id)];
}

const std::vector<TokenId>& Vocabulary::category(const std::string& name) const {
    auto it = categories_.find(name);
    if (it == categories_.end()) fail("unknown category: '" + name + "'");
    return it->second;
}

TokenId Vocabulary::add_word(const std::string& word, const std::string& category) {
    check(ids_.count(word) == 0, "duplicate word: '" + word + "'");
    const auto id = static_cast<TokenId>(words_.size());
    words_.push_back(word);
    ids_[word] = id;
    if (!category.empty()) {
        if (categories_.count(category) == 0) category_order_.push_back(category);
        categories_[category].push_back(id);
    }
    return id;
}

Vocabulary build_vocabulary(uint64_t seed, const VocabSizes& sizes) {
    Vocabulary v;
    for (TokenId t = 0; t < NUM_SPECIAL_TOKENS; ++t) {
        v.add_word(kSpecialSurface[t], "");
    }

    for (int n = 3; n <= 9; ++n) v.add_word(std::to_string(n), "numerals");
    for (const char* w : {"one", "two", "three"}) v.add_word(w, "counts");
    for (const char* w : {"first", "second", "third"}) v.add_word(w, "ordinals");

    const std::pair<const char*, int> plan[] = {
        {"colors", sizes.colors},     {"animals", sizes.animals}, {"fruits", sizes.fruits},
        {"objects", sizes.objects},   {"filler", sizes.filler},
    };
    int total = static_cast<int>(v.size());
    for (const auto& [name, count] : plan) total += count;
    check(total <= sizes.max_words, "vocabulary size " + std::to_string(total) +
                                        " exceeds the configured maximum " +
                                        std::to_string(sizes.max_words));

    Rng rng(derive_seed(seed, "vocabulary"));
    for (const auto& [name, count] : plan) {
        check(count >= 0, std::string("negative category size for ") + name);
        for (int i = 0; i < count; ++i) {
            std::string w;
            do {
                w = make_word(rng);
            } while (v.has_word(w));
            v.add_word(w, name);
        }
    }

    for (const char* name : kContentCategories) {
        if (!v.has_category(name)) continue;
        const auto& ids = v.category(name);
        v.content_words_.insert(v.content_words_.end(), ids.begin(), ids.end());
    }
    return v;
}

std::string Vocabulary::to_json() const {
    json j;
    j["words"] = words_;
    json cats = json::object();
    for (const auto& [name, ids] : categories_) cats[name] = ids;
    j["categories"] = cats;
    j["category_order"] = category_order_;
    json specials = json::object();
    for (TokenId t = 0; t < NUM_SPECIAL_TOKENS; ++t) specials[kSpecialSurface[t]] = t;
    j["specials"] = specials;
    return j.dump(2) + "\n";
}

Vocabulary Vocabulary::from_json(const std::string& text) {
    json j = json::parse(text);
    Vocabulary v;
    v.words_ = j.at("words").get<std::vector<std::string>>();
    for (size_t i = 0; i < v.words_.size(); ++i) {
        check(v.ids_.emplace(v.words_[i], static_cast<TokenId>(i)).second,
              "duplicate word in vocabulary file: '" + v.words_[i] + "'");
    }
    v.category_order_ = j.at("category_order").get<std::vector<std::string>>();
    for (const auto& [name, ids] : j.at("categories").items()) {
        v.categories_[name] = ids.get<std::vector<TokenId>>();
    }
    for (const char* name : kContentCategories) {
        if (!v.has_category(name)) continue;
        const auto& ids = v.category(name);
        v.content_words_.insert(v.content_words_.end(), ids.begin(), ids.end());
    }
    return v;
}

}  // namespace tvlab
