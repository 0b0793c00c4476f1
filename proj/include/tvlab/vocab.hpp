#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "tvlab/common.hpp"

namespace tvlab {

using TokenId = int32_t;

// Special (structural) tokens occupy the first ids. They are shared by every
// task and never appear as content words.
enum SpecialToken : TokenId {
    TOK_BOS = 0,
    TOK_Q = 1,
    TOK_A = 2,
    TOK_COLON = 3,
    TOK_COMMA = 4,
    TOK_NEWLINE = 5,
    NUM_SPECIAL_TOKENS = 6,
};

struct VocabSizes {
    int colors = 16;
    int animals = 24;
    int fruits = 16;
    int objects = 192;
    int filler = 192;
    int max_words = 2048;  // total vocabulary cap, including specials and labels
};

// Closed word-level vocabulary: one token per surface word. Content words are
// synthetic and partitioned into disjoint categories; label words (numerals,
// counts, ordinals) are answer-only vocabulary for the counting-style tasks.
class Vocabulary {
public:
    Vocabulary() = default;

    TokenId id_of(const std::string& word) const;
    const std::string& word_of(TokenId id) const;
    bool has_word(const std::string& word) const { return ids_.count(word) > 0; }
    size_t size() const { return words_.size(); }

    // category name -> token ids, insertion-ordered
    const std::vector<TokenId>& category(const std::string& name) const;
    bool has_category(const std::string& name) const { return categories_.count(name) > 0; }
    const std::vector<std::string>& category_names() const { return category_order_; }

    // all words across the five content categories, id order
    const std::vector<TokenId>& content_words() const { return content_words_; }

    std::string to_json() const;
    static Vocabulary from_json(const std::string& text);

    // Used only by the builder.
    TokenId add_word(const std::string& word, const std::string& category);

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> ids_;
    std::map<std::string, std::vector<TokenId>> categories_;
    std::vector<std::string> category_order_;
    std::vector<TokenId> content_words_;

    friend Vocabulary build_vocabulary(uint64_t seed, const VocabSizes& sizes);
};

// Deterministic per seed. Content words are random pronounceable strings of
// length 3..9; label categories are fixed ("numerals" 3..9, "counts" one..three,
// "ordinals" first..third).
Vocabulary build_vocabulary(uint64_t seed, const VocabSizes& sizes = {});

extern const char* const kContentCategories[5];  // colors animals fruits objects filler

}  // namespace tvlab
