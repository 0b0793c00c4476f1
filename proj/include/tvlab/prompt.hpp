#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tvlab/tasks.hpp"
#include "tvlab/vocab.hpp"

namespace tvlab {

// Structural role of one prompt token. Every token has exactly one role.
enum class TokenRole : uint8_t {
    BOS,
    Q,
    COLON_AFTER_Q,
    QUERY_WORD,
    COMMA,
    NEWLINE_BEFORE_A,
    A,
    COLON_PRE_ANSWER,
    ANSWER_WORD,
    NEWLINE_AFTER_ANSWER,
};

const char* role_name(TokenRole role);
TokenRole role_from_name(const std::string& name);

// A token sequence with per-token role and example annotations. Example i is
// the i-th demonstration; the test query is example k. Prompts end at the
// pre-answer colon of the test query unless built with a final answer
// (training episodes).
struct PromptLayout {
    std::vector<TokenId> tokens;
    std::vector<TokenRole> roles;
    std::vector<int> example_index;
    int k = 0;
    std::string task;
    QAPair test_query;  // the graded query; in dummy mode the shown one differs
    bool dummy = false;
    bool has_final_answer = false;

    size_t size() const { return tokens.size(); }
};

// k demonstrations sampled without replacement from `dataset`, excluding the
// test query; then the test query (or, in dummy mode, a sampled stand-in
// distinct from the demonstrations) up to its pre-answer colon.
PromptLayout build_prompt(const Vocabulary& vocab, const std::string& task,
                          const Dataset& dataset, int k, const QAPair& test_query, bool dummy,
                          uint64_t seed);

// Explicit composition (training episodes, tests). If include_final_answer is
// set the final example carries its answer and trailing newline.
PromptLayout compose_prompt(const Vocabulary& vocab, const std::string& task,
                            const std::vector<QAPair>& demos, const QAPair& final_query,
                            bool include_final_answer);

// Position of the unique (role, example_index) token. Errors when absent or
// ambiguous (word-level roles repeat within an example).
size_t locate_role(const PromptLayout& layout, TokenRole role, int example_index);
bool has_role(const PromptLayout& layout, TokenRole role, int example_index);

struct GradeResult {
    std::vector<uint8_t> unit_correct;  // one per gold unit
    double mean = 0.0;
};

// Exact string match per output unit, averaged over the gold units. Surplus
// generated units are ignored; missing ones are wrong.
GradeResult grade(const std::vector<std::string>& generated_units,
                  const std::vector<std::string>& gold_units);

// Splits a generated token stream into answer units on comma tokens, stopping
// at the first newline. A unit that spans several word tokens is joined with
// spaces (and so never matches a single-word gold unit).
std::vector<std::string> detokenize(const Vocabulary& vocab, const std::vector<TokenId>& ids);

// Plain-text rendering ("Q: a, b\nA: c\n...") and the role sidecar.
std::string render_prompt_text(const Vocabulary& vocab, const PromptLayout& layout);
std::string layout_roles_json(const PromptLayout& layout);

// Inverse of the grammar: demonstrations and shown final query read back from
// tokens/roles.
struct DecodedPrompt {
    std::vector<QAPair> demos;
    std::vector<std::string> final_query;
    std::vector<std::string> final_answer;  // empty unless has_final_answer
};
DecodedPrompt decode_prompt(const Vocabulary& vocab, const PromptLayout& layout);

// True at target position t (predicting tokens[t+1]) iff the predicted token
// is an answer unit, an answer-internal comma, or the answer's newline.
std::vector<uint8_t> answer_loss_mask(const PromptLayout& layout);

}  // namespace tvlab
