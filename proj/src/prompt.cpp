#include "tvlab/prompt.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

namespace tvlab {

using nlohmann::json;

const char* role_name(TokenRole role) {
    switch (role) {
        case TokenRole::BOS: return "BOS";
        case TokenRole::Q: return "Q";
        case TokenRole::COLON_AFTER_Q: return "COLON_AFTER_Q";
        case TokenRole::QUERY_WORD: return "QUERY_WORD";
        case TokenRole::COMMA: return "COMMA";
        case TokenRole::NEWLINE_BEFORE_A: return "NEWLINE_BEFORE_A";
        case TokenRole::A: return "A";
        case TokenRole::COLON_PRE_ANSWER: return "COLON_PRE_ANSWER";
        case TokenRole::ANSWER_WORD: return "ANSWER_WORD";
        case TokenRole::NEWLINE_AFTER_ANSWER: return "NEWLINE_AFTER_ANSWER";
    }
    return "?";
}

TokenRole role_from_name(const std::string& name) {
    for (int r = 0; r <= static_cast<int>(TokenRole::NEWLINE_AFTER_ANSWER); ++r) {
        auto role = static_cast<TokenRole>(r);
        if (name == role_name(role)) return role;
    }
    fail("unknown token role: '" + name + "'");
}

namespace {

void push(PromptLayout& l, TokenId tok, TokenRole role, int example) {
    l.tokens.push_back(tok);
    l.roles.push_back(role);
    l.example_index.push_back(example);
}

void push_example(PromptLayout& l, const Vocabulary& vocab, const QAPair& pair, int example,
                  bool with_answer) {
    push(l, TOK_Q, TokenRole::Q, example);
    push(l, TOK_COLON, TokenRole::COLON_AFTER_Q, example);
    for (size_t i = 0; i < pair.query.size(); ++i) {
        if (i > 0) push(l, TOK_COMMA, TokenRole::COMMA, example);
        push(l, vocab.id_of(pair.query[i]), TokenRole::QUERY_WORD, example);
    }
    push(l, TOK_NEWLINE, TokenRole::NEWLINE_BEFORE_A, example);
    push(l, TOK_A, TokenRole::A, example);
    push(l, TOK_COLON, TokenRole::COLON_PRE_ANSWER, example);
    if (!with_answer) return;
    for (size_t i = 0; i < pair.answer.size(); ++i) {
        if (i > 0) push(l, TOK_COMMA, TokenRole::COMMA, example);
        push(l, vocab.id_of(pair.answer[i]), TokenRole::ANSWER_WORD, example);
    }
    push(l, TOK_NEWLINE, TokenRole::NEWLINE_AFTER_ANSWER, example);
}

}  // namespace

PromptLayout compose_prompt(const Vocabulary& vocab, const std::string& task,
                            const std::vector<QAPair>& demos, const QAPair& final_query,
                            bool include_final_answer) {
    PromptLayout l;
    l.k = static_cast<int>(demos.size());
    l.task = task;
    l.test_query = final_query;
    l.has_final_answer = include_final_answer;
    push(l, TOK_BOS, TokenRole::BOS, -1);
    for (size_t i = 0; i < demos.size(); ++i) {
        push_example(l, vocab, demos[i], static_cast<int>(i), true);
    }
    push_example(l, vocab, final_query, l.k, include_final_answer);
    return l;
}

PromptLayout build_prompt(const Vocabulary& vocab, const std::string& task,
                          const Dataset& dataset, int k, const QAPair& test_query, bool dummy,
                          uint64_t seed) {
    check(k >= 0, "negative shot count");
    std::vector<size_t> candidates;
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (dataset[i].query != test_query.query) candidates.push_back(i);
    }
    if (candidates.size() < static_cast<size_t>(k) + (dummy ? 1 : 0)) {
        fail("task '" + task + "': " + std::to_string(k) + "-shot prompt needs " +
             std::to_string(k + (dummy ? 1 : 0)) + " pairs besides the test query, dataset offers " +
             std::to_string(candidates.size()));
    }
    Rng rng(derive_seed(seed, "prompt", task));
    auto picked = rng.sample_without_replacement(candidates.size(), static_cast<size_t>(k) + (dummy ? 1 : 0));
    std::vector<QAPair> demos;
    for (int i = 0; i < k; ++i) demos.push_back(dataset[candidates[picked[static_cast<size_t>(i)]]]);

    QAPair shown = test_query;
    if (dummy) {
        const QAPair& stand_in = dataset[candidates[picked[static_cast<size_t>(k)]]];
        shown.query = stand_in.query;
        shown.answer.clear();
    }
    PromptLayout l = compose_prompt(vocab, task, demos, shown, false);
    l.test_query = test_query;
    l.dummy = dummy;
    return l;
}

bool has_role(const PromptLayout& layout, TokenRole role, int example_index) {
    for (size_t i = 0; i < layout.size(); ++i) {
        if (layout.roles[i] == role && layout.example_index[i] == example_index) return true;
    }
    return false;
}

size_t locate_role(const PromptLayout& layout, TokenRole role, int example_index) {
    size_t found = layout.size();
    for (size_t i = 0; i < layout.size(); ++i) {
        if (layout.roles[i] != role || layout.example_index[i] != example_index) continue;
        if (found != layout.size()) {
            fail(std::string("role ") + role_name(role) + " at example " +
                 std::to_string(example_index) + " is not unique in this prompt");
        }
        found = i;
    }
    if (found == layout.size()) {
        fail(std::string("role ") + role_name(role) + " absent at example " +
             std::to_string(example_index));
    }
    return found;
}

GradeResult grade(const std::vector<std::string>& generated_units,
                  const std::vector<std::string>& gold_units) {
    GradeResult r;
    if (gold_units.empty()) {
        r.mean = 1.0;
        return r;
    }
    size_t correct = 0;
    for (size_t i = 0; i < gold_units.size(); ++i) {
        bool ok = i < generated_units.size() && generated_units[i] == gold_units[i];
        r.unit_correct.push_back(ok ? 1 : 0);
        if (ok) ++correct;
    }
    r.mean = static_cast<double>(correct) / static_cast<double>(gold_units.size());
    return r;
}

std::vector<std::string> detokenize(const Vocabulary& vocab, const std::vector<TokenId>& ids) {
    std::vector<std::string> units;
    std::string current;
    bool current_started = false;
    for (TokenId id : ids) {
        if (id == TOK_NEWLINE) break;
        if (id == TOK_COMMA) {
            units.push_back(current);
            current.clear();
            current_started = true;  // a comma opens the next (possibly empty) unit
            continue;
        }
        if (!current.empty()) current += ' ';
        current += vocab.word_of(id);
        current_started = true;
    }
    if (current_started || !current.empty()) units.push_back(current);
    return units;
}

std::string render_prompt_text(const Vocabulary& vocab, const PromptLayout& layout) {
    std::string out;
    for (size_t i = 0; i < layout.size(); ++i) {
        switch (layout.roles[i]) {
            case TokenRole::BOS: break;
            case TokenRole::Q: out += "Q"; break;
            case TokenRole::A: out += "A"; break;
            case TokenRole::COLON_AFTER_Q:
            case TokenRole::COLON_PRE_ANSWER: out += ":"; break;
            case TokenRole::COMMA: out += ","; break;
            case TokenRole::NEWLINE_BEFORE_A:
            case TokenRole::NEWLINE_AFTER_ANSWER: out += "\n"; break;
            case TokenRole::QUERY_WORD:
            case TokenRole::ANSWER_WORD:
                out += " ";
                out += vocab.word_of(layout.tokens[i]);
                break;
        }
    }
    return out;
}

std::string layout_roles_json(const PromptLayout& layout) {
    json j;
    j["k"] = layout.k;
    j["task"] = layout.task;
    j["dummy"] = layout.dummy;
    j["tokens"] = layout.tokens;
    std::vector<std::string> roles;
    for (auto r : layout.roles) roles.emplace_back(role_name(r));
    j["roles"] = roles;
    j["example_index"] = layout.example_index;
    return j.dump(2) + "\n";
}

DecodedPrompt decode_prompt(const Vocabulary& vocab, const PromptLayout& layout) {
    DecodedPrompt out;
    std::vector<QAPair> examples(static_cast<size_t>(layout.k) + 1);
    for (size_t i = 0; i < layout.size(); ++i) {
        const int ex = layout.example_index[i];
        if (ex < 0) continue;
        auto& pair = examples[static_cast<size_t>(ex)];
        if (layout.roles[i] == TokenRole::QUERY_WORD) {
            pair.query.push_back(vocab.word_of(layout.tokens[i]));
        } else if (layout.roles[i] == TokenRole::ANSWER_WORD) {
            pair.answer.push_back(vocab.word_of(layout.tokens[i]));
        }
    }
    out.final_query = examples.back().query;
    out.final_answer = examples.back().answer;
    examples.pop_back();
    out.demos = std::move(examples);
    return out;
}

std::vector<uint8_t> answer_loss_mask(const PromptLayout& layout) {
    if (layout.size() < 2) return {};
    std::vector<uint8_t> mask(layout.size() - 1, 0);
    for (size_t t = 0; t + 1 < layout.size(); ++t) {
        const TokenRole next = layout.roles[t + 1];
        const bool answer_comma =
            next == TokenRole::COMMA && layout.roles[t] == TokenRole::ANSWER_WORD;
        if (next == TokenRole::ANSWER_WORD || next == TokenRole::NEWLINE_AFTER_ANSWER ||
            answer_comma) {
            mask[t] = 1;
        }
    }
    return mask;
}

}  // namespace tvlab
