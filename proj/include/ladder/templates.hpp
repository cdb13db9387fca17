#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ladder/errors.hpp"

namespace ladder {

// Prompt templates are fixed strings with named placeholders. The wording
// is part of the grading contract (the boxed-answer instruction is what the
// verifier keys on), so tests pin these bodies byte for byte.
struct PromptTemplate {
    std::string name;
    std::string system_text;  // empty means: no system turn
    std::string user_text;
};

struct RenderedPrompt {
    std::string system;
    std::string user;

    std::string flat() const { return system.empty() ? user : system + "\n\n" + user; }
};

inline const PromptTemplate& math_template() {
    static const PromptTemplate t{
        "math",
        "Please reason step by step, and output your final answer within \\boxed{}.",
        "{Question} Let's think step by step and output the final answer within \\boxed{}."};
    return t;
}

inline const PromptTemplate& gpqa_template() {
    static const PromptTemplate t{
        "gpqa",
        "Reason step by step, and output your final answer (A, B, C, or D) within \\boxed{}.",
        "{Question} Reason step by step and output the final answer (A, B, C, or D) within "
        "\\boxed{}."};
    return t;
}

inline const PromptTemplate& reflection_template() {
    static const PromptTemplate t{
        "reflection", "",
        "You are given multiple proposed answers to a math problem.\n"
        "Your task is to carefully examine these answers and determine whether any of them is "
        "correct.\n"
        "\n"
        "- If one of the proposed answers is correct, return it as the final answer.\n"
        "\n"
        "- If none of the proposed answers is correct, re-solve the problem step-by-step and "
        "provide the correct answer.\n"
        "\n"
        "- Always show the final answer clearly inside \\boxed{}.\n"
        "\n"
        "Question:\n"
        "{question}\n"
        "\n"
        "Proposed Answers:\n"
        "{answers}\n"
        "\n"
        "Now, please reflect on the answers above and give the final correct answer in "
        "\\boxed{}."};
    return t;
}

namespace detail {

// Single pass over the template text: placeholders found in the template
// are substituted, substituted content is never re-scanned, and a template
// placeholder without a binding is an error.
inline std::string substitute(
    std::string_view text, const std::string& tmpl_name,
    const std::vector<std::pair<std::string_view, std::string_view>>& bindings, size_t* hits) {
    std::string out;
    out.reserve(text.size());
    size_t pos = 0;
    while (pos < text.size()) {
        size_t open = text.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        size_t close = text.find('}', open);
        if (close == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        out.append(text.substr(pos, open - pos));
        std::string_view token = text.substr(open, close - open + 1);
        bool bound = false;
        for (const auto& [key, value] : bindings) {
            if (token == key) {
                out.append(value);
                bound = true;
                if (hits) ++*hits;
                break;
            }
        }
        if (!bound) {
            if (token == "{Question}" || token == "{question}" || token == "{answers}")
                throw ValidationError("template \"" + tmpl_name + "\": unresolved placeholder " +
                                      std::string(token));
            out.append(token);  // literal braces that are not placeholders, e.g. \boxed{}
        }
        pos = close + 1;
    }
    return out;
}

}  // namespace detail

inline RenderedPrompt render(const PromptTemplate& tmpl, std::string_view question) {
    size_t hits = 0;
    RenderedPrompt out;
    out.system = detail::substitute(tmpl.system_text, tmpl.name, {{"{Question}", question}}, &hits);
    size_t user_hits = 0;
    out.user =
        detail::substitute(tmpl.user_text, tmpl.name, {{"{Question}", question}}, &user_hits);
    if (hits + user_hits == 0)
        throw ValidationError("template \"" + tmpl.name + "\" has no {Question} placeholder");
    return out;
}

// Proposed answers are rendered one per line, in the order given. Callers
// pass distinct proposals in first-appearance order.
inline RenderedPrompt render_reflection(std::string_view question,
                                        const std::vector<std::string>& proposals) {
    if (proposals.empty()) throw ValidationError("reflection needs at least one proposal");
    std::string answers;
    for (size_t i = 0; i < proposals.size(); ++i) {
        if (i) answers += '\n';
        answers += proposals[i];
    }
    const PromptTemplate& tmpl = reflection_template();
    RenderedPrompt out{tmpl.system_text, tmpl.user_text};
    out.user = detail::substitute(tmpl.user_text, tmpl.name,
                                  {{"{question}", question}, {"{answers}", answers}}, nullptr);
    return out;
}

}  // namespace ladder
