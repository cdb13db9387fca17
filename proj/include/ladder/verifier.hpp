#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "ladder/rational.hpp"

namespace ladder {

// Grading contract for a model output against a reference answer:
//   +1.0  boxed answer present and equivalent to the reference
//    0.0  boxed answer present but wrong
//   -0.5  no well-formed boxed answer at all
inline constexpr double kRewardCorrect = 1.0;
inline constexpr double kRewardWrong = 0.0;
inline constexpr double kRewardNoBox = -0.5;

// Returns the content of the last balanced \boxed{...} in the text, walking
// occurrences from the end. A box whose braces never balance is not a box;
// if no occurrence balances, there is no boxed answer.
inline std::optional<std::string> extract_boxed(std::string_view text) {
    constexpr std::string_view kTok = "\\boxed{";
    size_t search_end = text.size();
    while (true) {
        size_t at = text.rfind(kTok, search_end == 0 ? 0 : search_end - 1);
        if (at == std::string_view::npos) return std::nullopt;
        size_t start = at + kTok.size();
        int depth = 1;
        for (size_t i = start; i < text.size(); ++i) {
            if (text[i] == '{') {
                ++depth;
            } else if (text[i] == '}') {
                if (--depth == 0) return std::string(text.substr(start, i - start));
            }
        }
        if (at == 0) return std::nullopt;
        search_end = at;
    }
}

struct NormalizedAnswer {
    std::string text;
    std::optional<Rational> value;

    friend bool operator==(const NormalizedAnswer& a, const NormalizedAnswer& b) {
        if (a.value && b.value) return *a.value == *b.value;
        return a.text == b.text;
    }
};

namespace detail {

inline bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string collapse_spaces(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_run = false;
    for (char c : s) {
        if (is_space(c)) {
            in_run = true;
            continue;
        }
        if (in_run && !out.empty()) out.push_back(' ');
        in_run = false;
        out.push_back(c);
    }
    return out;
}

// "1,234" or "-1,234,567.89": digit groups of three between commas. Anything
// else keeps its commas and is not treated as a number.
inline bool is_grouped_number(std::string_view s) {
    size_t i = 0;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    size_t lead = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i, ++lead;
    if (lead < 1 || lead > 3) return false;
    bool any_group = false;
    while (i < s.size() && s[i] == ',') {
        ++i;
        for (int k = 0; k < 3; ++k, ++i)
            if (i >= s.size() || s[i] < '0' || s[i] > '9') return false;
        any_group = true;
    }
    if (!any_group) return false;
    if (i < s.size() && s[i] == '.') {
        ++i;
        size_t frac = 0;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i, ++frac;
        if (frac == 0) return false;
    }
    return i == s.size();
}

}  // namespace detail

// Deterministic cleanup applied to both model answers and references:
// trim, strip one layer of $...$, collapse whitespace runs, drop a trailing
// period, remove thousands separators from pure numbers, then try to read
// the result as an exact rational (integer, decimal, or \frac{a}{b}).
inline NormalizedAnswer normalize_answer(std::string_view raw) {
    std::string s = detail::trim(raw);
    if (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
        s = detail::trim(std::string_view(s).substr(1, s.size() - 2));
    }
    s = detail::collapse_spaces(s);
    if (!s.empty() && s.back() == '.') {
        s.pop_back();
        s = detail::trim(s);
    }
    if (detail::is_grouped_number(s)) {
        std::string no_sep;
        no_sep.reserve(s.size());
        for (char c : s)
            if (c != ',') no_sep.push_back(c);
        s = std::move(no_sep);
    }
    NormalizedAnswer out{std::move(s), std::nullopt};
    out.value = parse_decimal(out.text);
    if (!out.value) out.value = parse_frac(out.text);
    return out;
}

// Equivalence: exact rational equality when both sides are numeric,
// otherwise byte equality of the normalized text.
inline bool answers_equal(std::string_view a, std::string_view b) {
    return normalize_answer(a) == normalize_answer(b);
}

// True iff the output contains a boxed answer equivalent to the reference.
// The reference is a bare answer string, not a boxed expression.
inline bool verify(std::string_view output, std::string_view reference) {
    auto boxed = extract_boxed(output);
    if (!boxed) return false;
    return answers_equal(*boxed, reference);
}

inline double reward(std::string_view output, std::string_view reference) {
    auto boxed = extract_boxed(output);
    if (!boxed) return kRewardNoBox;
    return answers_equal(*boxed, reference) ? kRewardCorrect : kRewardWrong;
}

}  // namespace ladder
