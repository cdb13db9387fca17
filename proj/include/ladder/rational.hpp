#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>

namespace ladder {

// Exact rational on int64 with overflow detection. Values that do not fit
// are reported as "not numeric" (std::nullopt) by the parsers; answer
// comparison then falls back to text equality, which is the conservative
// choice for a grader.
struct Rational {
    long long num = 0;
    long long den = 1;  // always > 0, gcd(|num|, den) == 1

    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num == b.num && a.den == b.den;
    }
};

namespace detail {

inline bool fits_i64(__int128 v) {
    return v >= static_cast<__int128>(INT64_MIN) && v <= static_cast<__int128>(INT64_MAX);
}

inline std::optional<Rational> make_rational(__int128 num, __int128 den) {
    if (den == 0) return std::nullopt;
    if (den < 0) {
        num = -num;
        den = -den;
    }
    __int128 a = num < 0 ? -num : num;
    __int128 b = den;
    while (b != 0) {
        __int128 t = a % b;
        a = b;
        b = t;
    }
    if (a != 0) {
        num /= a;
        den /= a;
    }
    if (!fits_i64(num) || !fits_i64(den)) return std::nullopt;
    return Rational{static_cast<long long>(num), static_cast<long long>(den)};
}

}  // namespace detail

// Parses "123", "-4.50", "+.5". Returns nullopt for anything else or on
// overflow. No exponents, no separators; callers strip those first.
inline std::optional<Rational> parse_decimal(std::string_view s) {
    if (s.empty()) return std::nullopt;
    size_t i = 0;
    bool neg = false;
    if (s[i] == '+' || s[i] == '-') {
        neg = s[i] == '-';
        ++i;
    }
    __int128 num = 0;
    __int128 den = 1;
    size_t digits = 0;
    bool seen_dot = false;
    for (; i < s.size(); ++i) {
        char c = s[i];
        if (c == '.') {
            if (seen_dot) return std::nullopt;
            seen_dot = true;
            continue;
        }
        if (c < '0' || c > '9') return std::nullopt;
        ++digits;
        if (digits > 37) return std::nullopt;  // keeps __int128 arithmetic exact
        num = num * 10 + (c - '0');
        if (seen_dot) den *= 10;
    }
    if (digits == 0) return std::nullopt;
    return detail::make_rational(neg ? -num : num, den);
}

// Parses "\frac{a}{b}" with optional leading sign, a and b plain integers.
inline std::optional<Rational> parse_frac(std::string_view s) {
    size_t i = 0;
    bool neg = false;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        neg = s[i] == '-';
        ++i;
    }
    constexpr std::string_view kFrac = "\\frac{";
    if (s.substr(i).substr(0, kFrac.size()) != kFrac) return std::nullopt;
    i += kFrac.size();

    auto read_int = [&](char closer) -> std::optional<__int128> {
        bool part_neg = false;
        if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
            part_neg = s[i] == '-';
            ++i;
        }
        __int128 v = 0;
        size_t digits = 0;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
            if (++digits > 37) return std::nullopt;
            v = v * 10 + (s[i] - '0');
            ++i;
        }
        if (digits == 0 || i >= s.size() || s[i] != closer) return std::nullopt;
        ++i;
        return part_neg ? -v : v;
    };

    auto a = read_int('}');
    if (!a) return std::nullopt;
    if (i >= s.size() || s[i] != '{') return std::nullopt;
    ++i;
    auto b = read_int('}');
    if (!b || i != s.size()) return std::nullopt;
    return detail::make_rational(neg ? -*a : *a, *b);
}

}  // namespace ladder
