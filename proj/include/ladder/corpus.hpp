#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ladder/errors.hpp"
#include "ladder/io.hpp"
#include "ladder/rng.hpp"

namespace ladder {

constexpr double kDifficultyMin = 1.0;
constexpr double kDifficultyMax = 10.0;

struct Problem {
    std::string id;
    std::string prompt;
    std::optional<std::string> reference_answer;
    double difficulty = 0.0;
};

// The unlabeled side never exposes answers to pipeline code. Ground truth
// for unlabeled problems, when present in the source file, lives only in
// audit_answers; selection and training take the Problem records, whose
// reference_answer is empty, and auditing code takes the map explicitly.
struct Corpus {
    std::vector<Problem> labeled;
    std::vector<Problem> unlabeled;
    std::map<std::string, std::string> audit_answers;
};

enum class CorpusSchema { labeled, unlabeled, mixed };

struct DifficultyRange {
    double lo = kDifficultyMin;
    double hi = kDifficultyMax;

    bool contains(double d) const { return d >= lo && d <= hi; }  // closed on both ends
};

namespace detail {

inline Problem parse_problem_line(const std::string& line, size_t lineno,
                                  std::optional<std::string>* answer_out) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw ValidationError("line " + std::to_string(lineno) + ": not an object");
    auto require = [&](const char* key) {
        if (!j.contains(key))
            throw ValidationError("line " + std::to_string(lineno) + ": missing \"" + key + "\"");
    };
    require("id");
    require("prompt");
    require("difficulty");
    if (!j["id"].is_string() || !j["prompt"].is_string() || !j["difficulty"].is_number())
        throw ValidationError("line " + std::to_string(lineno) + ": wrong field type");

    Problem p;
    p.id = j["id"].get<std::string>();
    p.prompt = j["prompt"].get<std::string>();
    p.difficulty = j["difficulty"].get<double>();
    if (p.id.empty()) throw ValidationError("line " + std::to_string(lineno) + ": empty id");
    if (p.prompt.empty())
        throw ValidationError("line " + std::to_string(lineno) + ": empty prompt");
    if (!(p.difficulty >= kDifficultyMin && p.difficulty <= kDifficultyMax))
        throw ValidationError("line " + std::to_string(lineno) + ": difficulty " +
                              std::to_string(p.difficulty) + " outside [1.0, 10.0]");

    *answer_out = std::nullopt;
    if (j.contains("answer") && !j["answer"].is_null()) {
        if (!j["answer"].is_string())
            throw ValidationError("line " + std::to_string(lineno) + ": answer must be a string");
        *answer_out = j["answer"].get<std::string>();
    }
    return p;
}

}  // namespace detail

// JSONL records: {"id": str, "prompt": str, "answer": str|null, "difficulty": real}.
// schema labeled: every record must carry an answer.
// schema unlabeled: answers are hidden away as audit ground truth.
// schema mixed: records with an answer load as labeled, the rest as unlabeled.
inline Corpus load_corpus(const std::filesystem::path& path, CorpusSchema schema) {
    Corpus corpus;
    std::map<std::string, size_t> seen;
    for_each_line(read_file(path), [&](const std::string& line, size_t lineno) {
        if (line.empty()) return;
        std::optional<std::string> answer;
        Problem p = detail::parse_problem_line(line, lineno, &answer);
        auto [it, fresh] = seen.emplace(p.id, lineno);
        if (!fresh)
            throw ValidationError("line " + std::to_string(lineno) + ": duplicate id \"" + p.id +
                                  "\" (first seen at line " + std::to_string(it->second) + ")");
        switch (schema) {
            case CorpusSchema::labeled:
                if (!answer)
                    throw ValidationError("line " + std::to_string(lineno) +
                                          ": labeled record without answer");
                p.reference_answer = std::move(answer);
                corpus.labeled.push_back(std::move(p));
                break;
            case CorpusSchema::unlabeled:
                if (answer) corpus.audit_answers.emplace(p.id, std::move(*answer));
                corpus.unlabeled.push_back(std::move(p));
                break;
            case CorpusSchema::mixed:
                if (answer) {
                    p.reference_answer = std::move(answer);
                    corpus.labeled.push_back(std::move(p));
                } else {
                    corpus.unlabeled.push_back(std::move(p));
                }
                break;
        }
    });
    return corpus;
}

inline void save_problems(const std::filesystem::path& path, const std::vector<Problem>& problems,
                          const std::map<std::string, std::string>* audit_answers = nullptr) {
    std::string out;
    for (const auto& p : problems) {
        nlohmann::ordered_json j;
        j["id"] = p.id;
        j["prompt"] = p.prompt;
        if (p.reference_answer) {
            j["answer"] = *p.reference_answer;
        } else if (audit_answers) {
            auto it = audit_answers->find(p.id);
            if (it != audit_answers->end())
                j["answer"] = it->second;
            else
                j["answer"] = nullptr;
        } else {
            j["answer"] = nullptr;
        }
        j["difficulty"] = p.difficulty;
        out += j.dump();
        out += '\n';
    }
    atomic_write_file(path, out);
}

// Splits a corpus into a supervised warm-up slice and the self-training pool.
// The labeled slice is sampled per distinct difficulty value so that levels
// with enough supply differ by at most one pick ("as evenly as possible").
// Same seed, same input: byte-identical result on every platform.
inline Corpus partition_by_difficulty(const std::vector<Problem>& all, DifficultyRange labeled_range,
                                      DifficultyRange unlabeled_range, size_t labeled_count,
                                      uint64_t seed) {
    if (labeled_range.lo > labeled_range.hi)
        throw ValidationError("labeled range is empty (lo > hi)");
    if (unlabeled_range.lo > unlabeled_range.hi)
        throw ValidationError("unlabeled range is empty (lo > hi)");

    std::map<std::string, size_t> ids;
    for (size_t i = 0; i < all.size(); ++i) {
        if (!ids.emplace(all[i].id, i).second)
            throw ValidationError("duplicate id \"" + all[i].id + "\" in partition input");
    }

    // Strata keyed by exact difficulty value, each shuffled with its own
    // derived seed so stratum order cannot leak between levels.
    std::map<double, std::vector<size_t>> strata;
    size_t available = 0;
    for (size_t i = 0; i < all.size(); ++i) {
        if (all[i].reference_answer && labeled_range.contains(all[i].difficulty)) {
            strata[all[i].difficulty].push_back(i);
            ++available;
        }
    }
    if (available < labeled_count)
        throw ValidationError("labeled range holds " + std::to_string(available) +
                              " answerable problems, need " + std::to_string(labeled_count));

    for (auto& [difficulty, members] : strata) {
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(difficulty));
        std::memcpy(&bits, &difficulty, sizeof(bits));
        Rng rng(derive_seed(seed, std::string_view("stratum"), bits));
        deterministic_shuffle(members, rng);
    }

    // Round-robin across levels in ascending difficulty until the quota is
    // met; a level out of supply is skipped, the rest keep filling.
    std::vector<bool> taken(all.size(), false);
    size_t assigned = 0;
    for (size_t round = 0; assigned < labeled_count; ++round) {
        bool progressed = false;
        for (auto& [difficulty, members] : strata) {
            if (round < members.size()) {
                taken[members[round]] = true;
                progressed = true;
                if (++assigned == labeled_count) break;
            }
        }
        if (!progressed) break;  // unreachable given the availability check
    }

    Corpus out;
    for (size_t i = 0; i < all.size(); ++i) {
        if (taken[i]) {
            out.labeled.push_back(all[i]);
        } else if (unlabeled_range.contains(all[i].difficulty)) {
            Problem p = all[i];
            if (p.reference_answer) {
                out.audit_answers.emplace(p.id, *p.reference_answer);
                p.reference_answer.reset();
            }
            out.unlabeled.push_back(std::move(p));
        }
    }
    auto by_id = [](const Problem& a, const Problem& b) { return a.id < b.id; };
    std::sort(out.labeled.begin(), out.labeled.end(), by_id);
    std::sort(out.unlabeled.begin(), out.unlabeled.end(), by_id);
    return out;
}

// Fixed-width bins covering [1.0, 10.0]; every bin is reported, including
// empty ones, so histograms line up across corpora. The upper corpus edge
// falls into the last bin.
inline std::vector<std::pair<double, size_t>> difficulty_histogram(
    const std::vector<Problem>& problems, double bin_width) {
    if (!(bin_width > 0.0)) throw ValidationError("bin_width must be > 0");
    const double span = kDifficultyMax - kDifficultyMin;
    size_t n_bins = static_cast<size_t>(std::ceil(span / bin_width - 1e-9));
    if (n_bins == 0) n_bins = 1;
    std::vector<std::pair<double, size_t>> bins(n_bins);
    for (size_t b = 0; b < n_bins; ++b)
        bins[b] = {kDifficultyMin + static_cast<double>(b) * bin_width, 0};
    for (const auto& p : problems) {
        // The 1e-9 nudge keeps exact bin edges (stored in binary) from
        // landing one bin low, e.g. (1.3 - 1.0) / 0.1 evaluating to 2.9999...
        auto idx = static_cast<size_t>(
            std::floor((p.difficulty - kDifficultyMin) / bin_width + 1e-9));
        if (idx >= n_bins) idx = n_bins - 1;
        ++bins[idx].second;
    }
    return bins;
}

}  // namespace ladder
