#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ladder/backend.hpp"
#include "ladder/corpus.hpp"
#include "ladder/errors.hpp"
#include "ladder/rng.hpp"
#include "ladder/templates.hpp"
#include "ladder/verifier.hpp"

namespace ladder {

struct InferenceBundle {
    std::string problem_id;
    std::vector<std::string> outputs;  // N raw completions
};

struct PseudoLabel {
    std::string id;
    std::string answer;   // normalized answer text
    std::string source;   // "consistent" or "resolved"
    double entropy = 0.0;
    int iteration = 0;
};

struct SelectionConfig {
    int n_inferences = 2;
    double tau = 0.3;            // share of inconsistent samples sent to reflection
    double temperature = 1.0;
    int max_tokens = 1024;
    int in_flight = 4;           // concurrent backend calls
    // When set, outputs without an extractable answer enter the histogram
    // as a distinguished symbol instead of being dropped from it.
    bool count_missing_answers = false;
};

struct SelectionResult {
    std::vector<PseudoLabel> consistent;
    std::vector<PseudoLabel> resolved;
    std::vector<std::string> deferred_ids;
    double cons_rate = 0.0;
    size_t pool_size = 0;
};

namespace detail {

// Answers are bucketed by equivalence (exact rational when numeric), not by
// surface text, so "0.5" and "\frac{1}{2}" agree. The canonical key carries
// a tag byte to keep numeric and textual keys from ever colliding.
inline std::string canonical_answer_key(const NormalizedAnswer& a) {
    if (a.value)
        return "r:" + std::to_string(a.value->num) + "/" + std::to_string(a.value->den);
    return "t:" + a.text;
}

constexpr const char* kMissingKey = "\x01missing";

}  // namespace detail

// Histogram over the bundle's extractable answers, keyed canonically. The
// display text of each bucket is the first-seen normalized form.
struct AnswerHistogram {
    std::map<std::string, size_t> counts;           // canonical key -> count
    std::map<std::string, std::string> display;     // canonical key -> normalized text
    size_t extracted = 0;
    size_t missing = 0;
};

inline AnswerHistogram answer_histogram(const std::vector<std::string>& outputs,
                                        bool count_missing_answers = false) {
    AnswerHistogram h;
    for (const auto& out : outputs) {
        auto boxed = extract_boxed(out);
        if (!boxed) {
            ++h.missing;
            if (count_missing_answers) ++h.counts[detail::kMissingKey];
            continue;
        }
        NormalizedAnswer norm = normalize_answer(*boxed);
        std::string key = detail::canonical_answer_key(norm);
        if (++h.counts[key] == 1) h.display.emplace(key, norm.text);
        ++h.extracted;
    }
    return h;
}

// Shannon entropy over the histogram's relative frequencies, natural log,
// with 0 log 0 := 0. An empty histogram has entropy 0 by convention; callers
// defer such bundles rather than ranking them.
inline double prediction_entropy(const AnswerHistogram& h) {
    size_t total = 0;
    for (const auto& [key, count] : h.counts) total += count;
    if (total == 0) return 0.0;
    double entropy = 0.0;
    for (const auto& [key, count] : h.counts) {
        if (count == 0) continue;
        double p = static_cast<double>(count) / static_cast<double>(total);
        entropy -= p * std::log(p);
    }
    return entropy;
}

// A bundle is consistent when every output yields an extractable answer and
// all answers are equivalent.
inline bool is_consistent(const AnswerHistogram& h, size_t n_outputs) {
    return h.missing == 0 && h.extracted == n_outputs && h.counts.size() == 1;
}

// Picks exactly floor(tau * M) of the M candidates, lowest entropy first,
// ties broken by ascending id. This is a quantile rule, not a cutoff: with
// N=2 every two-way disagreement has entropy ln 2, and a fixed threshold
// would select everything or nothing.
inline std::vector<std::string> apply_threshold(
    std::vector<std::pair<std::string, double>> entropies, double tau) {
    if (tau < 0.0 || tau > 1.0) throw ValidationError("tau must be in [0, 1]");
    const size_t m = entropies.size();
    // floor() on the binary image of decimal tau values can land one below
    // the exact product (0.29 * 100 evaluates under 29); the nudge keeps
    // counts exact for any tau with a short decimal form.
    auto k = static_cast<size_t>(std::floor(tau * static_cast<double>(m) + 1e-9));
    if (k > m) k = m;
    std::sort(entropies.begin(), entropies.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return a.first < b.first;
    });
    std::vector<std::string> out;
    out.reserve(k);
    for (size_t i = 0; i < k; ++i) out.push_back(entropies[i].first);
    return out;
}

// Asks the backend to adjudicate a disagreeing bundle. Returns a resolved
// pseudo-label carrying the bundle's entropy, or nullopt when the reply has
// no extractable answer (the caller defers the sample).
inline std::optional<PseudoLabel> reflection_resolve(const std::string& problem_id,
                                                     const std::string& question,
                                                     const std::vector<std::string>& proposals,
                                                     double bundle_entropy, Backend& backend,
                                                     double temperature, uint64_t seed,
                                                     int max_tokens) {
    ReflectionRequest req;
    req.question = question;
    req.proposals = proposals;
    req.problem_id = problem_id;
    req.temperature = temperature;
    req.seed = seed;
    req.max_tokens = max_tokens;
    std::string reply = backend.reflect(req);
    auto boxed = extract_boxed(reply);
    if (!boxed) return std::nullopt;
    PseudoLabel label;
    label.id = problem_id;
    label.answer = normalize_answer(*boxed).text;
    label.source = "resolved";
    label.entropy = bundle_entropy;
    return label;
}

// Merges the two label sources for one iteration, stamps the iteration
// index, sorts by id, and enforces per-run uniqueness upstream invariants.
inline std::vector<PseudoLabel> build_selected(std::vector<PseudoLabel> consistent,
                                               std::vector<PseudoLabel> resolved, int iteration) {
    std::vector<PseudoLabel> out = std::move(consistent);
    out.insert(out.end(), std::make_move_iterator(resolved.begin()),
               std::make_move_iterator(resolved.end()));
    for (auto& label : out) label.iteration = iteration;
    std::sort(out.begin(), out.end(),
              [](const PseudoLabel& a, const PseudoLabel& b) { return a.id < b.id; });
    for (size_t i = 1; i < out.size(); ++i)
        if (out[i].id == out[i - 1].id)
            throw Error("duplicate pseudo-label for id \"" + out[i].id + "\"");
    return out;
}

namespace detail {

// Fan-out helper: runs fn(i) for i in [0, n) on up to in_flight threads.
// Results land in caller-owned slots indexed by i, so scheduling order can
// never change the outcome.
template <typename Fn>
inline void parallel_for(size_t n, int in_flight, Fn&& fn) {
    if (n == 0) return;
    size_t workers = std::min<size_t>(std::max(in_flight, 1), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

// One full divide-and-conquer pass over a pool of problems:
//   generate N outputs each, split consistent / inconsistent, rank the
//   inconsistent by entropy, send the lowest-entropy floor(tau * M) to
//   reflection, defer the rest.
// draw_seed_base already encodes run seed, phase, and iteration; per-problem
// and per-draw components are derived here, so concurrency cannot reorder
// outcomes and a resumed run regenerates identical bundles.
inline SelectionResult run_selection(const std::vector<Problem>& pool, Backend& backend,
                                     const SelectionConfig& cfg, uint64_t draw_seed_base) {
    if (cfg.n_inferences < 1) throw ValidationError("n_inferences must be >= 1");
    if (cfg.tau < 0.0 || cfg.tau > 1.0) throw ValidationError("tau must be in [0, 1]");

    SelectionResult result;
    result.pool_size = pool.size();
    if (pool.empty()) return result;

    std::vector<InferenceBundle> bundles(pool.size());
    detail::parallel_for(pool.size(), cfg.in_flight, [&](size_t i) {
        const Problem& p = pool[i];
        RenderedPrompt prompt = render(math_template(), p.prompt);
        GenerationRequest req;
        req.template_name = math_template().name;
        req.system = prompt.system;
        req.user = prompt.user;
        req.problem_id = p.id;
        req.n = cfg.n_inferences;
        req.temperature = cfg.temperature;
        req.seed = draw_seed_base;
        req.max_tokens = cfg.max_tokens;
        bundles[i] = InferenceBundle{p.id, backend.generate(req)};
    });

    struct Pending {
        size_t pool_index;
        double entropy;
        std::vector<std::string> proposals;
    };
    std::vector<PseudoLabel> consistent;
    std::vector<Pending> inconsistent;
    for (size_t i = 0; i < bundles.size(); ++i) {
        AnswerHistogram h = answer_histogram(bundles[i].outputs, cfg.count_missing_answers);
        if (is_consistent(h, bundles[i].outputs.size())) {
            PseudoLabel label;
            label.id = bundles[i].problem_id;
            label.answer = h.display.begin()->second;
            label.source = "consistent";
            label.entropy = 0.0;
            consistent.push_back(std::move(label));
            continue;
        }
        if (h.extracted == 0) {
            // Nothing usable in the bundle; defer without ranking.
            result.deferred_ids.push_back(bundles[i].problem_id);
            continue;
        }
        Pending pending;
        pending.pool_index = i;
        pending.entropy = prediction_entropy(h);
        // Proposals in first-appearance order, one per distinct answer.
        std::set<std::string> seen;
        for (const auto& out : bundles[i].outputs) {
            auto boxed = extract_boxed(out);
            if (!boxed) continue;
            NormalizedAnswer norm = normalize_answer(*boxed);
            if (seen.insert(detail::canonical_answer_key(norm)).second)
                pending.proposals.push_back(norm.text);
        }
        inconsistent.push_back(std::move(pending));
    }

    result.cons_rate =
        static_cast<double>(consistent.size()) / static_cast<double>(pool.size());

    std::vector<std::pair<std::string, double>> ranked;
    ranked.reserve(inconsistent.size());
    std::map<std::string, size_t> pending_by_id;
    for (size_t i = 0; i < inconsistent.size(); ++i) {
        const std::string& id = pool[inconsistent[i].pool_index].id;
        ranked.emplace_back(id, inconsistent[i].entropy);
        pending_by_id[id] = i;
    }
    std::vector<std::string> chosen = apply_threshold(std::move(ranked), cfg.tau);
    std::set<std::string> chosen_set(chosen.begin(), chosen.end());

    std::vector<std::optional<PseudoLabel>> resolved_slots(chosen.size());
    detail::parallel_for(chosen.size(), cfg.in_flight, [&](size_t i) {
        const Pending& pending = inconsistent[pending_by_id.at(chosen[i])];
        const Problem& p = pool[pending.pool_index];
        resolved_slots[i] = reflection_resolve(
            p.id, p.prompt, pending.proposals, pending.entropy, backend, cfg.temperature,
            derive_seed(draw_seed_base, std::string_view("reflection")), cfg.max_tokens);
    });

    std::vector<PseudoLabel> resolved;
    for (size_t i = 0; i < chosen.size(); ++i) {
        if (resolved_slots[i])
            resolved.push_back(std::move(*resolved_slots[i]));
        else
            result.deferred_ids.push_back(chosen[i]);  // reflection came back unboxed
    }
    for (const auto& pending : inconsistent) {
        const std::string& id = pool[pending.pool_index].id;
        if (!chosen_set.count(id)) result.deferred_ids.push_back(id);
    }

    std::sort(result.deferred_ids.begin(), result.deferred_ids.end());
    std::sort(consistent.begin(), consistent.end(),
              [](const PseudoLabel& a, const PseudoLabel& b) { return a.id < b.id; });
    std::sort(resolved.begin(), resolved.end(),
              [](const PseudoLabel& a, const PseudoLabel& b) { return a.id < b.id; });
    result.consistent = std::move(consistent);
    result.resolved = std::move(resolved);
    return result;
}

}  // namespace ladder
