#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "ladder/errors.hpp"
#include "ladder/rational.hpp"
#include "ladder/rng.hpp"
#include "ladder/templates.hpp"
#include "ladder/verifier.hpp"

namespace ladder {

struct GenerationRequest {
    std::string template_name;
    std::string system;      // rendered system turn, may be empty
    std::string user;        // rendered user turn
    std::string problem_id;  // routing metadata; not part of cache keys
    int n = 1;
    double temperature = 1.0;
    uint64_t seed = 0;
    int max_tokens = 1024;

    std::string flat_prompt() const {
        return system.empty() ? user : system + "\n\n" + user;
    }
};

struct ReflectionRequest {
    std::string question;
    std::vector<std::string> proposals;  // distinct, first-appearance order
    std::string problem_id;
    double temperature = 1.0;
    uint64_t seed = 0;
    int max_tokens = 1024;
};

struct TrainingEvent {
    size_t labels_used = 0;
    double fraction_of_corpus = 0.0;  // share of the corpus in this training batch
};

// A policy backend produces completions and absorbs training notifications.
// snapshot/restore exist so a crashed run can resume with the backend in
// exactly the state it had when the last iteration was committed.
class Backend {
  public:
    virtual ~Backend() = default;
    virtual std::vector<std::string> generate(const GenerationRequest& req) = 0;
    virtual std::string reflect(const ReflectionRequest& req) = 0;
    virtual void notify_trained(const TrainingEvent& event) = 0;
    virtual std::string version() const = 0;
    virtual nlohmann::json snapshot() const = 0;
    virtual void restore(const nlohmann::json& state) = 0;
};

struct SimulatedBackendConfig {
    double skill = 5.0;
    double slope = 1.0;              // steepness of the difficulty response
    int distractor_pool_size = 3;    // wrong answers per problem
    double skill_gain = 0.15;        // skill added per fully-covering training event
    double reflection_bonus = 1.0;   // reflection sees the problem with this much extra skill
};

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Stands in for an LLM at desk scale. Each draw is correct with probability
// sigmoid(slope * (skill - difficulty)), otherwise it picks one of a fixed
// finite set of wrong answers for the problem, so two wrong draws can agree.
// Every output is deterministic given (problem_id, request seed, draw index).
class SimulatedBackend : public Backend {
  public:
    explicit SimulatedBackend(SimulatedBackendConfig cfg) : cfg_(cfg) {
        if (!(cfg_.slope > 0.0)) throw ValidationError("slope must be > 0");
        if (cfg_.distractor_pool_size < 1)
            throw ValidationError("distractor_pool_size must be >= 1");
        if (cfg_.skill_gain < 0.0) throw ValidationError("skill_gain must be >= 0");
    }

    void register_problem(const std::string& id, double difficulty, const std::string& answer) {
        problems_[id] = Entry{difficulty, answer};
    }

    size_t registered() const { return problems_.size(); }

    std::vector<std::string> generate(const GenerationRequest& req) override {
        std::shared_lock lock(mu_);
        const Entry& e = lookup(req.problem_id);
        std::vector<std::string> out;
        out.reserve(static_cast<size_t>(req.n));
        double p = sigmoid(cfg_.slope * skill_offset(e));
        for (int j = 0; j < req.n; ++j) {
            std::string answer;
            if (req.temperature == 0.0) {
                // Greedy decoding returns the modal answer: the true one if
                // its mass beats any single distractor, else distractor 0.
                double per_distractor = (1.0 - p) / cfg_.distractor_pool_size;
                answer = p >= per_distractor ? e.answer : distractor(e, 0);
            } else {
                Rng rng(derive_seed(req.seed, std::string_view(req.problem_id),
                                    static_cast<uint64_t>(j)));
                if (rng.next_double() < p)
                    answer = e.answer;
                else
                    answer = distractor(e, static_cast<int>(rng.below(
                                               static_cast<uint64_t>(cfg_.distractor_pool_size))));
            }
            out.push_back("After working through the steps, the final answer is \\boxed{" +
                          answer + "}.");
        }
        return out;
    }

    std::string reflect(const ReflectionRequest& req) override {
        std::shared_lock lock(mu_);
        if (req.proposals.empty()) throw ValidationError("reflection needs proposals");
        const Entry& e = lookup(req.problem_id);
        // Reflection examines concrete candidates, which is easier than
        // solving cold; modeled as a skill bonus.
        double p = sigmoid(cfg_.slope * (skill_offset(e) + cfg_.reflection_bonus));
        Rng rng(derive_seed(req.seed, std::string_view(req.problem_id),
                            std::string_view("reflect")));
        std::string answer;
        if (rng.next_double() < p) {
            answer = e.answer;
        } else {
            answer = req.proposals.front();
            for (const auto& prop : req.proposals)
                if (prop < answer) answer = prop;
        }
        return "Reflecting on the proposals, the final correct answer is \\boxed{" + answer +
               "}.";
    }

    void notify_trained(const TrainingEvent& event) override {
        std::unique_lock lock(mu_);
        if (event.fraction_of_corpus < 0.0 || event.fraction_of_corpus > 1.0)
            throw ValidationError("fraction_of_corpus outside [0, 1]");
        skill_delta_ += cfg_.skill_gain * event.fraction_of_corpus;
        ++events_;
    }

    std::string version() const override {
        std::shared_lock lock(mu_);
        return "sim-v" + std::to_string(events_);
    }

    double skill() const {
        std::shared_lock lock(mu_);
        return cfg_.skill + skill_delta_;
    }

    nlohmann::json snapshot() const override {
        std::shared_lock lock(mu_);
        return {{"kind", "simulated"}, {"skill_delta", skill_delta_}, {"events", events_}};
    }

    void restore(const nlohmann::json& state) override {
        std::unique_lock lock(mu_);
        if (!state.is_object() || state.value("kind", "") != std::string("simulated"))
            throw StateError("backend snapshot is not from a simulated backend");
        skill_delta_ = state.at("skill_delta").get<double>();
        events_ = state.at("events").get<uint64_t>();
    }

  private:
    struct Entry {
        double difficulty = 0.0;
        std::string answer;
    };

    const Entry& lookup(const std::string& id) const {
        auto it = problems_.find(id);
        if (it == problems_.end())
            throw BackendError("simulated backend: unknown problem_id \"" + id + "\"");
        return it->second;
    }

    double skill_offset(const Entry& e) const {
        return cfg_.skill + skill_delta_ - e.difficulty;
    }

    // Wrong answers form a fixed pool per problem. Integer answers shift by
    // k+1 so distractors look like near misses; anything else gets a textual
    // variant. Both are stable across calls.
    std::string distractor(const Entry& e, int k) const {
        auto norm = normalize_answer(e.answer);
        if (norm.value && norm.value->den == 1) {
            long long shifted = norm.value->num + k + 1;
            return std::to_string(shifted);
        }
        std::string out = e.answer;
        for (int i = 0; i <= k; ++i) out += '\'';
        return out;
    }

    SimulatedBackendConfig cfg_;
    double skill_delta_ = 0.0;
    uint64_t events_ = 0;
    std::map<std::string, Entry> problems_;
    mutable std::shared_mutex mu_;
};

}  // namespace ladder
