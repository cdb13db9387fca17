#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ladder/errors.hpp"
#include "ladder/policy.hpp"
#include "ladder/rng.hpp"

namespace ladder {

struct GrpoConfig {
    double epsilon_clip = 0.2;
    double beta_kl = 0.001;
    int group_size = 8;
    double learning_rate = 5e-7;
    double std_guard = 1e-8;
    // When set, the surrogate is min(A, clip(A, 1-eps, 1+eps)) with no
    // importance ratio. This is a degenerate objective (constant in the
    // policy) kept behind a flag for ablation; the default is the standard
    // ratio-clipped form.
    bool advantage_only_surrogate = false;
};

struct GroupRollout {
    std::string prompt_id;
    std::vector<size_t> answer_idx;     // one vocab index per output
    std::vector<double> old_logprobs;   // under the sampling policy
    std::vector<double> rewards;
};

// Group-normalized advantages: (r - mean) / population std. A group whose
// rewards barely vary carries no signal; below the guard everything is zero
// rather than amplifying noise through a near-zero denominator.
inline std::vector<double> group_advantages(const std::vector<double>& rewards,
                                            double std_guard = 1e-8) {
    if (rewards.empty()) throw ValidationError("empty reward group");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(rewards.size());
    double sd = std::sqrt(var);
    std::vector<double> adv(rewards.size(), 0.0);
    if (sd < std_guard) return adv;
    for (size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / sd;
    return adv;
}

inline double clipped_surrogate(double ratio, double advantage, double epsilon_clip) {
    double clipped = std::clamp(ratio, 1.0 - epsilon_clip, 1.0 + epsilon_clip);
    return std::min(ratio * advantage, clipped * advantage);
}

// KL(p || q) over matching supports, with 0 log 0 := 0. q must cover p.
inline double kl_categorical(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ValidationError("KL distributions differ in size");
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) throw ValidationError("KL undefined: q has a zero where p > 0");
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

namespace detail {

inline void check_rollout(const ToyPolicy& policy, const GroupRollout& g) {
    if (g.answer_idx.empty()) throw ValidationError("empty rollout group");
    if (g.answer_idx.size() != g.old_logprobs.size() || g.answer_idx.size() != g.rewards.size())
        throw ValidationError("rollout arrays differ in length");
    for (size_t idx : g.answer_idx)
        if (idx >= policy.vocab.size()) throw ValidationError("rollout answer index out of range");
}

}  // namespace detail

// Mean over groups of [ mean over the group of the clipped surrogate
// minus beta * KL(policy || reference) for the group's prompt ].
inline double grpo_objective(const ToyPolicy& policy, const ToyPolicy& reference,
                             const std::vector<GroupRollout>& rollouts, const GrpoConfig& cfg) {
    if (rollouts.empty()) throw ValidationError("no rollout groups");
    double total = 0.0;
    for (const auto& g : rollouts) {
        detail::check_rollout(policy, g);
        double surr = 0.0;
        auto adv = group_advantages(g.rewards, cfg.std_guard);
        for (size_t i = 0; i < g.answer_idx.size(); ++i) {
            if (cfg.advantage_only_surrogate) {
                double clipped = std::clamp(adv[i], 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip);
                surr += std::min(adv[i], clipped);
            } else {
                double ratio = std::exp(policy.logprob(g.prompt_id, g.answer_idx[i]) -
                                        g.old_logprobs[i]);
                surr += clipped_surrogate(ratio, adv[i], cfg.epsilon_clip);
            }
        }
        surr /= static_cast<double>(g.answer_idx.size());
        double kl = kl_categorical(policy.probs(g.prompt_id), reference.probs(g.prompt_id));
        total += surr - cfg.beta_kl * kl;
    }
    return total / static_cast<double>(rollouts.size());
}

// Analytic d objective / d logits, per prompt. Matches grpo_objective term
// by term; the acceptance suite cross-checks it against central finite
// differences on randomized instances.
inline std::map<std::string, std::vector<double>> grpo_gradient(
    const ToyPolicy& policy, const ToyPolicy& reference, const std::vector<GroupRollout>& rollouts,
    const GrpoConfig& cfg) {
    if (rollouts.empty()) throw ValidationError("no rollout groups");
    std::map<std::string, std::vector<double>> grad;
    const double inv_groups = 1.0 / static_cast<double>(rollouts.size());
    const double inv_temp = 1.0 / policy.temperature;

    for (const auto& g : rollouts) {
        detail::check_rollout(policy, g);
        auto& gg = grad.try_emplace(g.prompt_id, std::vector<double>(policy.vocab.size(), 0.0))
                       .first->second;
        auto p = policy.probs(g.prompt_id);
        auto adv = group_advantages(g.rewards, cfg.std_guard);
        const double inv_g = 1.0 / static_cast<double>(g.answer_idx.size());

        if (!cfg.advantage_only_surrogate) {
            for (size_t i = 0; i < g.answer_idx.size(); ++i) {
                size_t a = g.answer_idx[i];
                double ratio =
                    std::exp(policy.logprob(g.prompt_id, a) - g.old_logprobs[i]);
                double clipped = std::clamp(ratio, 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip);
                // Gradient flows only where the unclipped branch is the min;
                // the clipped branch is constant in the policy.
                if (ratio * adv[i] <= clipped * adv[i]) {
                    double scale = ratio * adv[i] * inv_g * inv_groups * inv_temp;
                    for (size_t k = 0; k < p.size(); ++k)
                        gg[k] += scale * ((k == a ? 1.0 : 0.0) - p[k]);
                }
            }
        }

        // d KL / d logit_j = p_j * (log(p_j / q_j) - KL) / T
        auto q = reference.probs(g.prompt_id);
        double kl = kl_categorical(p, q);
        for (size_t j = 0; j < p.size(); ++j) {
            if (p[j] == 0.0) continue;
            double term = p[j] * (std::log(p[j] / q[j]) - kl) * inv_temp;
            gg[j] -= cfg.beta_kl * term * inv_groups;
        }
    }
    return grad;
}

// One ascent step on the objective. Returns the objective value before the
// update so callers can trace training progress.
inline double grpo_step(ToyPolicy& policy, const ToyPolicy& reference,
                        const std::vector<GroupRollout>& rollouts, const GrpoConfig& cfg) {
    double before = grpo_objective(policy, reference, rollouts, cfg);
    auto grad = grpo_gradient(policy, reference, rollouts, cfg);
    for (auto& [prompt, gvec] : grad) {
        auto& l = policy.logits.at(prompt);
        for (size_t k = 0; k < gvec.size(); ++k) l[k] += cfg.learning_rate * gvec[k];
    }
    return before;
}

// Draws group_size outputs for one prompt and records the sampling-time
// logprobs. Rewards are filled in by the caller, which knows the grading
// context. Every draw is keyed by (seed, prompt, draw index).
inline GroupRollout sample_group(const ToyPolicy& policy, const std::string& prompt_id,
                                 int group_size, uint64_t seed) {
    if (group_size < 1) throw ValidationError("group_size must be >= 1");
    GroupRollout g;
    g.prompt_id = prompt_id;
    for (int i = 0; i < group_size; ++i) {
        Rng rng(derive_seed(seed, std::string_view(prompt_id), static_cast<uint64_t>(i)));
        size_t idx = policy.sample(prompt_id, rng);
        g.answer_idx.push_back(idx);
        g.old_logprobs.push_back(policy.logprob(prompt_id, idx));
    }
    g.rewards.assign(g.answer_idx.size(), 0.0);
    return g;
}

}  // namespace ladder
