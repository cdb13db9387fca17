#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ladder/errors.hpp"
#include "ladder/io.hpp"
#include "ladder/rng.hpp"

namespace ladder {

// Desk-scale categorical policy: a shared answer vocabulary and one logit
// vector per prompt. Big enough to exercise every term of the objective,
// small enough to check gradients by finite differences.
struct ToyPolicy {
    std::vector<std::string> vocab;
    std::map<std::string, std::vector<double>> logits;  // prompt id -> |vocab| logits
    double temperature = 1.0;

    const std::vector<double>& logits_for(const std::string& prompt_id) const {
        auto it = logits.find(prompt_id);
        if (it == logits.end()) throw ValidationError("unknown prompt id \"" + prompt_id + "\"");
        if (it->second.size() != vocab.size())
            throw ValidationError("logit vector size mismatch for \"" + prompt_id + "\"");
        return it->second;
    }

    std::vector<double> probs(const std::string& prompt_id) const {
        return softmax(logits_for(prompt_id));
    }

    double logprob(const std::string& prompt_id, size_t answer_idx) const {
        const auto& l = logits_for(prompt_id);
        if (answer_idx >= l.size()) throw ValidationError("answer index out of range");
        double m = *std::max_element(l.begin(), l.end());
        double sum = 0.0;
        for (double x : l) sum += std::exp((x - m) / temperature);
        return (l[answer_idx] - m) / temperature - std::log(sum);
    }

    std::vector<double> softmax(const std::vector<double>& l) const {
        if (l.empty()) throw ValidationError("empty logit vector");
        double m = *std::max_element(l.begin(), l.end());
        std::vector<double> p(l.size());
        double sum = 0.0;
        for (size_t i = 0; i < l.size(); ++i) {
            p[i] = std::exp((l[i] - m) / temperature);
            sum += p[i];
        }
        for (double& x : p) x /= sum;
        return p;
    }

    // Inverse-CDF draw; all randomness comes from the caller's Rng.
    size_t sample(const std::string& prompt_id, Rng& rng) const {
        auto p = probs(prompt_id);
        double u = rng.next_double();
        double acc = 0.0;
        for (size_t i = 0; i < p.size(); ++i) {
            acc += p[i];
            if (u < acc) return i;
        }
        return p.size() - 1;  // guards against acc summing to slightly under 1
    }

    size_t greedy(const std::string& prompt_id) const {
        const auto& l = logits_for(prompt_id);
        return static_cast<size_t>(
            std::distance(l.begin(), std::max_element(l.begin(), l.end())));
    }
};

// Checkpoints round-trip bit exactly: doubles are serialized as shortest
// decimal strings that parse back to the identical IEEE value.
inline void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy) {
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["temperature"] = policy.temperature;
    j["vocab"] = policy.vocab;
    nlohmann::ordered_json lj = nlohmann::ordered_json::object();
    for (const auto& [prompt, l] : policy.logits) lj[prompt] = l;
    j["logits"] = std::move(lj);
    atomic_write_file(path, j.dump(2) + "\n");
}

inline ToyPolicy load_checkpoint(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw StateError("checkpoint " + path.string() + ": " + e.what());
    }
    if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
        throw StateError("checkpoint " + path.string() + ": unsupported format_version");
    ToyPolicy p;
    p.temperature = j.at("temperature").get<double>();
    p.vocab = j.at("vocab").get<std::vector<std::string>>();
    for (const auto& [prompt, l] : j.at("logits").items()) {
        p.logits[prompt] = l.get<std::vector<double>>();
        if (p.logits[prompt].size() != p.vocab.size())
            throw StateError("checkpoint " + path.string() + ": logit size mismatch for \"" +
                             prompt + "\"");
    }
    return p;
}

}  // namespace ladder
