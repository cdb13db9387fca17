#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ladder/backend.hpp"
#include "ladder/errors.hpp"
#include "ladder/grpo.hpp"
#include "ladder/http_backend.hpp"
#include "ladder/io.hpp"
#include "ladder/rng.hpp"
#include "ladder/selection.hpp"

namespace ladder {

// Backend choice plus the parameters of whichever kind is active. cache_path
// with kind simulated/http records every completion; kind "replay" serves
// exclusively from cache_path and has no inner backend.
struct BackendChoice {
    std::string kind = "simulated";  // simulated | http | replay
    SimulatedBackendConfig simulated;
    HttpBackendConfig http;
    std::string cache_path;
};

struct RunConfig {
    uint64_t seed = 0;
    std::string out_dir = "run";
    // When set, every report timestamp is this value; runs become
    // byte-reproducible. Unset means wall clock.
    std::optional<int64_t> fixed_clock;
    bool audit = true;  // re-measure the full initial pool each iteration
    std::string labeled_path;
    std::string unlabeled_path;
    int max_iterations = 3;
    size_t min_new_labels = 1;
    bool cumulative_training = false;
    SelectionConfig selection;
    GrpoConfig grpo;
    BackendChoice backend;
};

namespace detail {

inline std::string_view trim_view(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

struct ConfigEntry {
    std::string section;
    std::string key;
    std::string value;
    size_t line = 0;
};

inline std::vector<ConfigEntry> parse_ini(const std::string& text) {
    std::vector<ConfigEntry> entries;
    std::string section;
    std::set<std::pair<std::string, std::string>> seen;
    for_each_line(text, [&](std::string_view line, size_t lineno) {
        auto t = trim_view(line);
        if (t.empty() || t.front() == '#' || t.front() == ';') return;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ValidationError("config line " + std::to_string(lineno) +
                                      ": unterminated section header");
            section = std::string(trim_view(t.substr(1, t.size() - 2)));
            if (section.empty())
                throw ValidationError("config line " + std::to_string(lineno) +
                                      ": empty section name");
            return;
        }
        size_t eq = t.find('=');
        if (eq == std::string_view::npos)
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": expected key = value");
        if (section.empty())
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": key before any [section]");
        std::string key(trim_view(t.substr(0, eq)));
        if (key.empty())
            throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
        if (!seen.insert({section, key}).second)
            throw ValidationError("config line " + std::to_string(lineno) + ": duplicate key \"" +
                                  key + "\" in [" + section + "]");
        entries.push_back({section, key, std::string(trim_view(t.substr(eq + 1))), lineno});
    });
    return entries;
}

inline std::string where(const ConfigEntry& e) {
    return "config line " + std::to_string(e.line) + ": [" + e.section + "] " + e.key;
}

inline bool parse_bool(const ConfigEntry& e) {
    if (e.value == "true") return true;
    if (e.value == "false") return false;
    throw ValidationError(where(e) + ": expected true or false, got \"" + e.value + "\"");
}

template <typename T>
inline T parse_number(const ConfigEntry& e) {
    T out{};
    const char* first = e.value.data();
    const char* last = first + e.value.size();
    auto res = std::from_chars(first, last, out);
    if (res.ec != std::errc() || res.ptr != last)
        throw ValidationError(where(e) + ": bad number \"" + e.value + "\"");
    return out;
}

inline std::string render_double(double v) { return nlohmann::json(v).dump(); }

}  // namespace detail

// Strict parse: unknown sections or keys are errors, as are duplicates and
// out-of-range values. Absent keys keep their defaults.
inline RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    for (const auto& e : detail::parse_ini(text)) {
        using detail::parse_bool;
        using detail::parse_number;
        if (e.section == "run") {
            if (e.key == "seed") cfg.seed = parse_number<uint64_t>(e);
            else if (e.key == "out_dir") cfg.out_dir = e.value;
            else if (e.key == "fixed_clock") cfg.fixed_clock = parse_number<int64_t>(e);
            else if (e.key == "audit") cfg.audit = parse_bool(e);
            else throw ValidationError(detail::where(e) + ": unknown key");
        } else if (e.section == "corpus") {
            if (e.key == "labeled") cfg.labeled_path = e.value;
            else if (e.key == "unlabeled") cfg.unlabeled_path = e.value;
            else throw ValidationError(detail::where(e) + ": unknown key");
        } else if (e.section == "curriculum") {
            if (e.key == "max_iterations") cfg.max_iterations = parse_number<int>(e);
            else if (e.key == "min_new_labels") cfg.min_new_labels = parse_number<size_t>(e);
            else if (e.key == "cumulative_training") cfg.cumulative_training = parse_bool(e);
            else throw ValidationError(detail::where(e) + ": unknown key");
        } else if (e.section == "selection") {
            if (e.key == "n_inferences") cfg.selection.n_inferences = parse_number<int>(e);
            else if (e.key == "tau") cfg.selection.tau = parse_number<double>(e);
            else if (e.key == "temperature") cfg.selection.temperature = parse_number<double>(e);
            else if (e.key == "max_tokens") cfg.selection.max_tokens = parse_number<int>(e);
            else if (e.key == "in_flight") cfg.selection.in_flight = parse_number<int>(e);
            else if (e.key == "count_missing_answers")
                cfg.selection.count_missing_answers = parse_bool(e);
            else throw ValidationError(detail::where(e) + ": unknown key");
        } else if (e.section == "grpo") {
            if (e.key == "epsilon_clip") cfg.grpo.epsilon_clip = parse_number<double>(e);
            else if (e.key == "beta_kl") cfg.grpo.beta_kl = parse_number<double>(e);
            else if (e.key == "group_size") cfg.grpo.group_size = parse_number<int>(e);
            else if (e.key == "learning_rate") cfg.grpo.learning_rate = parse_number<double>(e);
            else if (e.key == "std_guard") cfg.grpo.std_guard = parse_number<double>(e);
            else if (e.key == "advantage_only_surrogate")
                cfg.grpo.advantage_only_surrogate = parse_bool(e);
            else throw ValidationError(detail::where(e) + ": unknown key");
        } else if (e.section == "backend") {
            if (e.key == "kind") cfg.backend.kind = e.value;
            else if (e.key == "cache_path") cfg.backend.cache_path = e.value;
            else if (e.key == "skill") cfg.backend.simulated.skill = parse_number<double>(e);
            else if (e.key == "slope") cfg.backend.simulated.slope = parse_number<double>(e);
            else if (e.key == "distractor_pool_size")
                cfg.backend.simulated.distractor_pool_size = parse_number<int>(e);
            else if (e.key == "skill_gain")
                cfg.backend.simulated.skill_gain = parse_number<double>(e);
            else if (e.key == "reflection_bonus")
                cfg.backend.simulated.reflection_bonus = parse_number<double>(e);
            else if (e.key == "base_url") cfg.backend.http.base_url = e.value;
            else if (e.key == "model") cfg.backend.http.model = e.value;
            else if (e.key == "api_key_env") cfg.backend.http.api_key_env = e.value;
            else if (e.key == "connect_timeout_s")
                cfg.backend.http.connect_timeout_s = parse_number<int>(e);
            else if (e.key == "read_timeout_s")
                cfg.backend.http.read_timeout_s = parse_number<int>(e);
            else if (e.key == "max_attempts")
                cfg.backend.http.max_attempts = parse_number<int>(e);
            else if (e.key == "backoff_base_ms")
                cfg.backend.http.backoff_base_ms = parse_number<int>(e);
            else if (e.key == "backoff_cap_ms")
                cfg.backend.http.backoff_cap_ms = parse_number<int>(e);
            else throw ValidationError(detail::where(e) + ": unknown key");
        } else {
            throw ValidationError("config line " + std::to_string(e.line) +
                                  ": unknown section [" + e.section + "]");
        }
    }
    return cfg;
}

inline void validate_run_config(const RunConfig& cfg) {
    auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
    if (cfg.out_dir.empty()) fail("out_dir must be set");
    if (cfg.max_iterations < 0) fail("max_iterations must be >= 0");
    if (cfg.selection.n_inferences < 1) fail("n_inferences must be >= 1");
    if (!(cfg.selection.tau >= 0.0 && cfg.selection.tau <= 1.0)) fail("tau must be in [0, 1]");
    if (!(cfg.selection.temperature >= 0.0)) fail("temperature must be >= 0");
    if (cfg.selection.max_tokens < 1) fail("max_tokens must be >= 1");
    if (cfg.selection.in_flight < 1) fail("in_flight must be >= 1");
    if (!(cfg.grpo.epsilon_clip > 0.0)) fail("epsilon_clip must be > 0");
    if (!(cfg.grpo.beta_kl >= 0.0)) fail("beta_kl must be >= 0");
    if (cfg.grpo.group_size < 1) fail("group_size must be >= 1");
    if (!(cfg.grpo.learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(cfg.grpo.std_guard > 0.0)) fail("std_guard must be > 0");
    const auto& b = cfg.backend;
    if (b.kind != "simulated" && b.kind != "http" && b.kind != "replay")
        fail("backend kind must be simulated, http, or replay");
    if (b.kind == "simulated") {
        if (!(b.simulated.slope > 0.0)) fail("slope must be > 0");
        if (b.simulated.distractor_pool_size < 1) fail("distractor_pool_size must be >= 1");
        if (!(b.simulated.skill_gain >= 0.0)) fail("skill_gain must be >= 0");
    }
    if (b.kind == "http") {
        if (b.http.base_url.empty()) fail("http backend requires base_url");
        if (b.http.model.empty()) fail("http backend requires model");
        if (b.http.max_attempts < 1) fail("max_attempts must be >= 1");
    }
    if (b.kind == "replay" && b.cache_path.empty()) fail("replay backend requires cache_path");
}

// Canonical text of the effective configuration: every key, fixed order,
// shortest-round-trip numbers. Written into the run dir as the
// reproducibility record; its hash gates --resume.
inline std::string echo_config(const RunConfig& cfg) {
    using detail::render_double;
    std::string s;
    s += "[run]\n";
    s += "seed = " + std::to_string(cfg.seed) + "\n";
    // out_dir is deliberately not echoed: the record lives inside the run
    // dir, and its hash must not pin the directory so runs stay relocatable.
    if (cfg.fixed_clock) s += "fixed_clock = " + std::to_string(*cfg.fixed_clock) + "\n";
    s += "audit = " + std::string(cfg.audit ? "true" : "false") + "\n";
    s += "\n[corpus]\n";
    s += "labeled = " + cfg.labeled_path + "\n";
    s += "unlabeled = " + cfg.unlabeled_path + "\n";
    s += "\n[curriculum]\n";
    s += "max_iterations = " + std::to_string(cfg.max_iterations) + "\n";
    s += "min_new_labels = " + std::to_string(cfg.min_new_labels) + "\n";
    s += "cumulative_training = " + std::string(cfg.cumulative_training ? "true" : "false") + "\n";
    s += "\n[selection]\n";
    s += "n_inferences = " + std::to_string(cfg.selection.n_inferences) + "\n";
    s += "tau = " + render_double(cfg.selection.tau) + "\n";
    s += "temperature = " + render_double(cfg.selection.temperature) + "\n";
    s += "max_tokens = " + std::to_string(cfg.selection.max_tokens) + "\n";
    s += "in_flight = " + std::to_string(cfg.selection.in_flight) + "\n";
    s += "count_missing_answers = " +
         std::string(cfg.selection.count_missing_answers ? "true" : "false") + "\n";
    s += "\n[grpo]\n";
    s += "epsilon_clip = " + render_double(cfg.grpo.epsilon_clip) + "\n";
    s += "beta_kl = " + render_double(cfg.grpo.beta_kl) + "\n";
    s += "group_size = " + std::to_string(cfg.grpo.group_size) + "\n";
    s += "learning_rate = " + render_double(cfg.grpo.learning_rate) + "\n";
    s += "std_guard = " + render_double(cfg.grpo.std_guard) + "\n";
    s += "advantage_only_surrogate = " +
         std::string(cfg.grpo.advantage_only_surrogate ? "true" : "false") + "\n";
    s += "\n[backend]\n";
    s += "kind = " + cfg.backend.kind + "\n";
    if (!cfg.backend.cache_path.empty()) s += "cache_path = " + cfg.backend.cache_path + "\n";
    if (cfg.backend.kind == "simulated") {
        const auto& sim = cfg.backend.simulated;
        s += "skill = " + render_double(sim.skill) + "\n";
        s += "slope = " + render_double(sim.slope) + "\n";
        s += "distractor_pool_size = " + std::to_string(sim.distractor_pool_size) + "\n";
        s += "skill_gain = " + render_double(sim.skill_gain) + "\n";
        s += "reflection_bonus = " + render_double(sim.reflection_bonus) + "\n";
    } else if (cfg.backend.kind == "http") {
        const auto& h = cfg.backend.http;
        s += "base_url = " + h.base_url + "\n";
        s += "model = " + h.model + "\n";
        s += "api_key_env = " + h.api_key_env + "\n";
        s += "connect_timeout_s = " + std::to_string(h.connect_timeout_s) + "\n";
        s += "read_timeout_s = " + std::to_string(h.read_timeout_s) + "\n";
        s += "max_attempts = " + std::to_string(h.max_attempts) + "\n";
        s += "backoff_base_ms = " + std::to_string(h.backoff_base_ms) + "\n";
        s += "backoff_cap_ms = " + std::to_string(h.backoff_cap_ms) + "\n";
    }
    return s;
}

inline std::string config_fingerprint(const RunConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(echo_config(cfg))));
    return buf;
}

}  // namespace ladder
