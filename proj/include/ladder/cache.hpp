#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ladder/backend.hpp"
#include "ladder/errors.hpp"
#include "ladder/io.hpp"
#include "ladder/rng.hpp"
#include "ladder/templates.hpp"

namespace ladder {

enum class CacheMode {
    record,  // miss -> call the inner backend and append the result
    replay,  // miss -> hard error; no inner backend required
};

// Append-only JSONL store keyed by the full request identity. Each line
// carries two independent hashes of the request material plus a checksum of
// the stored line, so a corrupted or colliding entry is an error, never a
// silently wrong completion.
class CachedBackend : public Backend {
  public:
    CachedBackend(std::shared_ptr<Backend> inner, std::filesystem::path path, CacheMode mode)
        : inner_(std::move(inner)), path_(std::move(path)), mode_(mode) {
        if (mode_ == CacheMode::record && !inner_)
            throw ValidationError("record cache needs an inner backend");
        load();
    }

    std::vector<std::string> generate(const GenerationRequest& req) override {
        std::string material = key_material(req.template_name, req.flat_prompt(), req.n,
                                            req.temperature, req.seed, req.max_tokens);
        if (auto hit = lookup(material)) return *hit;
        if (mode_ == CacheMode::replay)
            throw CacheError("replay cache miss for problem \"" + req.problem_id +
                             "\" (template " + req.template_name + ")");
        auto completions = inner_->generate(req);
        store(material, completions);
        return completions;
    }

    std::string reflect(const ReflectionRequest& req) override {
        RenderedPrompt prompt = render_reflection(req.question, req.proposals);
        std::string material = key_material(reflection_template().name, prompt.flat(), 1,
                                            req.temperature, req.seed, req.max_tokens);
        if (auto hit = lookup(material)) return hit->front();
        if (mode_ == CacheMode::replay)
            throw CacheError("replay cache miss for reflection on \"" + req.problem_id + "\"");
        std::string completion = inner_->reflect(req);
        store(material, {completion});
        return completion;
    }

    void notify_trained(const TrainingEvent& event) override {
        if (inner_) inner_->notify_trained(event);
        ++events_;
    }

    std::string version() const override {
        return inner_ ? inner_->version() : "replay-v" + std::to_string(events_);
    }

    nlohmann::json snapshot() const override {
        nlohmann::json j{{"kind", "cached"}, {"events", events_}};
        j["inner"] = inner_ ? inner_->snapshot() : nlohmann::json();
        return j;
    }

    void restore(const nlohmann::json& state) override {
        if (!state.is_object() || state.value("kind", "") != std::string("cached"))
            throw StateError("backend snapshot is not from a cached backend");
        events_ = state.at("events").get<uint64_t>();
        if (inner_ && !state.at("inner").is_null()) inner_->restore(state.at("inner"));
    }

    size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

  private:
    struct Entry {
        std::string digest;
        std::vector<std::string> completions;
    };

    static std::string key_material(const std::string& template_name, const std::string& prompt,
                                    int n, double temperature, uint64_t seed, int max_tokens) {
        char temp_buf[64];
        std::snprintf(temp_buf, sizeof(temp_buf), "%.17g", temperature);
        std::string m;
        m.reserve(prompt.size() + 64);
        const char us = '\x1f';
        m += template_name;
        m += us;
        m += prompt;
        m += us;
        m += std::to_string(n);
        m += us;
        m += temp_buf;
        m += us;
        m += std::to_string(seed);
        m += us;
        m += std::to_string(max_tokens);
        return m;
    }

    static std::string hex64(uint64_t v) {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
        return buf;
    }

    static std::string key_of(const std::string& material) { return hex64(fnv1a64(material)); }

    // Second, independently salted hash; a key collision with a different
    // digest is detected instead of returning a foreign completion.
    static std::string digest_of(const std::string& material) {
        return hex64(mix64(fnv1a64(material) ^ 0xa5a5a5a5deadbeefULL) ^
                     fnv1a64(material + "\x1e"));
    }

    static std::string checksum_of(const std::string& key, const std::string& digest,
                                   const std::vector<std::string>& completions) {
        std::string acc = key + '\x1f' + digest;
        for (const auto& c : completions) {
            acc += '\x1f';
            acc += c;
        }
        return hex64(fnv1a64(acc));
    }

    void load() {
        std::lock_guard lock(mu_);
        entries_.clear();
        if (!std::filesystem::exists(path_)) {
            if (mode_ == CacheMode::replay)
                throw CacheError("replay cache file missing: " + path_.string());
            return;
        }
        for_each_line(read_file(path_), [&](const std::string& line, size_t lineno) {
            if (line.empty()) return;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw CacheError("cache " + path_.string() + " line " + std::to_string(lineno) +
                                 ": malformed JSON: " + e.what());
            }
            for (const char* field : {"key", "digest", "completions", "checksum"}) {
                if (!j.contains(field))
                    throw CacheError("cache " + path_.string() + " line " +
                                     std::to_string(lineno) + ": missing \"" + field + "\"");
            }
            Entry e;
            e.digest = j["digest"].get<std::string>();
            e.completions = j["completions"].get<std::vector<std::string>>();
            std::string key = j["key"].get<std::string>();
            if (checksum_of(key, e.digest, e.completions) != j["checksum"].get<std::string>())
                throw CacheError("cache " + path_.string() + " line " + std::to_string(lineno) +
                                 ": checksum mismatch");
            entries_[key] = std::move(e);
        });
    }

    std::optional<std::vector<std::string>> lookup(const std::string& material) {
        std::lock_guard lock(mu_);
        auto it = entries_.find(key_of(material));
        if (it == entries_.end()) return std::nullopt;
        if (it->second.digest != digest_of(material))
            throw CacheError("cache key collision detected for key " + key_of(material));
        return it->second.completions;
    }

    void store(const std::string& material, const std::vector<std::string>& completions) {
        std::lock_guard lock(mu_);
        std::string key = key_of(material);
        std::string digest = digest_of(material);
        nlohmann::ordered_json j;
        j["key"] = key;
        j["digest"] = digest;
        j["completions"] = completions;
        j["checksum"] = checksum_of(key, digest, completions);
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        if (!out) throw CacheError("cannot append to cache " + path_.string());
        // One write call per record keeps lines whole under concurrency.
        std::string line = j.dump() + "\n";
        out.write(line.data(), static_cast<std::streamsize>(line.size()));
        out.flush();
        if (!out) throw CacheError("short append to cache " + path_.string());
        entries_[key] = Entry{digest, completions};
    }

    std::shared_ptr<Backend> inner_;
    std::filesystem::path path_;
    CacheMode mode_;
    uint64_t events_ = 0;
    std::map<std::string, Entry> entries_;
    mutable std::mutex mu_;
};

}  // namespace ladder
