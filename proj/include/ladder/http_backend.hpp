#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ladder/backend.hpp"
#include "ladder/errors.hpp"
#include "ladder/rng.hpp"
#include "ladder/templates.hpp"

namespace ladder {

struct HttpBackendConfig {
    std::string base_url;            // e.g. http://127.0.0.1:8000
    std::string model;               // model tag sent in the request body
    std::string api_key_env = "LADDER_API_KEY";
    int connect_timeout_s = 10;
    int read_timeout_s = 120;
    int max_attempts = 3;            // total tries per request
    int backoff_base_ms = 250;       // doubled per retry, with deterministic jitter
    int backoff_cap_ms = 4000;
};

// Chat-completions client (POST {base_url}/v1/chat/completions). Transient
// failures (connect errors, 429, 5xx) are retried with exponential backoff;
// anything else surfaces as a BackendError carrying the status and body.
class HttpBackend : public Backend {
  public:
    explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.base_url.empty()) throw ValidationError("http backend needs base_url");
        if (cfg_.model.empty()) throw ValidationError("http backend needs a model tag");
        if (cfg_.max_attempts < 1) throw ValidationError("max_attempts must be >= 1");
        if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
    }

    std::vector<std::string> generate(const GenerationRequest& req) override {
        nlohmann::json payload;
        payload["model"] = cfg_.model;
        auto messages = nlohmann::json::array();
        if (!req.system.empty())
            messages.push_back({{"role", "system"}, {"content", req.system}});
        messages.push_back({{"role", "user"}, {"content", req.user}});
        payload["messages"] = std::move(messages);
        payload["n"] = req.n;
        payload["temperature"] = req.temperature;
        payload["max_tokens"] = req.max_tokens;
        payload["seed"] = req.seed;

        nlohmann::json reply = post_with_retries(payload, req.seed);
        if (!reply.contains("choices") || !reply["choices"].is_array() ||
            reply["choices"].size() != static_cast<size_t>(req.n))
            throw BackendError("chat response: expected " + std::to_string(req.n) +
                               " choices, got " + reply.value("choices", nlohmann::json::array())
                                                      .dump());
        std::vector<std::string> out;
        for (const auto& choice : reply["choices"]) {
            if (!choice.contains("message") || !choice["message"].contains("content") ||
                !choice["message"]["content"].is_string())
                throw BackendError("chat response: choice without message.content");
            out.push_back(choice["message"]["content"].get<std::string>());
        }
        return out;
    }

    std::string reflect(const ReflectionRequest& req) override {
        RenderedPrompt prompt = render_reflection(req.question, req.proposals);
        GenerationRequest gen;
        gen.template_name = reflection_template().name;
        gen.system = prompt.system;
        gen.user = prompt.user;
        gen.problem_id = req.problem_id;
        gen.n = 1;
        gen.temperature = req.temperature;
        gen.seed = req.seed;
        gen.max_tokens = req.max_tokens;
        return generate(gen).front();
    }

    // Actual training happens outside this process; the orchestrator emits
    // batch files and, per config, re-points the endpoint or model tag.
    void notify_trained(const TrainingEvent&) override { ++events_; }

    std::string version() const override {
        return cfg_.model + "#" + std::to_string(events_);
    }

    nlohmann::json snapshot() const override {
        return {{"kind", "http"}, {"model", cfg_.model}, {"events", events_}};
    }

    void restore(const nlohmann::json& state) override {
        if (!state.is_object() || state.value("kind", "") != std::string("http"))
            throw StateError("backend snapshot is not from an http backend");
        events_ = state.at("events").get<uint64_t>();
    }

  private:
    static bool retryable_status(int status) {
        return status == 429 || (status >= 500 && status < 600);
    }

    nlohmann::json post_with_retries(const nlohmann::json& payload, uint64_t seed) {
        std::string body = payload.dump();
        std::string last_error;
        for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
            if (attempt > 0) {
                int delay = cfg_.backoff_base_ms << (attempt - 1);
                if (delay > cfg_.backoff_cap_ms) delay = cfg_.backoff_cap_ms;
                // Jitter in [0.5, 1.5) of the base delay, derived from the
                // request seed so reruns sleep identically.
                Rng rng(derive_seed(seed, std::string_view("backoff"),
                                    static_cast<uint64_t>(attempt)));
                delay = static_cast<int>(delay * (0.5 + rng.next_double()));
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            }
            httplib::Client client(cfg_.base_url);
            client.set_connection_timeout(cfg_.connect_timeout_s, 0);
            client.set_read_timeout(cfg_.read_timeout_s, 0);
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
            auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
            if (!res) {
                last_error = "transport: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 200) {
                try {
                    return nlohmann::json::parse(res->body);
                } catch (const nlohmann::json::exception& e) {
                    throw BackendError(std::string("chat response is not JSON: ") + e.what());
                }
            }
            last_error = "status " + std::to_string(res->status) + ": " + res->body;
            if (!retryable_status(res->status)) throw BackendError("chat request failed, " + last_error);
        }
        throw BackendError("chat request failed after " + std::to_string(cfg_.max_attempts) +
                           " attempts, last " + last_error);
    }

    HttpBackendConfig cfg_;
    std::string api_key_;
    uint64_t events_ = 0;
};

}  // namespace ladder
