#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ladder/backend.hpp"

namespace ladder::testing {

// Backend whose replies are supplied by the test. The default generate
// echoes a boxed marker per draw so selection paths have something to chew
// on even without an explicit script.
class ScriptedBackend : public Backend {
  public:
    std::function<std::vector<std::string>(const GenerationRequest&)> on_generate;
    std::function<std::string(const ReflectionRequest&)> on_reflect;

    std::vector<std::string> generate(const GenerationRequest& req) override {
        ++generate_calls;
        if (on_generate) return on_generate(req);
        std::vector<std::string> out;
        for (int i = 0; i < req.n; ++i)
            out.push_back("\\boxed{" + req.problem_id + "-" + std::to_string(i) + "}");
        return out;
    }

    std::string reflect(const ReflectionRequest& req) override {
        ++reflect_calls;
        if (on_reflect) return on_reflect(req);
        return "\\boxed{" + req.proposals.front() + "}";
    }

    void notify_trained(const TrainingEvent& event) override {
        ++train_calls;
        last_event = event;
    }

    std::string version() const override { return "scripted-v" + std::to_string(train_calls.load()); }

    nlohmann::json snapshot() const override {
        return {{"kind", "scripted"}, {"trained", train_calls.load()}};
    }

    void restore(const nlohmann::json& state) override {
        train_calls = state.at("trained").get<int>();
    }

    std::atomic<int> generate_calls{0};
    std::atomic<int> reflect_calls{0};
    std::atomic<int> train_calls{0};
    TrainingEvent last_event;
};

// Pass-through wrapper that counts backend traffic, for asserting that a
// cache layer short-circuits repeat requests.
class CountingBackend : public Backend {
  public:
    explicit CountingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}

    std::vector<std::string> generate(const GenerationRequest& req) override {
        ++generate_calls;
        return inner_->generate(req);
    }
    std::string reflect(const ReflectionRequest& req) override {
        ++reflect_calls;
        return inner_->reflect(req);
    }
    void notify_trained(const TrainingEvent& event) override { inner_->notify_trained(event); }
    std::string version() const override { return inner_->version(); }
    nlohmann::json snapshot() const override { return inner_->snapshot(); }
    void restore(const nlohmann::json& state) override { inner_->restore(state); }

    std::atomic<int> generate_calls{0};
    std::atomic<int> reflect_calls{0};

  private:
    std::shared_ptr<Backend> inner_;
};

// Unique directory under the system temp root, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0;; ++i) {
            path_ = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(i));
            if (!std::filesystem::exists(path_)) break;
        }
        std::filesystem::create_directories(path_);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

}  // namespace ladder::testing
