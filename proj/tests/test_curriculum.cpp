#include <catch_amalgamated.hpp>

#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "helpers.hpp"
#include "ladder/curriculum.hpp"

using namespace ladder;
using Catch::Matchers::WithinAbs;
using ladder::testing::ScriptedBackend;
using ladder::testing::TempDir;

namespace {

ToyPolicy biased_policy() {
    ToyPolicy p;
    p.vocab = {"1", "2", "3", "4"};
    // Mass leans toward the wrong answers so training has room to move.
    p.logits["t1"] = {-0.8, 0.4, 0.3, 0.0};
    p.logits["t2"] = {0.3, -0.9, 0.2, 0.1};
    p.logits["t3"] = {0.2, 0.4, -0.7, 0.0};
    return p;
}

std::vector<ToyTask> toy_tasks() { return {{"t1", "1"}, {"t2", "2"}, {"t3", "3"}}; }

Corpus small_corpus(int labeled, int unlabeled) {
    Corpus corpus;
    for (int i = 0; i < labeled; ++i)
        corpus.labeled.push_back({"lab" + std::to_string(i), "Labeled question " + std::to_string(i),
                                  std::to_string(100 + i), 3.5});
    for (int i = 0; i < unlabeled; ++i) {
        std::string id = "unl" + std::to_string(i);
        corpus.unlabeled.push_back({id, "Unlabeled question " + std::to_string(i), std::nullopt,
                                    5.0 + (i % 5)});
        corpus.audit_answers[id] = std::to_string(200 + i);
    }
    return corpus;
}

// Scripted generator: a problem is unanimously answered once the backend has
// seen `ripen_after` training events, i.e. one more pool slice ripens per
// iteration. Before that it splits 50/50 and reflection declines to fix it.
std::shared_ptr<ScriptedBackend> staged_backend(std::map<std::string, int> ripen_after) {
    auto backend = std::make_shared<ScriptedBackend>();
    auto* raw = backend.get();
    backend->on_generate = [raw, ripen_after](const GenerationRequest& req) {
        std::vector<std::string> out;
        auto it = ripen_after.find(req.problem_id);
        bool ripe = it == ripen_after.end() || raw->train_calls >= it->second;
        for (int j = 0; j < req.n; ++j) {
            if (ripe)
                out.push_back("\\boxed{9}");
            else
                out.push_back(j % 2 ? "\\boxed{1}" : "\\boxed{2}");
        }
        return out;
    };
    backend->on_reflect = [](const ReflectionRequest&) { return std::string("undecided"); };
    return backend;
}

CurriculumConfig fast_config(uint64_t seed = 1) {
    CurriculumConfig cfg;
    cfg.seed = seed;
    cfg.max_iterations = 3;
    cfg.selection.n_inferences = 2;
    cfg.selection.tau = 0.3;
    cfg.grpo.group_size = 2;
    cfg.audit = false;
    cfg.fixed_clock = 1700000000;
    return cfg;
}

}  // namespace

TEST_CASE("warmup_toy with zero steps is the identity") {
    ToyPolicy policy = biased_policy();
    ToyPolicy before = policy;
    auto stats = warmup_toy(policy, toy_tasks(), 0, GrpoConfig{}, 5);
    CHECK(stats.steps == 0);
    CHECK(stats.greedy_accuracy_before == stats.greedy_accuracy_after);
    CHECK(policy.logits == before.logits);
}

TEST_CASE("warmup_toy improves greedy accuracy on the labeled set") {
    ToyPolicy policy = biased_policy();
    GrpoConfig cfg;
    cfg.learning_rate = 0.3;
    cfg.group_size = 8;
    auto stats = warmup_toy(policy, toy_tasks(), 50, cfg, 11);
    CHECK(stats.greedy_accuracy_before == 0.0);
    CHECK(stats.greedy_accuracy_after > stats.greedy_accuracy_before);
    CHECK(toy_greedy_accuracy(policy, toy_tasks()) == stats.greedy_accuracy_after);
    CHECK_THROWS_AS(warmup_toy(policy, {}, 1, cfg, 0), ValidationError);
}

TEST_CASE("pipeline state round-trips through JSON") {
    PipelineState st;
    st.warmup_done = true;
    st.iteration = 2;
    st.remaining = {"u1", "u2"};
    st.selected_files = {"labels_iter_1.jsonl", "labels_iter_2.jsonl"};
    st.labels_per_iteration = {3, 1};
    st.initial_unlabeled = 6;
    st.policy_version = "sim-v3";
    st.stop_reason = "";
    st.seed = 17;
    st.config_fingerprint = "abc123";
    st.backend = {{"kind", "simulated"}, {"skill_delta", 0.3}, {"events", 3}};

    auto j = state_to_json(st);
    CHECK(j.at("stop_reason").is_null());
    PipelineState back = state_from_json(j);
    CHECK(back.warmup_done == st.warmup_done);
    CHECK(back.iteration == st.iteration);
    CHECK(back.remaining == st.remaining);
    CHECK(back.selected_files == st.selected_files);
    CHECK(back.labels_per_iteration == st.labels_per_iteration);
    CHECK(back.initial_unlabeled == st.initial_unlabeled);
    CHECK(back.policy_version == st.policy_version);
    CHECK(back.stop_reason.empty());
    CHECK(back.seed == st.seed);
    CHECK(back.config_fingerprint == st.config_fingerprint);
    CHECK(back.backend == st.backend);

    st.stop_reason = "stalled";
    CHECK(state_from_json(state_to_json(st)).stop_reason == "stalled");

    auto bad = state_to_json(st);
    bad["format_version"] = 9;
    CHECK_THROWS_AS(state_from_json(bad), StateError);
}

TEST_CASE("pipeline runs to max_iterations and conserves the pool") {
    TempDir dir("pipe");
    Corpus corpus = small_corpus(2, 6);
    // Two problems ripen immediately, two after the first training round, one
    // after the second, and one never: selections of 2, 2, 1 over 3 rounds,
    // ending with the cap rather than exhaustion or a stall.
    auto backend = staged_backend({{"unl0", 0}, {"unl1", 0},
                                   {"unl2", 2}, {"unl3", 2},
                                   {"unl4", 3}, {"unl5", 99}});
    Pipeline pipeline(corpus, backend, fast_config(), dir.path());
    auto result = pipeline.run();

    CHECK(result.stop_reason == "max_iterations");
    CHECK(result.iterations == 3);
    REQUIRE(result.reports.size() == 3);

    size_t selected_total = 0;
    size_t previous_remaining = corpus.unlabeled.size();
    for (const auto& r : result.reports) {
        selected_total += r.total_samples;
        CHECK(r.remaining + selected_total == corpus.unlabeled.size());
        CHECK(r.remaining <= previous_remaining);
        CHECK(r.pool_size == previous_remaining);
        previous_remaining = r.remaining;
    }
    CHECK(result.reports[0].total_samples == 2);
    CHECK(result.reports[1].total_samples == 2);
    CHECK(result.reports[2].total_samples == 1);

    // Warm-up plus one training event per iteration.
    CHECK(backend->train_calls == 4);

    // Artifacts: per-iteration labels, batches, reports, plus the csv.
    for (int i = 1; i <= 3; ++i) {
        CHECK(std::filesystem::exists(dir / ("labels_iter_" + std::to_string(i) + ".jsonl")));
        CHECK(std::filesystem::exists(dir / ("batch_iter_" + std::to_string(i) + ".jsonl")));
        CHECK(std::filesystem::exists(dir / ("iter_" + std::to_string(i) + ".json")));
    }
    CHECK(std::filesystem::exists(dir / "batch_warmup.jsonl"));
    CHECK(std::filesystem::exists(dir / "report.csv"));

    auto labels = read_labels_file(dir / "labels_iter_1.jsonl");
    REQUIRE(labels.size() == 2);
    CHECK(labels[0].id == "unl0");
    CHECK(labels[0].answer == "9");
    CHECK(labels[0].source == "consistent");
    CHECK(labels[0].iteration == 1);

    auto st = read_state(dir / "state.json");
    CHECK(st.stop_reason == "max_iterations");
    CHECK(st.iteration == 3);
    CHECK(st.labels_per_iteration == std::vector<size_t>{2, 2, 1});
    CHECK(st.remaining == std::vector<std::string>{"unl5"});
}

TEST_CASE("pipeline stops on pool exhaustion") {
    TempDir dir("pipe");
    Corpus corpus = small_corpus(1, 3);
    auto backend = staged_backend({});  // everything unanimous from the start
    auto cfg = fast_config();
    cfg.max_iterations = 10;
    Pipeline pipeline(corpus, backend, cfg, dir.path());
    auto result = pipeline.run();
    CHECK(result.stop_reason == "pool_exhausted");
    CHECK(result.iterations == 1);
    CHECK(result.reports.back().remaining == 0);
}

TEST_CASE("pipeline stalls when an iteration yields too few labels") {
    TempDir dir("pipe");
    Corpus corpus = small_corpus(1, 4);
    auto backend = staged_backend(
        {{"unl0", 99}, {"unl1", 99}, {"unl2", 99}, {"unl3", 99}});
    auto cfg = fast_config();
    cfg.max_iterations = 10;
    Pipeline pipeline(corpus, backend, cfg, dir.path());
    auto result = pipeline.run();
    CHECK(result.stop_reason == "stalled");
    CHECK(result.iterations == 1);
    CHECK(result.reports[0].total_samples == 0);
}

TEST_CASE("a fresh run refuses a directory with existing state") {
    TempDir dir("pipe");
    Corpus corpus = small_corpus(1, 2);
    {
        Pipeline pipeline(corpus, staged_backend({}), fast_config(), dir.path());
        pipeline.run();
    }
    Pipeline again(corpus, staged_backend({}), fast_config(), dir.path());
    CHECK_THROWS_WITH(again.run(), Catch::Matchers::ContainsSubstring("already exists"));
}

TEST_CASE("resume requires matching fingerprint, seed, and corpus") {
    TempDir dir("pipe");
    Corpus corpus = small_corpus(1, 4);
    auto backend = staged_backend({{"unl2", 99}, {"unl3", 99}});
    {
        Pipeline pipeline(corpus, backend, fast_config(7), dir.path(), "fp-one");
        pipeline.run();
    }

    Pipeline wrong_fp(corpus, staged_backend({}), fast_config(7), dir.path(), "fp-two");
    CHECK_THROWS_WITH(wrong_fp.run(true),
                      Catch::Matchers::ContainsSubstring("fingerprint mismatch"));

    Pipeline wrong_seed(corpus, staged_backend({}), fast_config(8), dir.path(), "fp-one");
    CHECK_THROWS_WITH(wrong_seed.run(true), Catch::Matchers::ContainsSubstring("seed mismatch"));

    Pipeline wrong_corpus(small_corpus(1, 3), staged_backend({}), fast_config(7), dir.path(),
                          "fp-one");
    CHECK_THROWS_WITH(wrong_corpus.run(true), Catch::Matchers::ContainsSubstring("corpus mismatch"));

    Pipeline fresh(corpus, staged_backend({}), fast_config(7), dir.path(), "fp-one");
    CHECK_THROWS_AS(fresh.run(false), StateError);
}

TEST_CASE("resuming a finished run is a no-op") {
    TempDir dir("pipe");
    Corpus corpus = small_corpus(1, 2);
    std::string first_state;
    {
        Pipeline pipeline(corpus, staged_backend({}), fast_config(), dir.path());
        auto result = pipeline.run();
        CHECK(result.stop_reason == "pool_exhausted");
        first_state = read_file(dir / "state.json");
    }
    auto backend = staged_backend({});
    Pipeline pipeline(corpus, backend, fast_config(), dir.path());
    auto resumed = pipeline.run(true);
    CHECK(resumed.stop_reason == "pool_exhausted");
    CHECK(resumed.iterations == 1);
    CHECK(resumed.reports.size() == 1);
    CHECK(backend->generate_calls == 0);  // nothing re-ran
    CHECK(read_file(dir / "state.json") == first_state);
}

TEST_CASE("resume of nothing fails cleanly") {
    TempDir dir("pipe");
    Pipeline pipeline(small_corpus(1, 2), staged_backend({}), fast_config(), dir.path());
    CHECK_THROWS_WITH(pipeline.run(true), Catch::Matchers::ContainsSubstring("nothing to resume"));
}

TEST_CASE("crash after an iteration resumes to a byte-identical run") {
    Corpus corpus = small_corpus(2, 6);
    auto ripen = std::map<std::string, int>{{"unl0", 0}, {"unl1", 0}, {"unl2", 2},
                                            {"unl3", 2}, {"unl4", 3}, {"unl5", 99}};
    TempDir clean_dir("pipe-clean");
    {
        Pipeline pipeline(corpus, staged_backend(ripen), fast_config(), clean_dir.path());
        pipeline.run();
    }

    TempDir crash_dir("pipe-crash");
    struct Boom {};
    {
        Pipeline pipeline(corpus, staged_backend(ripen), fast_config(), crash_dir.path());
        PipelineHooks hooks;
        hooks.post_iteration = [](int iteration) {
            if (iteration == 1) throw Boom{};
        };
        CHECK_THROWS_AS(pipeline.run(false, hooks), Boom);
    }
    {
        Pipeline pipeline(corpus, staged_backend(ripen), fast_config(), crash_dir.path());
        auto result = pipeline.run(true);
        CHECK(result.stop_reason == "max_iterations");
        REQUIRE(result.reports.size() == 3);
    }

    for (const auto& entry : std::filesystem::directory_iterator(clean_dir.path())) {
        auto name = entry.path().filename().string();
        if (name == ".lock") continue;
        INFO("comparing " << name);
        CHECK(read_file(entry.path()) == read_file(crash_dir / name));
    }
}

TEST_CASE("cumulative training widens later batches") {
    Corpus corpus = small_corpus(1, 4);
    auto ripen = std::map<std::string, int>{{"unl0", 0}, {"unl1", 2}, {"unl2", 3}, {"unl3", 3}};

    auto count_lines = [](const std::filesystem::path& p) {
        size_t n = 0;
        for_each_line(read_file(p), [&](std::string_view line, size_t) {
            if (!line.empty()) ++n;
        });
        return n;
    };

    TempDir plain_dir("pipe-plain");
    {
        Pipeline pipeline(corpus, staged_backend(ripen), fast_config(), plain_dir.path());
        pipeline.run();
    }
    // Round 2 trains on 1 labeled + 1 new selection.
    CHECK(count_lines(plain_dir / "batch_iter_2.jsonl") == 2);

    TempDir cum_dir("pipe-cum");
    auto cfg = fast_config();
    cfg.cumulative_training = true;
    {
        Pipeline pipeline(corpus, staged_backend(ripen), cfg, cum_dir.path());
        pipeline.run();
    }
    // Cumulative: 1 labeled + iteration-1 selection + iteration-2 selection.
    CHECK(count_lines(cum_dir / "batch_iter_1.jsonl") == 2);
    CHECK(count_lines(cum_dir / "batch_iter_2.jsonl") == 3);
}

TEST_CASE("cumulative history is rebuilt from label files on resume") {
    Corpus corpus = small_corpus(1, 4);
    auto ripen = std::map<std::string, int>{{"unl0", 0}, {"unl1", 2}, {"unl2", 3}, {"unl3", 3}};
    auto cfg = fast_config();
    cfg.cumulative_training = true;

    TempDir clean_dir("pipe-cclean");
    {
        Pipeline pipeline(corpus, staged_backend(ripen), cfg, clean_dir.path());
        pipeline.run();
    }
    TempDir crash_dir("pipe-ccrash");
    struct Boom {};
    {
        Pipeline pipeline(corpus, staged_backend(ripen), cfg, crash_dir.path());
        PipelineHooks hooks;
        hooks.post_iteration = [](int iteration) {
            if (iteration == 1) throw Boom{};
        };
        CHECK_THROWS_AS(pipeline.run(false, hooks), Boom);
    }
    {
        Pipeline pipeline(corpus, staged_backend(ripen), cfg, crash_dir.path());
        pipeline.run(true);
    }
    CHECK(read_file(clean_dir / "batch_iter_2.jsonl") == read_file(crash_dir / "batch_iter_2.jsonl"));
    CHECK(read_file(clean_dir / "state.json") == read_file(crash_dir / "state.json"));
}

TEST_CASE("the run directory is exclusively locked while running") {
    TempDir dir("pipe");
    Corpus corpus = small_corpus(1, 2);

    std::mutex mu;
    std::condition_variable cv;
    bool inside = false, release = false;

    Pipeline holder(corpus, staged_backend({}), fast_config(), dir.path());
    PipelineHooks hooks;
    hooks.post_iteration = [&](int) {
        std::unique_lock lock(mu);
        inside = true;
        cv.notify_all();
        cv.wait(lock, [&] { return release; });
    };
    std::thread runner([&] { holder.run(false, hooks); });
    {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return inside; });
    }

    Pipeline intruder(corpus, staged_backend({}), fast_config(), dir.path());
    CHECK_THROWS_WITH(intruder.run(), Catch::Matchers::ContainsSubstring("locked"));

    {
        std::unique_lock lock(mu);
        release = true;
        cv.notify_all();
    }
    runner.join();
}

TEST_CASE("run_iteration rejects an empty pool and audit reports full-pool metrics") {
    TempDir dir("pipe");
    Corpus corpus = small_corpus(1, 4);
    auto cfg = fast_config();
    cfg.audit = true;
    auto backend = staged_backend({{"unl1", 99}, {"unl2", 99}, {"unl3", 99}});
    Pipeline pipeline(corpus, backend, cfg, dir.path());
    auto result = pipeline.run();
    REQUIRE(!result.reports.empty());
    const auto& audit = result.reports[0].audit;
    REQUIRE(audit.has_value());
    // The audit relabels the full initial pool even as the live pool shrinks.
    CHECK_THAT(audit->cons_rate, WithinAbs(0.25, 1e-15));
    CHECK(audit->selected == 1);
    REQUIRE(audit->accuracy.has_value());
    // Scripted answers are "9" while hidden truth is 200+i: accuracy 0.
    CHECK(*audit->accuracy == 0.0);

    Corpus empty = small_corpus(1, 0);
    Pipeline hollow(empty, staged_backend({}), fast_config(), dir.path());
    CHECK_THROWS_AS(hollow.run_iteration(1), ValidationError);
}

TEST_CASE("pipeline validates labeled answers and backend presence") {
    Corpus corpus = small_corpus(1, 1);
    corpus.labeled[0].reference_answer.reset();
    TempDir dir("pipe");
    CHECK_THROWS_AS(Pipeline(corpus, staged_backend({}), fast_config(), dir.path()),
                    ValidationError);
    CHECK_THROWS_AS(Pipeline(small_corpus(1, 1), nullptr, fast_config(), dir.path()),
                    ValidationError);
}
