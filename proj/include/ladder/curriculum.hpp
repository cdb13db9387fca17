#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ladder/backend.hpp"
#include "ladder/corpus.hpp"
#include "ladder/errors.hpp"
#include "ladder/grpo.hpp"
#include "ladder/io.hpp"
#include "ladder/policy.hpp"
#include "ladder/report.hpp"
#include "ladder/rng.hpp"
#include "ladder/selection.hpp"
#include "ladder/templates.hpp"
#include "ladder/verifier.hpp"

namespace ladder {

struct CurriculumConfig {
    int max_iterations = 3;
    size_t min_new_labels = 1;  // stop once an iteration adds fewer labels
    uint64_t seed = 0;
    SelectionConfig selection;  // carries n_inferences and tau
    GrpoConfig grpo;            // group_size doubles as draws per training prompt
    // Train on the union of all selections so far instead of only the
    // current round's. Off by default: each round trains on the labeled set
    // plus that round's selection.
    bool cumulative_training = false;
    bool audit = true;  // re-measure the full initial pool every iteration
    std::optional<int64_t> fixed_clock;  // pins report timestamps when set
};

// ---------------------------------------------------------------------------
// Toy warm-up: GRPO steps on an in-process categorical policy. Used where the
// reward math itself is under test; the pipeline below drives a Backend
// instead and treats training as an external event.

struct ToyTask {
    std::string prompt_id;
    std::string reference;  // bare answer, compared via the verifier relation
};

struct WarmupToyStats {
    double greedy_accuracy_before = 0.0;
    double greedy_accuracy_after = 0.0;
    int steps = 0;
};

inline double toy_greedy_accuracy(const ToyPolicy& policy, const std::vector<ToyTask>& tasks) {
    if (tasks.empty()) return 0.0;
    size_t correct = 0;
    for (const auto& t : tasks)
        if (answers_equal(policy.vocab[policy.greedy(t.prompt_id)], t.reference)) ++correct;
    return static_cast<double>(correct) / static_cast<double>(tasks.size());
}

inline WarmupToyStats warmup_toy(ToyPolicy& policy, const std::vector<ToyTask>& tasks, int steps,
                                 const GrpoConfig& cfg, uint64_t seed) {
    if (tasks.empty()) throw ValidationError("warmup_toy: no tasks");
    if (steps < 0) throw ValidationError("warmup_toy: steps must be >= 0");
    ToyPolicy anchor = policy;  // KL reference stays at the initial policy
    WarmupToyStats stats;
    stats.steps = steps;
    stats.greedy_accuracy_before = toy_greedy_accuracy(policy, tasks);
    for (int s = 0; s < steps; ++s) {
        uint64_t step_seed = derive_seed(seed, "warmup-step", static_cast<uint64_t>(s));
        std::vector<GroupRollout> rollouts;
        rollouts.reserve(tasks.size());
        for (const auto& t : tasks) {
            auto roll = sample_group(policy, t.prompt_id, cfg.group_size, step_seed);
            for (size_t j = 0; j < roll.answer_idx.size(); ++j)
                roll.rewards[j] =
                    reward("\\boxed{" + policy.vocab[roll.answer_idx[j]] + "}", t.reference);
            rollouts.push_back(std::move(roll));
        }
        grpo_step(policy, anchor, rollouts, cfg);
    }
    stats.greedy_accuracy_after = toy_greedy_accuracy(policy, tasks);
    return stats;
}

// ---------------------------------------------------------------------------
// Pipeline state, committed to <out_dir>/state.json after warm-up and after
// every iteration (write-then-rename, so a crash leaves the last good state).

struct PipelineState {
    bool warmup_done = false;
    int iteration = 0;  // last completed iteration, 0 before the first
    std::vector<std::string> remaining;  // sorted ids
    std::vector<std::string> selected_files;
    std::vector<size_t> labels_per_iteration;
    size_t initial_unlabeled = 0;
    std::string policy_version;
    std::string stop_reason;  // empty while the run is in flight
    uint64_t seed = 0;
    std::string config_fingerprint;
    nlohmann::json backend;  // opaque snapshot, fed back via Backend::restore
};

inline nlohmann::ordered_json state_to_json(const PipelineState& st) {
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["config_fingerprint"] = st.config_fingerprint;
    j["seed"] = st.seed;
    j["warmup_done"] = st.warmup_done;
    j["iteration"] = st.iteration;
    j["stop_reason"] = st.stop_reason.empty() ? nlohmann::ordered_json(nullptr)
                                              : nlohmann::ordered_json(st.stop_reason);
    j["initial_unlabeled"] = st.initial_unlabeled;
    j["remaining"] = st.remaining;
    j["selected_files"] = st.selected_files;
    j["labels_per_iteration"] = st.labels_per_iteration;
    j["policy_version"] = st.policy_version;
    j["backend"] = st.backend;
    return j;
}

inline PipelineState state_from_json(const nlohmann::json& j) {
    PipelineState st;
    if (j.at("format_version").get<int>() != 1)
        throw StateError("unsupported state format_version");
    st.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    st.seed = j.at("seed").get<uint64_t>();
    st.warmup_done = j.at("warmup_done").get<bool>();
    st.iteration = j.at("iteration").get<int>();
    if (!j.at("stop_reason").is_null()) st.stop_reason = j.at("stop_reason").get<std::string>();
    st.initial_unlabeled = j.at("initial_unlabeled").get<size_t>();
    st.remaining = j.at("remaining").get<std::vector<std::string>>();
    st.selected_files = j.at("selected_files").get<std::vector<std::string>>();
    st.labels_per_iteration = j.at("labels_per_iteration").get<std::vector<size_t>>();
    st.policy_version = j.at("policy_version").get<std::string>();
    st.backend = j.at("backend");
    return st;
}

inline PipelineState read_state(const std::filesystem::path& path) {
    try {
        return state_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw StateError("state file " + path.string() + ": " + e.what());
    }
}

inline std::vector<PseudoLabel> read_labels_file(const std::filesystem::path& path) {
    std::vector<PseudoLabel> out;
    auto content = read_file(path);
    try {
        for_each_line(content, [&](std::string_view line, size_t) {
            if (line.empty()) return;
            auto j = nlohmann::json::parse(line);
            PseudoLabel label;
            label.id = j.at("id").get<std::string>();
            label.answer = j.at("answer").get<std::string>();
            label.source = j.at("source").get<std::string>();
            label.entropy = j.at("entropy").get<double>();
            label.iteration = j.at("iteration").get<int>();
            out.push_back(std::move(label));
        });
    } catch (const nlohmann::json::exception& e) {
        throw StateError("labels file " + path.string() + ": " + e.what());
    }
    return out;
}

namespace detail {

// One run owns its directory for the duration of the process.
class RunLock {
  public:
    explicit RunLock(const std::filesystem::path& path) {
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) throw StateError("cannot open lock file " + path.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            fd_ = -1;
            throw StateError("run directory already locked: " + path.string());
        }
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;
    ~RunLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }

  private:
    int fd_ = -1;
};

}  // namespace detail

struct PipelineHooks {
    std::function<void(int)> post_iteration;  // runs after an iteration commits
    std::function<int64_t()> clock;           // test override for timestamps
};

struct PipelineResult {
    std::vector<IterationReport> reports;  // every completed iteration, in order
    std::string stop_reason;  // "max_iterations" | "pool_exhausted" | "stalled"
    int iterations = 0;
};

class Pipeline {
  public:
    // The backend must already know every problem it will be asked about
    // (simulated backends need registered answers). fingerprint gates resume;
    // pass the hash of whatever configuration record the caller persists.
    Pipeline(Corpus corpus, std::shared_ptr<Backend> backend, CurriculumConfig cfg,
             std::filesystem::path out_dir, std::string config_fingerprint = "")
        : corpus_(std::move(corpus)),
          backend_(std::move(backend)),
          cfg_(std::move(cfg)),
          out_dir_(std::move(out_dir)),
          fingerprint_(std::move(config_fingerprint)) {
        if (!backend_) throw ValidationError("pipeline requires a backend");
        for (const auto& p : corpus_.labeled)
            if (!p.reference_answer)
                throw ValidationError("labeled problem \"" + p.id + "\" has no answer");
        for (const auto& p : corpus_.unlabeled) {
            pool_.emplace(p.id, p);
            difficulty_by_id_.emplace(p.id, p.difficulty);
        }
        total_corpus_ = corpus_.labeled.size() + corpus_.unlabeled.size();
        init_fresh_state();
    }

    PipelineResult run(bool resume = false, PipelineHooks hooks = {}) {
        hooks_ = std::move(hooks);
        std::filesystem::create_directories(out_dir_);
        detail::RunLock lock(out_dir_ / ".lock");
        auto state_path = out_dir_ / "state.json";
        if (resume) {
            if (!std::filesystem::exists(state_path))
                throw StateError("nothing to resume: " + state_path.string() + " not found");
            load_state(state_path);
            if (!state_.stop_reason.empty())  // finished run; resume is a no-op
                return {reports_, state_.stop_reason, state_.iteration};
        } else {
            if (std::filesystem::exists(state_path))
                throw StateError(state_path.string() +
                                 " already exists; resume it or use a fresh directory");
            init_fresh_state();
            reports_.clear();
        }

        if (!state_.warmup_done) do_warmup();

        int i = state_.iteration;
        std::string stop;
        while (true) {
            if (remaining_.empty()) {
                stop = "pool_exhausted";
                break;
            }
            if (i >= cfg_.max_iterations) {
                stop = "max_iterations";
                break;
            }
            ++i;
            size_t added = run_iteration(i);
            if (remaining_.empty()) {
                stop = "pool_exhausted";
                break;
            }
            if (added < cfg_.min_new_labels) {
                stop = "stalled";
                break;
            }
        }
        state_.stop_reason = stop;
        commit_state();
        atomic_write_file(out_dir_ / "report.csv", export_csv(reports_));
        return {reports_, stop, state_.iteration};
    }

    // One labeling round: audit (optional), generate N per remaining problem,
    // select, persist labels, train on labeled + selected, shrink the pool,
    // report, commit. Returns the number of labels added.
    size_t run_iteration(int iteration) {
        if (remaining_.empty()) throw ValidationError("run_iteration: remaining pool is empty");
        int64_t t0 = now();

        std::optional<AuditMetrics> audit;
        if (cfg_.audit) audit = measure_audit();

        auto sel = run_selection(remaining_pool(), *backend_, cfg_.selection,
                                 derive_seed(cfg_.seed, "label", static_cast<uint64_t>(iteration)));
        auto labels = build_selected(sel.consistent, sel.resolved, iteration);

        std::string label_lines;
        for (const auto& label : labels) {
            nlohmann::ordered_json j;
            j["id"] = label.id;
            j["answer"] = label.answer;
            j["source"] = label.source;
            j["entropy"] = label.entropy;
            j["iteration"] = label.iteration;
            label_lines += j.dump();
            label_lines += '\n';
        }
        std::string labels_name = "labels_iter_" + std::to_string(iteration) + ".jsonl";
        atomic_write_file(out_dir_ / labels_name, label_lines);

        if (cfg_.cumulative_training) selected_history_.push_back(labels);
        train(iteration, labels);

        for (const auto& label : labels) remaining_.erase(label.id);
        total_selected_ += labels.size();
        if (remaining_.size() + total_selected_ != state_.initial_unlabeled)
            throw Error("conservation violated: " + std::to_string(remaining_.size()) + " + " +
                        std::to_string(total_selected_) +
                        " != " + std::to_string(state_.initial_unlabeled));

        auto report = compute_report(iteration, sel, labels, remaining_.size(), difficulty_by_id_,
                                     corpus_.audit_answers);
        report.audit = audit;
        report.started_unix = t0;
        report.finished_unix = now();
        write_report(out_dir_, report);
        reports_.push_back(report);

        state_.iteration = iteration;
        state_.selected_files.push_back(labels_name);
        state_.labels_per_iteration.push_back(labels.size());
        state_.policy_version = backend_->version();
        commit_state();
        if (hooks_.post_iteration) hooks_.post_iteration(iteration);
        return labels.size();
    }

  private:
    int64_t now() const {
        if (hooks_.clock) return hooks_.clock();
        if (cfg_.fixed_clock) return *cfg_.fixed_clock;
        return static_cast<int64_t>(std::time(nullptr));
    }

    void init_fresh_state() {
        state_ = PipelineState{};
        state_.seed = cfg_.seed;
        state_.config_fingerprint = fingerprint_;
        state_.initial_unlabeled = pool_.size();
        remaining_.clear();
        for (const auto& [id, p] : pool_) remaining_.insert(id);
        selected_history_.clear();
        total_selected_ = 0;
    }

    void commit_state() {
        state_.remaining.assign(remaining_.begin(), remaining_.end());
        state_.backend = backend_->snapshot();
        atomic_write_file(out_dir_ / "state.json", state_to_json(state_).dump(2) + "\n");
    }

    void load_state(const std::filesystem::path& path) {
        auto st = read_state(path);
        if (st.config_fingerprint != fingerprint_)
            throw StateError("config fingerprint mismatch: state has " + st.config_fingerprint +
                             ", current config is " + fingerprint_);
        if (st.seed != cfg_.seed) throw StateError("seed mismatch between state and config");
        if (st.initial_unlabeled != pool_.size())
            throw StateError("corpus mismatch: state expects " +
                             std::to_string(st.initial_unlabeled) + " unlabeled problems, got " +
                             std::to_string(pool_.size()));
        remaining_.clear();
        for (const auto& id : st.remaining) {
            if (!pool_.count(id)) throw StateError("state refers to unknown problem \"" + id + "\"");
            remaining_.insert(id);
        }
        total_selected_ = 0;
        for (size_t n : st.labels_per_iteration) total_selected_ += n;
        if (remaining_.size() + total_selected_ != st.initial_unlabeled)
            throw StateError("state violates conservation of the unlabeled pool");
        backend_->restore(st.backend);
        selected_history_.clear();
        if (cfg_.cumulative_training)
            for (const auto& name : st.selected_files)
                selected_history_.push_back(read_labels_file(out_dir_ / name));
        reports_.clear();
        for (int k = 1; k <= st.iteration; ++k)
            reports_.push_back(read_report(report_path(out_dir_, k)));
        state_ = std::move(st);
    }

    GenerationRequest make_request(const std::string& id, const std::string& prompt, int n,
                                   uint64_t seed) const {
        const auto& tmpl = math_template();
        auto rp = render(tmpl, prompt);
        GenerationRequest req;
        req.template_name = tmpl.name;
        req.system = rp.system;
        req.user = rp.user;
        req.problem_id = id;
        req.n = n;
        req.temperature = cfg_.selection.temperature;
        req.seed = seed;
        req.max_tokens = cfg_.selection.max_tokens;
        return req;
    }

    std::string batch_line(const std::string& id, const char* kind, const std::string& target,
                           const std::vector<std::string>& outputs) const {
        std::vector<double> rewards;
        rewards.reserve(outputs.size());
        for (const auto& out : outputs) rewards.push_back(reward(out, target));
        nlohmann::ordered_json j;
        j["id"] = id;
        j["kind"] = kind;
        j["target"] = target;
        j["outputs"] = outputs;
        j["rewards"] = rewards;
        j["advantages"] = group_advantages(rewards, cfg_.grpo.std_guard);
        return j.dump();
    }

    void do_warmup() {
        uint64_t warm_seed = derive_seed(cfg_.seed, "warmup");
        std::vector<std::string> lines(corpus_.labeled.size());
        detail::parallel_for(corpus_.labeled.size(), cfg_.selection.in_flight, [&](size_t idx) {
            const Problem& p = corpus_.labeled[idx];
            auto outputs =
                backend_->generate(make_request(p.id, p.prompt, cfg_.grpo.group_size, warm_seed));
            lines[idx] = batch_line(p.id, "labeled", *p.reference_answer, outputs);
        });
        std::string content;
        for (const auto& line : lines) {
            content += line;
            content += '\n';
        }
        atomic_write_file(out_dir_ / "batch_warmup.jsonl", content);
        TrainingEvent ev;
        ev.labels_used = corpus_.labeled.size();
        ev.fraction_of_corpus =
            total_corpus_ ? static_cast<double>(ev.labels_used) / total_corpus_ : 0.0;
        backend_->notify_trained(ev);
        state_.warmup_done = true;
        state_.policy_version = backend_->version();
        commit_state();
    }

    // Emits batch_iter_<i>.jsonl over labeled data plus pseudo-labels (this
    // round's, or all rounds' in cumulative mode) and notifies the backend.
    void train(int iteration, const std::vector<PseudoLabel>& current) {
        struct Item {
            const std::string* id;
            const std::string* prompt;
            const std::string* target;
            const char* kind;
        };
        std::vector<Item> mix;
        for (const auto& p : corpus_.labeled)
            mix.push_back({&p.id, &p.prompt, &*p.reference_answer, "labeled"});
        auto add_labels = [&](const std::vector<PseudoLabel>& labels) {
            for (const auto& label : labels) {
                const Problem& p = pool_.at(label.id);
                mix.push_back({&label.id, &p.prompt, &label.answer, "selected"});
            }
        };
        if (cfg_.cumulative_training)
            for (const auto& labels : selected_history_) add_labels(labels);
        else
            add_labels(current);

        uint64_t train_seed = derive_seed(cfg_.seed, "train", static_cast<uint64_t>(iteration));
        std::vector<std::string> lines(mix.size());
        detail::parallel_for(mix.size(), cfg_.selection.in_flight, [&](size_t idx) {
            const Item& item = mix[idx];
            auto outputs = backend_->generate(
                make_request(*item.id, *item.prompt, cfg_.grpo.group_size, train_seed));
            lines[idx] = batch_line(*item.id, item.kind, *item.target, outputs);
        });
        std::string content;
        for (const auto& line : lines) {
            content += line;
            content += '\n';
        }
        atomic_write_file(out_dir_ / ("batch_iter_" + std::to_string(iteration) + ".jsonl"),
                          content);
        TrainingEvent ev;
        ev.labels_used = mix.size();
        ev.fraction_of_corpus =
            total_corpus_ ? static_cast<double>(mix.size()) / total_corpus_ : 0.0;
        backend_->notify_trained(ev);
    }

    std::vector<Problem> remaining_pool() const {
        std::vector<Problem> pool;
        pool.reserve(remaining_.size());
        for (const auto& id : remaining_) pool.push_back(pool_.at(id));
        return pool;
    }

    // Labels the FULL initial pool with iteration-independent seeds and no
    // side effects. Because the draws are common random numbers, differences
    // between iterations isolate the backend's skill change, which is what
    // makes the cross-iteration trend comparable.
    AuditMetrics measure_audit() {
        std::vector<Problem> pool;
        pool.reserve(pool_.size());
        for (const auto& [id, p] : pool_) pool.push_back(p);
        auto sel =
            run_selection(pool, *backend_, cfg_.selection, derive_seed(cfg_.seed, "audit"));
        auto labels = build_selected(sel.consistent, sel.resolved, 0);
        AuditMetrics m;
        m.cons_rate = sel.cons_rate;
        m.selected = labels.size();
        size_t audited = 0, correct = 0;
        double dsum = 0.0;
        for (const auto& label : labels) {
            dsum += difficulty_by_id_.at(label.id);
            auto it = corpus_.audit_answers.find(label.id);
            if (it == corpus_.audit_answers.end()) continue;
            ++audited;
            if (answers_equal(label.answer, it->second)) ++correct;
        }
        if (!labels.empty()) m.avg_difficulty = dsum / static_cast<double>(labels.size());
        if (audited > 0) m.accuracy = static_cast<double>(correct) / static_cast<double>(audited);
        return m;
    }

    Corpus corpus_;
    std::shared_ptr<Backend> backend_;
    CurriculumConfig cfg_;
    std::filesystem::path out_dir_;
    std::string fingerprint_;
    std::map<std::string, Problem> pool_;
    std::map<std::string, double> difficulty_by_id_;
    size_t total_corpus_ = 0;
    std::set<std::string> remaining_;
    std::vector<std::vector<PseudoLabel>> selected_history_;  // cumulative mode only
    size_t total_selected_ = 0;
    PipelineState state_;
    PipelineHooks hooks_;
    std::vector<IterationReport> reports_;
};

}  // namespace ladder
