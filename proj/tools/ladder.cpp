// Command-line surface for the self-training pipeline: partition a corpus,
// run the warm-up plus labeling iterations, aggregate reports.
//
// Exit codes: 0 ok, 2 usage or validation error, 3 backend or cache error,
// 4 state error (resume mismatch, locked run dir), 1 anything else.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ladder/cache.hpp"
#include "ladder/config.hpp"
#include "ladder/corpus.hpp"
#include "ladder/curriculum.hpp"
#include "ladder/http_backend.hpp"
#include "ladder/report.hpp"

namespace {

ladder::DifficultyRange parse_range(const std::string& text, const char* flag) {
    auto fail = [&] {
        throw ladder::ValidationError(std::string(flag) + ": expected lo:hi with lo <= hi, got \"" +
                                      text + "\"");
    };
    size_t colon = text.find(':');
    if (colon == std::string::npos) fail();
    auto parse_part = [&](const std::string& part) {
        double v = 0.0;
        const char* first = part.data();
        const char* last = first + part.size();
        auto res = std::from_chars(first, last, v);
        if (res.ec != std::errc() || res.ptr != last || part.empty()) fail();
        return v;
    };
    ladder::DifficultyRange r;
    r.lo = parse_part(text.substr(0, colon));
    r.hi = parse_part(text.substr(colon + 1));
    if (r.lo > r.hi) fail();
    return r;
}

std::shared_ptr<ladder::Backend> build_backend(const ladder::RunConfig& cfg,
                                               const ladder::Corpus& corpus) {
    std::shared_ptr<ladder::Backend> inner;
    if (cfg.backend.kind == "simulated") {
        auto sim = std::make_shared<ladder::SimulatedBackend>(cfg.backend.simulated);
        for (const auto& p : corpus.labeled)
            sim->register_problem(p.id, p.difficulty, *p.reference_answer);
        for (const auto& p : corpus.unlabeled) {
            auto it = corpus.audit_answers.find(p.id);
            if (it == corpus.audit_answers.end())
                throw ladder::ValidationError(
                    "simulated backend needs a hidden answer for unlabeled problem \"" + p.id +
                    "\" (fill the answer field in the unlabeled file)");
            sim->register_problem(p.id, p.difficulty, it->second);
        }
        inner = sim;
    } else if (cfg.backend.kind == "http") {
        inner = std::make_shared<ladder::HttpBackend>(cfg.backend.http);
    } else {  // replay: serve from cache only, no inner backend
        return std::make_shared<ladder::CachedBackend>(nullptr, cfg.backend.cache_path,
                                                       ladder::CacheMode::replay);
    }
    if (!cfg.backend.cache_path.empty())
        return std::make_shared<ladder::CachedBackend>(inner, cfg.backend.cache_path,
                                                       ladder::CacheMode::record);
    return inner;
}

int cmd_partition(const std::string& input, const std::string& labeled_range,
                  const std::string& unlabeled_range, size_t labeled_count, uint64_t seed,
                  const std::string& out_dir) {
    auto lr = parse_range(labeled_range, "--labeled-range");
    auto ur = parse_range(unlabeled_range, "--unlabeled-range");
    auto loaded = ladder::load_corpus(input, ladder::CorpusSchema::mixed);
    std::vector<ladder::Problem> all = std::move(loaded.labeled);
    all.insert(all.end(), std::make_move_iterator(loaded.unlabeled.begin()),
               std::make_move_iterator(loaded.unlabeled.end()));
    auto parts = ladder::partition_by_difficulty(all, lr, ur, labeled_count, seed);
    std::filesystem::create_directories(out_dir);
    auto labeled_path = std::filesystem::path(out_dir) / "labeled.jsonl";
    auto unlabeled_path = std::filesystem::path(out_dir) / "unlabeled.jsonl";
    ladder::save_problems(labeled_path, parts.labeled);
    // Hidden answers ride along in the unlabeled file; the loader routes them
    // to the audit map, never onto the problems themselves.
    ladder::save_problems(unlabeled_path, parts.unlabeled, &parts.audit_answers);
    std::cout << "labeled: " << parts.labeled.size() << " problems -> " << labeled_path.string()
              << "\n";
    std::cout << "unlabeled: " << parts.unlabeled.size() << " problems -> "
              << unlabeled_path.string() << "\n";
    return 0;
}

int cmd_run(const ladder::RunConfig& cfg, bool resume) {
    ladder::validate_run_config(cfg);
    if (cfg.labeled_path.empty() || cfg.unlabeled_path.empty())
        throw ladder::ValidationError("config: [corpus] labeled and unlabeled paths must be set");
    ladder::Corpus corpus;
    {
        auto lab = ladder::load_corpus(cfg.labeled_path, ladder::CorpusSchema::labeled);
        auto unl = ladder::load_corpus(cfg.unlabeled_path, ladder::CorpusSchema::unlabeled);
        corpus.labeled = std::move(lab.labeled);
        corpus.unlabeled = std::move(unl.unlabeled);
        corpus.audit_answers = std::move(unl.audit_answers);
    }
    auto backend = build_backend(cfg, corpus);

    ladder::CurriculumConfig ccfg;
    ccfg.max_iterations = cfg.max_iterations;
    ccfg.min_new_labels = cfg.min_new_labels;
    ccfg.seed = cfg.seed;
    ccfg.selection = cfg.selection;
    ccfg.grpo = cfg.grpo;
    ccfg.cumulative_training = cfg.cumulative_training;
    ccfg.audit = cfg.audit;
    ccfg.fixed_clock = cfg.fixed_clock;

    std::filesystem::create_directories(cfg.out_dir);
    ladder::atomic_write_file(std::filesystem::path(cfg.out_dir) / "effective_config.ini",
                              ladder::echo_config(cfg));
    ladder::Pipeline pipeline(std::move(corpus), backend, ccfg, cfg.out_dir,
                              ladder::config_fingerprint(cfg));
    auto result = pipeline.run(resume);

    for (const auto& r : result.reports) {
        std::cout << "iter " << r.iteration << ": cons_rate " << ladder::format_4dp(r.cons_rate)
                  << " selected " << r.total_samples << " accuracy "
                  << (r.accuracy ? ladder::format_4dp(*r.accuracy) : "-") << " avg_difficulty "
                  << (r.avg_difficulty ? ladder::format_4dp(*r.avg_difficulty) : "-")
                  << " remaining " << r.remaining << "\n";
    }
    std::cout << "stop: " << result.stop_reason << " after " << result.iterations
              << " iteration(s)\n";
    std::cout << "report: " << (std::filesystem::path(cfg.out_dir) / "report.csv").string()
              << "\n";
    return 0;
}

int cmd_report(const std::string& run_dir) {
    std::vector<ladder::IterationReport> reports;
    for (int k = 1;; ++k) {
        auto path = ladder::report_path(run_dir, k);
        if (!std::filesystem::exists(path)) break;
        try {
            reports.push_back(ladder::read_report(path));
        } catch (const ladder::StateError& e) {
            throw ladder::ValidationError(e.what());
        }
    }
    if (reports.empty())
        throw ladder::ValidationError("no iteration reports found in " + run_dir);
    std::cout << ladder::export_csv(reports);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Self-training pipeline: supervised warm-up, consistency/entropy pseudo-labeling,\n"
        "difficulty-progressive iterations. The http backend reads its bearer token from\n"
        "the environment variable named by [backend] api_key_env (default LADDER_API_KEY)."};
    app.require_subcommand(1);

    auto* part = app.add_subcommand("partition", "Split a corpus by difficulty");
    std::string part_input, part_out_dir;
    std::string part_labeled_range = "3.0:4.5", part_unlabeled_range = "5.0:10.0";
    size_t part_count = 2000;
    uint64_t part_seed = 0;
    part->add_option("--input", part_input, "Corpus JSONL (id, prompt, answer, difficulty)")
        ->required()
        ->check(CLI::ExistingFile);
    part->add_option("--labeled-range", part_labeled_range, "lo:hi for the supervised slice");
    part->add_option("--unlabeled-range", part_unlabeled_range, "lo:hi for the self-training pool");
    part->add_option("--labeled-count", part_count, "Size of the supervised slice");
    part->add_option("--seed", part_seed, "Sampling seed");
    part->add_option("--out-dir", part_out_dir, "Where labeled.jsonl and unlabeled.jsonl go")
        ->required();

    auto* run = app.add_subcommand("run", "Run warm-up and labeling iterations");
    std::string run_config;
    bool run_resume = false;
    int run_max_iters = 0, run_n_inferences = 0;
    double run_tau = 0.0;
    std::string run_backend, run_out_dir;
    uint64_t run_seed = 0;
    int64_t run_fixed_clock = 0;
    run->add_option("--config", run_config, "INI config file")
        ->required()
        ->check(CLI::ExistingFile);
    run->add_flag("--resume", run_resume, "Continue from the run dir's last committed state");
    auto* o_max = run->add_option("--max-iters", run_max_iters, "Override [curriculum] max_iterations");
    auto* o_tau = run->add_option("--tau", run_tau, "Override [selection] tau");
    auto* o_n = run->add_option("--n-inferences", run_n_inferences, "Override [selection] n_inferences");
    auto* o_backend = run->add_option("--backend", run_backend, "Override [backend] kind");
    auto* o_seed = run->add_option("--seed", run_seed, "Override [run] seed");
    auto* o_out = run->add_option("--out-dir", run_out_dir, "Override [run] out_dir");
    auto* o_clock = run->add_option("--fixed-clock", run_fixed_clock,
                                    "Pin report timestamps to this unix time");

    auto* rep = app.add_subcommand("report", "Aggregate iteration reports to CSV on stdout");
    std::string rep_dir;
    rep->add_option("--run-dir", rep_dir, "Run directory holding iter_<i>.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (part->parsed())
            return cmd_partition(part_input, part_labeled_range, part_unlabeled_range, part_count,
                                 part_seed, part_out_dir);
        if (run->parsed()) {
            auto cfg = ladder::parse_run_config(ladder::read_file(run_config));
            if (o_max->count()) cfg.max_iterations = run_max_iters;
            if (o_tau->count()) cfg.selection.tau = run_tau;
            if (o_n->count()) cfg.selection.n_inferences = run_n_inferences;
            if (o_backend->count()) cfg.backend.kind = run_backend;
            if (o_seed->count()) cfg.seed = run_seed;
            if (o_out->count()) cfg.out_dir = run_out_dir;
            if (o_clock->count()) cfg.fixed_clock = run_fixed_clock;
            return cmd_run(cfg, run_resume);
        }
        return cmd_report(rep_dir);
    } catch (const ladder::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ladder::BackendError& e) {  // covers cache errors
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ladder::StateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
