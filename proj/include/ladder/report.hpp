#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ladder/corpus.hpp"
#include "ladder/errors.hpp"
#include "ladder/io.hpp"
#include "ladder/selection.hpp"
#include "ladder/verifier.hpp"

namespace ladder {

struct BinAccuracy {
    double bin_lo = 0.0;
    size_t count = 0;
    std::optional<double> accuracy;
};

// Metrics from re-running the labeling procedure over the full unlabeled
// pool with the current policy (no side effects). This is the apples-to-
// apples series across iterations; the headline fields below describe the
// shrinking live pool instead.
struct AuditMetrics {
    double cons_rate = 0.0;
    size_t selected = 0;
    std::optional<double> accuracy;
    std::optional<double> avg_difficulty;
};

struct IterationReport {
    int iteration = 0;
    double cons_rate = 0.0;             // over this iteration's input pool
    size_t total_samples = 0;           // pseudo-labels added this iteration
    std::optional<double> accuracy;     // of those labels vs hidden answers
    std::optional<double> avg_difficulty;
    size_t remaining = 0;               // pool left after this iteration
    size_t pool_size = 0;               // pool entering this iteration
    std::vector<BinAccuracy> per_bin_accuracy;
    std::optional<AuditMetrics> audit;
    int64_t started_unix = 0;
    int64_t finished_unix = 0;
};

namespace detail {

// Per-bin accuracy uses width-1.0 bins over [5, 10]; difficulty outside the
// window is clamped into the edge bins.
constexpr double kBinLo = 5.0;
constexpr double kBinHi = 10.0;
constexpr double kBinWidth = 1.0;

inline size_t difficulty_bin(double d) {
    if (d < kBinLo) return 0;
    auto idx = static_cast<size_t>(std::floor((d - kBinLo) / kBinWidth + 1e-9));
    constexpr size_t n_bins = static_cast<size_t>((kBinHi - kBinLo) / kBinWidth);
    return idx >= n_bins ? n_bins - 1 : idx;
}

inline bool label_correct(const PseudoLabel& label,
                          const std::map<std::string, std::string>& audit_answers) {
    auto it = audit_answers.find(label.id);
    return it != audit_answers.end() && answers_equal(label.answer, it->second);
}

}  // namespace detail

// Assembles one iteration's report. audit_answers drive the accuracy fields
// and may be empty, in which case accuracy is absent rather than zero.
inline IterationReport compute_report(int iteration, const SelectionResult& selection,
                                      const std::vector<PseudoLabel>& labels, size_t remaining,
                                      const std::map<std::string, double>& difficulty_by_id,
                                      const std::map<std::string, std::string>& audit_answers) {
    IterationReport r;
    r.iteration = iteration;
    r.cons_rate = selection.cons_rate;
    r.pool_size = selection.pool_size;
    r.total_samples = labels.size();
    r.remaining = remaining;

    constexpr size_t n_bins =
        static_cast<size_t>((detail::kBinHi - detail::kBinLo) / detail::kBinWidth);
    std::vector<size_t> bin_total(n_bins, 0), bin_correct(n_bins, 0);
    double difficulty_sum = 0.0;
    size_t correct = 0, audited = 0;
    for (const auto& label : labels) {
        auto it = difficulty_by_id.find(label.id);
        if (it == difficulty_by_id.end())
            throw Error("no difficulty recorded for labeled id \"" + label.id + "\"");
        difficulty_sum += it->second;
        if (audit_answers.count(label.id)) {
            ++audited;
            size_t bin = detail::difficulty_bin(it->second);
            ++bin_total[bin];
            if (detail::label_correct(label, audit_answers)) {
                ++correct;
                ++bin_correct[bin];
            }
        }
    }
    if (!labels.empty())
        r.avg_difficulty = difficulty_sum / static_cast<double>(labels.size());
    if (audited > 0)
        r.accuracy = static_cast<double>(correct) / static_cast<double>(audited);
    for (size_t b = 0; b < n_bins; ++b) {
        BinAccuracy bin;
        bin.bin_lo = detail::kBinLo + static_cast<double>(b) * detail::kBinWidth;
        bin.count = bin_total[b];
        if (bin_total[b] > 0)
            bin.accuracy = static_cast<double>(bin_correct[b]) / static_cast<double>(bin_total[b]);
        r.per_bin_accuracy.push_back(bin);
    }
    return r;
}

inline nlohmann::ordered_json report_to_json(const IterationReport& r) {
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["cons_rate"] = r.cons_rate;
    j["total_samples"] = r.total_samples;
    j["accuracy"] = r.accuracy ? nlohmann::ordered_json(*r.accuracy) : nullptr;
    j["avg_difficulty"] = r.avg_difficulty ? nlohmann::ordered_json(*r.avg_difficulty) : nullptr;
    j["remaining"] = r.remaining;
    j["pool_size"] = r.pool_size;
    auto bins = nlohmann::ordered_json::array();
    for (const auto& bin : r.per_bin_accuracy) {
        nlohmann::ordered_json bj;
        bj["bin_lo"] = bin.bin_lo;
        bj["count"] = bin.count;
        bj["accuracy"] = bin.accuracy ? nlohmann::ordered_json(*bin.accuracy) : nullptr;
        bins.push_back(std::move(bj));
    }
    j["per_bin_accuracy"] = std::move(bins);
    if (r.audit) {
        nlohmann::ordered_json aj;
        aj["cons_rate"] = r.audit->cons_rate;
        aj["selected"] = r.audit->selected;
        aj["accuracy"] = r.audit->accuracy ? nlohmann::ordered_json(*r.audit->accuracy) : nullptr;
        aj["avg_difficulty"] =
            r.audit->avg_difficulty ? nlohmann::ordered_json(*r.audit->avg_difficulty) : nullptr;
        j["audit"] = std::move(aj);
    } else {
        j["audit"] = nullptr;
    }
    j["timestamps"] = {{"started_unix", r.started_unix}, {"finished_unix", r.finished_unix}};
    return j;
}

inline IterationReport report_from_json(const nlohmann::json& j) {
    IterationReport r;
    r.iteration = j.at("iteration").get<int>();
    r.cons_rate = j.at("cons_rate").get<double>();
    r.total_samples = j.at("total_samples").get<size_t>();
    if (!j.at("accuracy").is_null()) r.accuracy = j.at("accuracy").get<double>();
    if (!j.at("avg_difficulty").is_null())
        r.avg_difficulty = j.at("avg_difficulty").get<double>();
    r.remaining = j.at("remaining").get<size_t>();
    r.pool_size = j.at("pool_size").get<size_t>();
    for (const auto& bj : j.at("per_bin_accuracy")) {
        BinAccuracy bin;
        bin.bin_lo = bj.at("bin_lo").get<double>();
        bin.count = bj.at("count").get<size_t>();
        if (!bj.at("accuracy").is_null()) bin.accuracy = bj.at("accuracy").get<double>();
        r.per_bin_accuracy.push_back(bin);
    }
    if (!j.at("audit").is_null()) {
        AuditMetrics a;
        const auto& aj = j.at("audit");
        a.cons_rate = aj.at("cons_rate").get<double>();
        a.selected = aj.at("selected").get<size_t>();
        if (!aj.at("accuracy").is_null()) a.accuracy = aj.at("accuracy").get<double>();
        if (!aj.at("avg_difficulty").is_null())
            a.avg_difficulty = aj.at("avg_difficulty").get<double>();
        r.audit = a;
    }
    r.started_unix = j.at("timestamps").at("started_unix").get<int64_t>();
    r.finished_unix = j.at("timestamps").at("finished_unix").get<int64_t>();
    return r;
}

inline std::filesystem::path report_path(const std::filesystem::path& dir, int iteration) {
    return dir / ("iter_" + std::to_string(iteration) + ".json");
}

// JSON keeps full precision (shortest round-trip decimals); the CSV view
// below renders 4 decimals for human diffing.
inline void write_report(const std::filesystem::path& dir, const IterationReport& r) {
    atomic_write_file(report_path(dir, r.iteration), report_to_json(r).dump(2) + "\n");
}

inline IterationReport read_report(const std::filesystem::path& path) {
    try {
        return report_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw StateError("report " + path.string() + ": " + e.what());
    }
}

inline std::string format_4dp(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// Fixed column order; absent optionals are empty cells, not zeros.
inline std::string export_csv(const std::vector<IterationReport>& reports) {
    std::string out = "iteration,cons_rate,total_samples,accuracy,avg_difficulty,remaining\n";
    for (const auto& r : reports) {
        out += std::to_string(r.iteration);
        out += ',';
        out += format_4dp(r.cons_rate);
        out += ',';
        out += std::to_string(r.total_samples);
        out += ',';
        if (r.accuracy) out += format_4dp(*r.accuracy);
        out += ',';
        if (r.avg_difficulty) out += format_4dp(*r.avg_difficulty);
        out += ',';
        out += std::to_string(r.remaining);
        out += '\n';
    }
    return out;
}

}  // namespace ladder
