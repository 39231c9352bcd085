#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rac/label.hpp"
#include "rac/pipeline.hpp"

namespace rac::eval {

/// One scored item. An absent prediction is the Error outcome (parse or
/// provider failure) and is wrong for every gold label.
struct Prediction {
    std::string doc_id;
    std::optional<Label> predicted;
    Label gold = Label::Unclassified;

    friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct PredictionRun {
    std::string run_id;
    std::vector<Prediction> items;
    nlohmann::json config = nlohmann::json::object();

    /// Throws InvalidArgument on duplicate doc ids.
    void validate() const;
};

/// Throws InvalidArgument when a trace has no gold label.
PredictionRun run_from_traces(std::string run_id, const std::vector<pipeline::PredictionTrace>& traces,
                              nlohmann::json config = nlohmann::json::object());

/// JSONL of {"doc_id", "pred", "gold"}; "pred" is "Error" for failed items.
void write_run(const std::filesystem::path& path, const PredictionRun& run);
PredictionRun read_run(const std::filesystem::path& path, std::string run_id = {});

inline constexpr std::size_t kErrorColumn = kNumLabels;

struct ConfusionMatrix {
    /// cells[gold][pred]; column kErrorColumn counts Error predictions.
    std::array<std::array<std::size_t, kNumLabels + 1>, kNumLabels> cells{};

    std::size_t n() const noexcept;
    std::size_t correct() const noexcept;
    void add(Label gold, const std::optional<Label>& predicted) noexcept;
    void remove(Label gold, const std::optional<Label>& predicted) noexcept;
};

ConfusionMatrix confusion_matrix(std::span<const Prediction> items);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

/// 0/0 anywhere counts as 0.
ClassMetrics class_metrics(const ConfusionMatrix& cm, Label label) noexcept;
double accuracy(const ConfusionMatrix& cm) noexcept;
/// Unweighted mean over all three classes, including ones absent from gold.
double macro_f1(const ConfusionMatrix& cm) noexcept;

double accuracy(const PredictionRun& run);
double macro_f1(const PredictionRun& run);

using ConfusionMetric = std::function<double(const ConfusionMatrix&)>;

struct MetricReport {
    std::size_t n = 0;
    double accuracy = 0.0;
    std::array<ClassMetrics, kNumLabels> per_class{};
    double macro_f1 = 0.0;
    ConfusionMatrix confusion;
    std::size_t errors = 0;
};

MetricReport evaluate(const PredictionRun& run);
nlohmann::json to_json(const MetricReport& report);

struct CiReport {
    std::string metric;
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.95;
    std::size_t resamples = 2000;
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const CiReport& ci);

/// Linear interpolation between order statistics at q * (n - 1).
double percentile(std::vector<double> values, double q);

struct BootstrapOptions {
    std::size_t resamples = 2000;
    double level = 0.95;
    std::uint64_t seed = 0;
    std::string metric_name = "macro_f1";
    /// Called with the item indices of every resample (for audits and tests).
    std::function<void(std::span<const std::size_t>)> on_resample;
};

/// Resamples n_c items with replacement within each gold class. The interval is
/// widened to contain the point estimate when the percentiles exclude it.
/// Throws MissingClass when a gold class has no items.
CiReport stratified_bootstrap_ci(const PredictionRun& run, const ConfusionMetric& metric,
                                 const BootstrapOptions& options = {});

enum class PermutationMode { Auto, Exact, MonteCarlo };

struct StatTestResult {
    std::string statistic = "macro_f1_difference";
    double observed = 0.0;
    double p_value = 1.0;
    std::size_t permutations = 0;
    bool exact = false;
    std::uint64_t seed = 0;
    std::size_t discordant = 0;
};

nlohmann::json to_json(const StatTestResult& result);

inline constexpr std::size_t kMaxExactDiscordant = 20;

struct PermutationOptions {
    std::size_t permutations = 10000;
    std::uint64_t seed = 0;
    PermutationMode mode = PermutationMode::Auto;
    std::string statistic_name = "macro_f1_difference";
};

/// Two-sided paired test of metric(A) - metric(B) under per-item swapping.
/// Exact over the discordant items when there are at most 20 of them (Auto),
/// otherwise Monte Carlo with p = (1 + c) / (1 + n). Throws UnpairedRuns.
StatTestResult paired_permutation_test(const PredictionRun& a, const PredictionRun& b, const ConfusionMetric& metric,
                                       const PermutationOptions& options = {});

/// "9.83E-08" below 1e-4, otherwise four decimals.
std::string format_p_value(double p);
std::string format_metric(double value);
std::string format_ci(double lower, double upper);

struct ComparisonRow {
    std::string model;
    MetricReport metrics;
    CiReport ci;
    /// One entry per baseline; empty for the row's own baseline column.
    std::vector<std::optional<StatTestResult>> tests;
};

struct ComparisonTable {
    std::vector<std::string> baselines;
    std::vector<ComparisonRow> rows;
};

struct ComparisonOptions {
    BootstrapOptions bootstrap;
    PermutationOptions permutation;
};

/// Rows follow `runs`; every run is tested against every baseline run id.
ComparisonTable compare_runs(const std::vector<PredictionRun>& runs, const std::vector<std::string>& baselines,
                             const ComparisonOptions& options = {});

/// Tab-separated: Model, Macro F1, 95% CI, then "p (vs <baseline>)" columns.
std::string format_table(const ComparisonTable& table);
nlohmann::json to_json(const ComparisonTable& table);

}  // namespace rac::eval
