#include "rac/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "rac/error.hpp"
#include "rac/rng.hpp"
#include "rac/text.hpp"

namespace rac::eval {

using nlohmann::json;

namespace {

std::size_t column_of(const std::optional<Label>& predicted) noexcept {
    return predicted ? index_of(*predicted) : kErrorColumn;
}

double ratio(double num, double den) noexcept { return den == 0.0 ? 0.0 : num / den; }

// Scores within this distance of |T_obs| count as at least as extreme.
constexpr double kTieTolerance = 1e-12;

}  // namespace

void PredictionRun::validate() const {
    std::set<std::string_view> seen;
    for (const auto& item : items) {
        if (!seen.insert(item.doc_id).second) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("run '{}' repeats doc_id '{}'", run_id, item.doc_id));
        }
    }
}

PredictionRun run_from_traces(std::string run_id, const std::vector<pipeline::PredictionTrace>& traces, json config) {
    PredictionRun run;
    run.run_id = std::move(run_id);
    run.config = std::move(config);
    run.items.reserve(traces.size());
    for (const auto& t : traces) {
        if (!t.gold) throw Error(ErrorCode::InvalidArgument, fmt::format("trace for '{}' has no gold label", t.doc_id));
        run.items.push_back({t.doc_id, t.predicted, *t.gold});
    }
    run.validate();
    return run;
}

void write_run(const std::filesystem::path& path, const PredictionRun& run) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::FileNotFound, fmt::format("cannot write {}", path.string()));
    for (const auto& item : run.items) {
        json j{{"doc_id", item.doc_id},
               {"pred", item.predicted ? std::string(to_string(*item.predicted)) : std::string("Error")},
               {"gold", to_string(item.gold)}};
        out << j.dump() << '\n';
    }
}

PredictionRun read_run(const std::filesystem::path& path, std::string run_id) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileNotFound, path.string());
    PredictionRun run;
    run.run_id = run_id.empty() ? path.stem().string() : std::move(run_id);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = json::parse(line);
            Prediction p;
            p.doc_id = j.at("doc_id").get<std::string>();
            const auto gold = label_from_name(j.at("gold").get<std::string>());
            if (!gold) throw Error(ErrorCode::UnknownLabel, j.at("gold").get<std::string>());
            p.gold = *gold;
            const auto pred = j.at("pred").get<std::string>();
            if (pred != "Error") {
                p.predicted = label_from_name(pred);
                if (!p.predicted) throw Error(ErrorCode::UnknownLabel, pred);
            }
            run.items.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::MalformedRecord, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        } catch (const Error& e) {
            throw Error(ErrorCode::MalformedRecord, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        }
    }
    run.validate();
    return run;
}

std::size_t ConfusionMatrix::n() const noexcept {
    std::size_t total = 0;
    for (const auto& row : cells) {
        for (auto c : row) total += c;
    }
    return total;
}

std::size_t ConfusionMatrix::correct() const noexcept {
    std::size_t total = 0;
    for (std::size_t i = 0; i < kNumLabels; ++i) total += cells[i][i];
    return total;
}

void ConfusionMatrix::add(Label gold, const std::optional<Label>& predicted) noexcept {
    ++cells[index_of(gold)][column_of(predicted)];
}

void ConfusionMatrix::remove(Label gold, const std::optional<Label>& predicted) noexcept {
    --cells[index_of(gold)][column_of(predicted)];
}

ConfusionMatrix confusion_matrix(std::span<const Prediction> items) {
    ConfusionMatrix cm;
    for (const auto& item : items) cm.add(item.gold, item.predicted);
    return cm;
}

ClassMetrics class_metrics(const ConfusionMatrix& cm, Label label) noexcept {
    const auto c = index_of(label);
    const double tp = static_cast<double>(cm.cells[c][c]);
    double predicted = 0.0;
    for (std::size_t g = 0; g < kNumLabels; ++g) predicted += static_cast<double>(cm.cells[g][c]);
    std::size_t support = 0;
    for (auto v : cm.cells[c]) support += v;
    ClassMetrics m;
    m.support = support;
    m.precision = ratio(tp, predicted);
    m.recall = ratio(tp, static_cast<double>(support));
    // 2PR/(P+R) reduces to 2tp/(predicted+support); 0/0 stays 0.
    m.f1 = ratio(2.0 * tp, predicted + static_cast<double>(support));
    return m;
}

double accuracy(const ConfusionMatrix& cm) noexcept {
    return ratio(static_cast<double>(cm.correct()), static_cast<double>(cm.n()));
}

// The per-class F1 values are summed as one reduced fraction so the mean is
// rounded once; [U,C,S,S] vs [U,C,S,C] then gives the double nearest 7/9.
double macro_f1(const ConfusionMatrix& cm) noexcept {
    __extension__ typedef unsigned __int128 u128;
    u128 num = 0, den = 1;
    bool exact = true;
    for (std::size_t c = 0; c < kNumLabels && exact; ++c) {
        std::uint64_t predicted = 0, support = 0;
        for (std::size_t g = 0; g < kNumLabels; ++g) predicted += cm.cells[g][c];
        for (auto v : cm.cells[c]) support += v;
        const std::uint64_t tp = cm.cells[c][c];
        if (tp == 0) continue;
        const u128 a = 2 * static_cast<u128>(tp), b = static_cast<u128>(predicted) + support;
        num = num * b + a * den;
        den *= b;
        auto g = num, r = den;
        while (r != 0) g = std::exchange(r, g % r);
        num /= g;
        den /= g;
        exact = den < (u128{1} << 53) / kNumLabels;
    }
    den *= kNumLabels;
    if (exact && num < (u128{1} << 53)) return static_cast<double>(num) / static_cast<double>(den);
    double sum = 0.0;
    for (Label l : kAllLabels) sum += class_metrics(cm, l).f1;
    return sum / static_cast<double>(kNumLabels);
}

double accuracy(const PredictionRun& run) { return accuracy(confusion_matrix(run.items)); }
double macro_f1(const PredictionRun& run) { return macro_f1(confusion_matrix(run.items)); }

MetricReport evaluate(const PredictionRun& run) {
    MetricReport r;
    r.confusion = confusion_matrix(run.items);
    r.n = r.confusion.n();
    r.accuracy = accuracy(r.confusion);
    for (Label l : kAllLabels) r.per_class[index_of(l)] = class_metrics(r.confusion, l);
    r.macro_f1 = macro_f1(r.confusion);
    for (const auto& row : r.confusion.cells) r.errors += row[kErrorColumn];
    return r;
}

json to_json(const MetricReport& r) {
    json per_class = json::object();
    for (Label l : kAllLabels) {
        const auto& m = r.per_class[index_of(l)];
        per_class[std::string(to_string(l))] = {
            {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
    }
    json confusion = json::object();
    for (Label g : kAllLabels) {
        json row = json::object();
        for (Label p : kAllLabels) row[std::string(to_string(p))] = r.confusion.cells[index_of(g)][index_of(p)];
        row["Error"] = r.confusion.cells[index_of(g)][kErrorColumn];
        confusion[std::string(to_string(g))] = row;
    }
    return json{{"n", r.n},           {"accuracy", r.accuracy},   {"macro_f1", r.macro_f1},
                {"errors", r.errors}, {"per_class", per_class}, {"confusion", confusion}};
}

json to_json(const CiReport& ci) {
    return json{{"metric", ci.metric},       {"point", ci.point}, {"lower", ci.lower}, {"upper", ci.upper},
                {"level", ci.level},         {"resamples", ci.resamples}, {"seed", ci.seed}};
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "percentile q must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

CiReport stratified_bootstrap_ci(const PredictionRun& run, const ConfusionMetric& metric,
                                 const BootstrapOptions& options) {
    if (options.resamples < 1) throw Error(ErrorCode::InvalidArgument, "resamples must be >= 1");
    if (!(options.level > 0.0 && options.level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must lie in (0, 1)");

    std::array<std::vector<std::size_t>, kNumLabels> strata;
    for (std::size_t i = 0; i < run.items.size(); ++i) strata[index_of(run.items[i].gold)].push_back(i);
    for (Label l : kAllLabels) {
        if (strata[index_of(l)].empty()) {
            throw Error(ErrorCode::MissingClass, fmt::format("gold class {} has no items in run '{}'", to_string(l), run.run_id));
        }
    }

    CiReport ci;
    ci.metric = options.metric_name;
    ci.level = options.level;
    ci.resamples = options.resamples;
    ci.seed = options.seed;
    ci.point = metric(confusion_matrix(run.items));

    SplitMix64 rng(options.seed);
    std::vector<double> stats;
    stats.reserve(options.resamples);
    std::vector<std::size_t> drawn;
    drawn.reserve(run.items.size());
    for (std::size_t b = 0; b < options.resamples; ++b) {
        drawn.clear();
        ConfusionMatrix cm;
        for (const auto& stratum : strata) {
            for (std::size_t k = 0; k < stratum.size(); ++k) {
                const auto idx = stratum[rng.below(stratum.size())];
                drawn.push_back(idx);
                cm.add(run.items[idx].gold, run.items[idx].predicted);
            }
        }
        if (options.on_resample) options.on_resample(drawn);
        stats.push_back(metric(cm));
    }
    const double tail = (1.0 - options.level) / 2.0;
    ci.lower = std::min(percentile(stats, tail), ci.point);
    ci.upper = std::max(percentile(stats, 1.0 - tail), ci.point);
    return ci;
}

json to_json(const StatTestResult& r) {
    return json{{"statistic", r.statistic},
                {"observed", r.observed},
                {"p_value", r.p_value},
                {"permutations", r.permutations},
                {"mode", r.exact ? "exact" : "monte-carlo"},
                {"seed", r.seed},
                {"discordant", r.discordant}};
}

StatTestResult paired_permutation_test(const PredictionRun& a, const PredictionRun& b, const ConfusionMetric& metric,
                                       const PermutationOptions& options) {
    if (a.items.size() != b.items.size()) {
        throw Error(ErrorCode::UnpairedRuns,
                    fmt::format("runs '{}' and '{}' have {} and {} items", a.run_id, b.run_id, a.items.size(), b.items.size()));
    }
    std::vector<std::size_t> discordant;
    for (std::size_t i = 0; i < a.items.size(); ++i) {
        const auto& x = a.items[i];
        const auto& y = b.items[i];
        if (x.doc_id != y.doc_id || x.gold != y.gold) {
            throw Error(ErrorCode::UnpairedRuns, fmt::format("item {} differs: '{}' vs '{}'", i, x.doc_id, y.doc_id));
        }
        if (x.predicted != y.predicted) discordant.push_back(i);
    }

    StatTestResult result;
    result.statistic = options.statistic_name;
    result.discordant = discordant.size();
    result.seed = options.seed;
    auto cm_a = confusion_matrix(a.items);
    auto cm_b = confusion_matrix(b.items);
    result.observed = metric(cm_a) - metric(cm_b);
    const double threshold = std::abs(result.observed) - kTieTolerance;

    const bool exact = options.mode == PermutationMode::Exact ||
                       (options.mode == PermutationMode::Auto && discordant.size() <= kMaxExactDiscordant);
    if (exact) {
        if (discordant.size() > 30) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("exact enumeration over {} discordant items is infeasible", discordant.size()));
        }
        // Gray-code walk: each step swaps exactly one item between the two runs.
        std::vector<bool> swapped(discordant.size(), false);
        const std::uint64_t total = std::uint64_t{1} << discordant.size();
        std::uint64_t extreme = 1;  // the identity pattern is the observed split
        for (std::uint64_t step = 1; step < total; ++step) {
            const auto bit = static_cast<std::size_t>(std::countr_zero(step));
            const auto i = discordant[bit];
            const auto& x = a.items[i];
            const auto& y = b.items[i];
            const auto& in_a = swapped[bit] ? y.predicted : x.predicted;
            const auto& in_b = swapped[bit] ? x.predicted : y.predicted;
            cm_a.remove(x.gold, in_a);
            cm_a.add(x.gold, in_b);
            cm_b.remove(x.gold, in_b);
            cm_b.add(x.gold, in_a);
            swapped[bit] = !swapped[bit];
            if (std::abs(metric(cm_a) - metric(cm_b)) >= threshold) ++extreme;
        }
        result.exact = true;
        result.permutations = static_cast<std::size_t>(total);
        result.p_value = static_cast<double>(extreme) / static_cast<double>(total);
        return result;
    }

    if (options.permutations < 1) throw Error(ErrorCode::InvalidArgument, "permutations must be >= 1");
    SplitMix64 rng(options.seed);
    std::size_t extreme = 0;
    const auto base_a = confusion_matrix(a.items);
    const auto base_b = confusion_matrix(b.items);
    for (std::size_t k = 0; k < options.permutations; ++k) {
        auto pa = base_a;
        auto pb = base_b;
        for (auto i : discordant) {
            if (!rng.coin()) continue;
            const auto& x = a.items[i];
            const auto& y = b.items[i];
            pa.remove(x.gold, x.predicted);
            pa.add(x.gold, y.predicted);
            pb.remove(x.gold, y.predicted);
            pb.add(x.gold, x.predicted);
        }
        if (std::abs(metric(pa) - metric(pb)) >= threshold) ++extreme;
    }
    result.exact = false;
    result.permutations = options.permutations;
    result.p_value = (1.0 + static_cast<double>(extreme)) / (1.0 + static_cast<double>(options.permutations));
    return result;
}

std::string format_p_value(double p) {
    if (p < 1e-4) return fmt::format("{:.2E}", p);
    return fmt::format("{:.4f}", p);
}

std::string format_metric(double value) { return fmt::format("{:.4f}", value); }

std::string format_ci(double lower, double upper) { return fmt::format("[{:.4f}, {:.4f}]", lower, upper); }

ComparisonTable compare_runs(const std::vector<PredictionRun>& runs, const std::vector<std::string>& baselines,
                             const ComparisonOptions& options) {
    ComparisonTable table;
    table.baselines = baselines;
    std::vector<const PredictionRun*> base_runs;
    for (const auto& id : baselines) {
        const auto it = std::find_if(runs.begin(), runs.end(), [&](const PredictionRun& r) { return r.run_id == id; });
        if (it == runs.end()) throw Error(ErrorCode::InvalidArgument, fmt::format("unknown baseline run '{}'", id));
        base_runs.push_back(&*it);
    }
    const ConfusionMetric metric = [](const ConfusionMatrix& cm) { return macro_f1(cm); };
    for (const auto& run : runs) {
        ComparisonRow row;
        row.model = run.run_id;
        row.metrics = evaluate(run);
        row.ci = stratified_bootstrap_ci(run, metric, options.bootstrap);
        for (const auto* base : base_runs) {
            if (base->run_id == run.run_id) {
                row.tests.emplace_back(std::nullopt);
            } else {
                row.tests.emplace_back(paired_permutation_test(run, *base, metric, options.permutation));
            }
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string format_table(const ComparisonTable& table) {
    std::string out = "Model\tMacro F1\t95% CI";
    for (const auto& b : table.baselines) out += fmt::format("\tp (vs {})", b);
    out += '\n';
    for (const auto& row : table.rows) {
        out += fmt::format("{}\t{}\t{}", row.model, format_metric(row.metrics.macro_f1), format_ci(row.ci.lower, row.ci.upper));
        for (const auto& t : row.tests) out += '\t' + (t ? format_p_value(t->p_value) : std::string("N/A"));
        out += '\n';
    }
    return out;
}

json to_json(const ComparisonTable& table) {
    json rows = json::array();
    for (const auto& row : table.rows) {
        json tests = json::object();
        for (std::size_t i = 0; i < table.baselines.size(); ++i) {
            tests[table.baselines[i]] = row.tests[i] ? to_json(*row.tests[i]) : json(nullptr);
        }
        rows.push_back({{"model", row.model}, {"metrics", to_json(row.metrics)}, {"ci", to_json(row.ci)}, {"tests", tests}});
    }
    return json{{"baselines", table.baselines}, {"rows", rows}};
}

}  // namespace rac::eval
