#pragma once
// Group-level aggregation: incidence/intensity/group index with IPW weights,
// subgroup tables with suppression, quartile-transition matrices, and
// binscatter data.

#include "retrain/csv.hpp"
#include "retrain/index.hpp"
#include "retrain/stats.hpp"
#include "retrain/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace retrain {

// ---------------------------------------------------------------------------
// Grouping keys
// ---------------------------------------------------------------------------

using GroupKeyFn =
    std::function<std::optional<std::string>(const ParticipationRecord&)>;

// Named grouping registry. Unknown names throw. Age uses 1-year bins; RTI
// bins are tenths of the occupation's pre-program intensity.
inline GroupKeyFn grouping_key(const std::string& name,
                               const TaskIntensityBook* book = nullptr) {
    auto opt = [](const std::optional<std::string>& v) { return v; };
    if (name == "state") {
        return [](const ParticipationRecord& r) -> std::optional<std::string> {
            return r.state.empty() ? std::nullopt : std::optional<std::string>(r.state);
        };
    }
    if (name == "wdb") {
        return [](const ParticipationRecord& r) -> std::optional<std::string> {
            return r.wdb_id.empty() ? std::nullopt : std::optional<std::string>(r.wdb_id);
        };
    }
    if (name == "program_year") {
        return [](const ParticipationRecord& r) {
            return std::optional<std::string>(std::to_string(r.program_year));
        };
    }
    if (name == "funding_stream") {
        return [](const ParticipationRecord& r) {
            return std::optional<std::string>(to_string(r.funding_stream));
        };
    }
    if (name == "training_service") {
        return [](const ParticipationRecord& r) {
            return std::optional<std::string>(to_string(r.training_service));
        };
    }
    if (name == "received_training") {
        return [](const ParticipationRecord& r) {
            return std::optional<std::string>(r.received_training ? "true" : "false");
        };
    }
    if (name == "employment_status") {
        return [](const ParticipationRecord& r) {
            return std::optional<std::string>(to_string(r.employment_status));
        };
    }
    if (name == "race_ethnicity") {
        return [opt](const ParticipationRecord& r) { return opt(r.race_ethnicity); };
    }
    if (name == "sex") {
        return [opt](const ParticipationRecord& r) { return opt(r.sex); };
    }
    if (name == "education_level") {
        return [opt](const ParticipationRecord& r) { return opt(r.education_level); };
    }
    if (name == "low_income") {
        return [](const ParticipationRecord& r) -> std::optional<std::string> {
            if (!r.low_income) {
                return std::nullopt;
            }
            return std::optional<std::string>(*r.low_income ? "true" : "false");
        };
    }
    if (name == "age") {
        return [](const ParticipationRecord& r) -> std::optional<std::string> {
            if (!r.age) {
                return std::nullopt;
            }
            return std::optional<std::string>(std::to_string(
                static_cast<long long>(std::floor(*r.age))));
        };
    }
    if (name == "pre_occupation") {
        return [opt](const ParticipationRecord& r) { return opt(r.pre_occ); };
    }
    if (name == "pre_subsector") {
        return [opt](const ParticipationRecord& r) { return opt(r.pre_subsector); };
    }
    if (name == "rti_cognitive_pre" || name == "rti_manual_pre") {
        if (book == nullptr) {
            throw std::invalid_argument("grouping_key: '" + name +
                                        "' requires a task intensity book");
        }
        const bool cognitive = name == "rti_cognitive_pre";
        return [book, cognitive](const ParticipationRecord& r)
                   -> std::optional<std::string> {
            if (!r.pre_occ) {
                return std::nullopt;
            }
            const auto it = book->occ_rti.find(*r.pre_occ);
            if (it == book->occ_rti.end()) {
                return std::nullopt;
            }
            const double v = cognitive ? it->second.cognitive : it->second.manual_task;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.1f", std::floor(v * 10.0) / 10.0);
            return std::optional<std::string>(buf);
        };
    }
    throw std::invalid_argument("grouping_key: unknown grouping '" + name + "'");
}

// ---------------------------------------------------------------------------
// Group summaries
// ---------------------------------------------------------------------------

struct GroupSummary {
    std::string grouping;
    std::string key;
    std::size_t n_records = 0;    // all records in the group
    std::size_t n_calculable = 0; // unweighted count with a score
    double weighted_n = 0.0;      // sum of weights over calculable records
    double pct_with_index = 0.0;  // n_calculable / n_records
    std::optional<double> incidence;
    std::optional<double> intensity; // undefined when no positive outcomes
    std::optional<double> group_index;
    std::optional<double> mean_index;
    std::optional<double> mean_wage_component;
    std::optional<double> mean_cognitive_component;
    std::optional<double> mean_manual_component;
    bool suppressed = false;
};

// Incidence/intensity/product per group. A positive outcome is strictly
// i_n > 0. Groups below min_group_size calculable records are emitted with
// the suppressed flag and their statistics withheld.
inline std::vector<GroupSummary> group_index(
    std::span<const ParticipationRecord> records, std::span<const IndexScore> scores,
    std::span<const double> weights, const std::string& grouping,
    std::size_t min_group_size = 100, const TaskIntensityBook* book = nullptr) {
    if (records.size() != scores.size()) {
        throw std::invalid_argument("group_index: records/scores misaligned");
    }
    if (!weights.empty() && weights.size() != records.size()) {
        throw std::invalid_argument("group_index: weight length mismatch");
    }
    const GroupKeyFn key_fn = grouping_key(grouping, book);

    struct Accum {
        std::size_t n_records = 0;
        std::size_t n_calculable = 0;
        double w_total = 0.0;
        double w_positive = 0.0;
        double sum_positive_index = 0.0; // weighted
        double sum_index = 0.0;          // weighted, over calculable
        double sum_wage = 0.0;
        double sum_cognitive = 0.0;
        double sum_manual = 0.0;
    };
    std::map<std::string, Accum> groups;

    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto key = key_fn(records[i]);
        if (!key) {
            continue;
        }
        Accum& acc = groups[*key];
        ++acc.n_records;
        const IndexScore& s = scores[i];
        if (!s.calculable) {
            continue;
        }
        const double w = weights.empty() ? 1.0 : weights[i];
        if (!(w > 0.0)) {
            continue; // records without a usable weight carry no mass
        }
        ++acc.n_calculable;
        acc.w_total += w;
        acc.sum_index += w * s.i_n;
        acc.sum_wage += w * s.i_w;
        acc.sum_cognitive += w * s.i_c;
        acc.sum_manual += w * s.i_m;
        if (s.i_n > 0.0) {
            acc.w_positive += w;
            acc.sum_positive_index += w * s.i_n;
        }
    }

    std::vector<GroupSummary> out;
    out.reserve(groups.size());
    for (const auto& [key, acc] : groups) {
        GroupSummary g;
        g.grouping = grouping;
        g.key = key;
        g.n_records = acc.n_records;
        g.n_calculable = acc.n_calculable;
        g.weighted_n = acc.w_total;
        g.pct_with_index = acc.n_records > 0
                               ? static_cast<double>(acc.n_calculable) /
                                     static_cast<double>(acc.n_records)
                               : 0.0;
        g.suppressed = acc.n_calculable < min_group_size;
        if (!g.suppressed && acc.w_total > 0.0) {
            const double incidence = acc.w_positive / acc.w_total;
            g.incidence = incidence;
            if (acc.w_positive > 0.0) {
                const double intensity = acc.sum_positive_index / acc.w_positive;
                g.intensity = intensity;
                g.group_index = incidence * intensity;
            } else {
                g.group_index = 0.0; // no positive outcomes
            }
            g.mean_index = acc.sum_index / acc.w_total;
            g.mean_wage_component = acc.sum_wage / acc.w_total;
            g.mean_cognitive_component = acc.sum_cognitive / acc.w_total;
            g.mean_manual_component = acc.sum_manual / acc.w_total;
        }
        out.push_back(std::move(g));
    }
    return out;
}

// Convenience: one table per requested grouping.
inline std::map<std::string, std::vector<GroupSummary>> subgroup_tables(
    std::span<const ParticipationRecord> records, std::span<const IndexScore> scores,
    std::span<const double> weights, std::span<const std::string> groupings,
    std::size_t min_group_size = 100, const TaskIntensityBook* book = nullptr) {
    std::map<std::string, std::vector<GroupSummary>> out;
    for (const auto& grouping : groupings) {
        out[grouping] =
            group_index(records, scores, weights, grouping, min_group_size, book);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Quartile transition matrices
// ---------------------------------------------------------------------------

struct TransitionMatrix {
    // Row percentages: cells[pre][post], each row sums to 100.
    std::array<std::array<double, 4>, 4> cells{};
    // Deviation from the 25% independence benchmark.
    std::array<std::array<double, 4>, 4> deviation{};
    std::array<double, 4> row_mass{}; // weighted share of each pre quartile
    bool degenerate_pre = false;
    bool degenerate_post = false;
    std::size_t n = 0;
};

// Quartile cutpoints are computed separately on the pre and post pools;
// cells are weighted shares within each pre-quartile row.
inline TransitionMatrix quartile_transition_matrix(std::span<const double> pre,
                                                   std::span<const double> post,
                                                   std::span<const double> weights = {}) {
    if (pre.size() != post.size()) {
        throw std::invalid_argument("quartile_transition_matrix: length mismatch");
    }
    if (pre.empty()) {
        throw std::invalid_argument("quartile_transition_matrix: empty input");
    }
    if (!weights.empty() && weights.size() != pre.size()) {
        throw std::invalid_argument("quartile_transition_matrix: weight length mismatch");
    }
    const auto q_pre = stats::quartiles({pre.begin(), pre.end()});
    const auto q_post = stats::quartiles({post.begin(), post.end()});

    TransitionMatrix m;
    m.n = pre.size();
    m.degenerate_pre = q_pre.degenerate;
    m.degenerate_post = q_post.degenerate;

    std::array<std::array<double, 4>, 4> mass{};
    std::array<double, 4> row_totals{};
    double total = 0.0;
    for (std::size_t i = 0; i < pre.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        const int qx = q_pre.assign(pre[i]);
        const int qy = q_post.assign(post[i]);
        mass[static_cast<std::size_t>(qx)][static_cast<std::size_t>(qy)] += w;
        row_totals[static_cast<std::size_t>(qx)] += w;
        total += w;
    }
    for (std::size_t x = 0; x < 4; ++x) {
        m.row_mass[x] = total > 0.0 ? row_totals[x] / total : 0.0;
        for (std::size_t y = 0; y < 4; ++y) {
            m.cells[x][y] =
                row_totals[x] > 0.0 ? 100.0 * mass[x][y] / row_totals[x] : 0.0;
            m.deviation[x][y] = m.cells[x][y] - 25.0;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Binscatter
// ---------------------------------------------------------------------------

struct Binscatter {
    struct Bin {
        double x_mean = 0.0;
        double y_mean = 0.0;
        std::size_t n = 0;
    };
    std::vector<Bin> bins;
    stats::OlsFit fit; // on the underlying unbinned data
};

// Equal-frequency bins (stable order for ties); the OLS overlay is fitted
// to the raw data.
inline Binscatter binscatter(std::span<const double> x, std::span<const double> y,
                             std::size_t n_bins) {
    if (n_bins < 2) {
        throw std::invalid_argument("binscatter: need at least 2 bins");
    }
    if (x.size() != y.size()) {
        throw std::invalid_argument("binscatter: length mismatch");
    }
    if (x.size() < n_bins) {
        throw std::invalid_argument("binscatter: fewer points than bins");
    }
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

    Binscatter out;
    out.fit = stats::ols(x, y);
    const std::size_t n = x.size();
    for (std::size_t b = 0; b < n_bins; ++b) {
        const std::size_t lo = b * n / n_bins;
        const std::size_t hi = (b + 1) * n / n_bins;
        std::vector<double> xs;
        std::vector<double> ys;
        xs.reserve(hi - lo);
        ys.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            xs.push_back(x[order[i]]);
            ys.push_back(y[order[i]]);
        }
        Binscatter::Bin bin;
        bin.n = xs.size();
        bin.x_mean = stats::mean(xs);
        bin.y_mean = stats::mean(ys);
        out.bins.push_back(bin);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Emission: CSV / JSON / LaTeX
// ---------------------------------------------------------------------------

namespace detail {

inline std::string opt_field(const std::optional<double>& v) {
    return v ? format_double(*v) : "";
}

} // namespace detail

inline void write_group_csv(const std::string& path,
                            std::span<const GroupSummary> rows) {
    CsvWriter w(path);
    w.row({"grouping", "group", "n_periods", "n_calculable", "weighted_n",
           "pct_with_index", "incidence", "intensity", "group_index", "mean_index",
           "mean_i_w", "mean_i_c", "mean_i_m", "suppressed"});
    for (const auto& g : rows) {
        w.row({g.grouping, g.key, std::to_string(g.n_records),
               std::to_string(g.n_calculable), format_double(g.weighted_n),
               format_double(g.pct_with_index), detail::opt_field(g.incidence),
               detail::opt_field(g.intensity), detail::opt_field(g.group_index),
               detail::opt_field(g.mean_index), detail::opt_field(g.mean_wage_component),
               detail::opt_field(g.mean_cognitive_component),
               detail::opt_field(g.mean_manual_component),
               g.suppressed ? "true" : "false"});
    }
}

inline nlohmann::json group_summaries_json(std::span<const GroupSummary> rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& g : rows) {
        nlohmann::json j;
        j["grouping"] = g.grouping;
        j["group"] = g.key;
        j["n_periods"] = g.n_records;
        j["n_calculable"] = g.n_calculable;
        j["weighted_n"] = g.weighted_n;
        j["pct_with_index"] = g.pct_with_index;
        j["suppressed"] = g.suppressed;
        auto put = [&](const char* name, const std::optional<double>& v) {
            if (v) {
                j[name] = *v;
            } else {
                j[name] = nullptr;
            }
        };
        put("incidence", g.incidence);
        put("intensity", g.intensity);
        put("group_index", g.group_index);
        put("mean_index", g.mean_index);
        put("mean_i_w", g.mean_wage_component);
        put("mean_i_c", g.mean_cognitive_component);
        put("mean_i_m", g.mean_manual_component);
        arr.push_back(std::move(j));
    }
    return arr;
}

// Rows in the six-statistic layout used by the subgroup tables.
inline void write_group_latex(const std::string& path,
                              std::span<const GroupSummary> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_group_latex: cannot write " + path);
    }
    auto fmt = [](const std::optional<double>& v) -> std::string {
        if (!v) {
            return "--";
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", *v);
        return buf;
    };
    out << "\\begin{tabular}{lrrrrrrr}\n\\toprule\n"
        << "Group & N & \\% w/ Index & Incidence & Intensity & $\\overline{I_n}$ & "
           "$\\overline{I_n^W}$ & $\\overline{I_n^C}$ / $\\overline{I_n^M}$ \\\\\n"
        << "\\midrule\n";
    for (const auto& g : rows) {
        char pct[32];
        std::snprintf(pct, sizeof(pct), "%.1f\\%%", 100.0 * g.pct_with_index);
        if (g.suppressed) {
            out << g.key << " & " << g.n_records << " & " << pct
                << " & \\multicolumn{5}{c}{suppressed (n < min group size)} \\\\\n";
            continue;
        }
        out << g.key << " & " << g.n_records << " & " << pct << " & "
            << fmt(g.incidence) << " & " << fmt(g.intensity) << " & "
            << fmt(g.mean_index) << " & " << fmt(g.mean_wage_component) << " & "
            << fmt(g.mean_cognitive_component) << " / " << fmt(g.mean_manual_component)
            << " \\\\\n";
    }
    out << "\\bottomrule\n\\end{tabular}\n";
}

inline void write_transition_csv(const std::string& path, const TransitionMatrix& m,
                                 const std::string& measure) {
    CsvWriter w(path);
    w.row({"measure", "pre_quartile", "post_quartile", "percent", "deviation_from_25"});
    for (std::size_t x = 0; x < 4; ++x) {
        for (std::size_t y = 0; y < 4; ++y) {
            w.row({measure, "Q" + std::to_string(x + 1), "Q" + std::to_string(y + 1),
                   format_double(m.cells[x][y]), format_double(m.deviation[x][y])});
        }
    }
}

inline void write_binscatter_csv(const std::string& path, const Binscatter& b,
                                 const std::string& measure) {
    CsvWriter w(path);
    w.row({"measure", "bin", "x_mean", "y_mean", "n", "ols_slope", "ols_intercept",
           "ols_r_squared"});
    for (std::size_t i = 0; i < b.bins.size(); ++i) {
        w.row({measure, std::to_string(i + 1), format_double(b.bins[i].x_mean),
               format_double(b.bins[i].y_mean), std::to_string(b.bins[i].n),
               format_double(b.fit.slope), format_double(b.fit.intercept),
               format_double(b.fit.r_squared)});
    }
}

} // namespace retrain
