#pragma once
// Calculability propensity estimation, stabilized IPW weights, and balance
// diagnostics (SMD, effective sample size).

#include "retrain/csv.hpp"
#include "retrain/index.hpp"
#include "retrain/stats.hpp"
#include "retrain/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace retrain {

// ---------------------------------------------------------------------------
// Feature extraction from participation records
// ---------------------------------------------------------------------------

// The paper's pre-outcome covariate list for the calculability model.
inline const std::vector<std::string>& default_ipw_covariates() {
    static const std::vector<std::string> names = {
        "sex",          "race_ethnicity", "education_level",
        "employment_status", "funding_stream", "program_year",
        "age",          "low_income",     "received_training",
    };
    return names;
}

// Builds one FeatureColumn per named record field. "age" and
// "pre_mean_wage" are numeric; everything else is categorical.
inline stats::FeatureColumn feature_column(std::span<const ParticipationRecord> records,
                                           const std::string& name) {
    stats::FeatureColumn f;
    f.name = name;
    auto cat = [&](auto&& get) {
        f.kind = stats::FeatureKind::Categorical;
        f.cats.reserve(records.size());
        for (const auto& r : records) {
            f.cats.push_back(get(r));
        }
    };
    auto opt_str = [](const std::optional<std::string>& v) { return v; };

    if (name == "age") {
        f.kind = stats::FeatureKind::Numeric;
        f.nums.reserve(records.size());
        for (const auto& r : records) {
            f.nums.push_back(r.age);
        }
    } else if (name == "pre_mean_wage") {
        f.kind = stats::FeatureKind::Numeric;
        f.nums.reserve(records.size());
        for (const auto& r : records) {
            std::vector<double> present;
            for (const auto& w : r.pre_wages) {
                if (w) {
                    present.push_back(*w);
                }
            }
            if (present.empty()) {
                f.nums.push_back(std::nullopt);
            } else {
                f.nums.push_back(stats::mean(present));
            }
        }
    } else if (name == "sex") {
        cat([&](const ParticipationRecord& r) { return opt_str(r.sex); });
    } else if (name == "race_ethnicity") {
        cat([&](const ParticipationRecord& r) { return opt_str(r.race_ethnicity); });
    } else if (name == "education_level") {
        cat([&](const ParticipationRecord& r) { return opt_str(r.education_level); });
    } else if (name == "employment_status") {
        cat([&](const ParticipationRecord& r) {
            return std::optional<std::string>(to_string(r.employment_status));
        });
    } else if (name == "funding_stream") {
        cat([&](const ParticipationRecord& r) {
            return std::optional<std::string>(to_string(r.funding_stream));
        });
    } else if (name == "program_year") {
        cat([&](const ParticipationRecord& r) {
            return std::optional<std::string>(std::to_string(r.program_year));
        });
    } else if (name == "low_income") {
        cat([&](const ParticipationRecord& r) -> std::optional<std::string> {
            if (!r.low_income) {
                return std::nullopt;
            }
            return std::optional<std::string>(*r.low_income ? "true" : "false");
        });
    } else if (name == "received_training") {
        cat([&](const ParticipationRecord& r) {
            return std::optional<std::string>(r.received_training ? "true" : "false");
        });
    } else if (name == "training_service") {
        cat([&](const ParticipationRecord& r) {
            return std::optional<std::string>(to_string(r.training_service));
        });
    } else if (name == "state") {
        cat([&](const ParticipationRecord& r) {
            return std::optional<std::string>(r.state);
        });
    } else if (name == "wdb") {
        cat([&](const ParticipationRecord& r) {
            return std::optional<std::string>(r.wdb_id);
        });
    } else if (name == "pre_occupation") {
        cat([&](const ParticipationRecord& r) { return opt_str(r.pre_occ); });
    } else if (name == "pre_subsector") {
        cat([&](const ParticipationRecord& r) { return opt_str(r.pre_subsector); });
    } else {
        throw std::invalid_argument("feature_column: unknown feature '" + name + "'");
    }
    return f;
}

inline std::vector<stats::FeatureColumn> feature_columns(
    std::span<const ParticipationRecord> records, std::span<const std::string> names) {
    std::vector<stats::FeatureColumn> out;
    out.reserve(names.size());
    for (const auto& name : names) {
        out.push_back(feature_column(records, name));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Propensity and weights
// ---------------------------------------------------------------------------

struct WeightedSample {
    std::vector<char> calculable;   // C_n per record
    std::vector<double> propensity; // p-hat per record, clipped to (0,1)
    std::vector<double> weight;     // stabilized weight; 0 for non-calculable
    double marginal_rate = 0.0;     // P(C=1)
    std::optional<double> weight_cap;

    double weight_mean = 0.0; // over calculable records
    double weight_min = 0.0;
    double weight_max = 0.0;
    double ess = 0.0;
};

inline constexpr double kPropensityClip = 1e-6;

// Logistic regression of the calculability flag on pre-outcome covariates.
inline std::vector<double> estimate_calculability(
    std::span<const ParticipationRecord> records, std::span<const char> calculable,
    std::span<const std::string> covariates = default_ipw_covariates(), double l2 = 1e-6) {
    if (records.size() != calculable.size()) {
        throw std::invalid_argument("estimate_calculability: flag length mismatch");
    }
    const auto x = stats::encode(feature_columns(records, covariates));
    const auto model = stats::fit_logistic(x, calculable, l2);
    auto p = stats::predict_proba(model, x);
    for (double& v : p) {
        v = std::clamp(v, kPropensityClip, 1.0 - kPropensityClip);
    }
    return p;
}

inline double ess(std::span<const double> weights) {
    if (weights.empty()) {
        throw std::invalid_argument("ess: empty weights");
    }
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const double w : weights) {
        if (!(w > 0.0)) {
            throw std::invalid_argument("ess: weights must be positive");
        }
        sum += w;
        sum_sq += w * w;
    }
    return sum * sum / sum_sq;
}

inline WeightedSample stabilized_weights(std::span<const double> propensities,
                                         std::span<const char> calculable,
                                         std::optional<double> weight_cap = std::nullopt) {
    if (propensities.size() != calculable.size()) {
        throw std::invalid_argument("stabilized_weights: length mismatch");
    }
    WeightedSample out;
    out.calculable.assign(calculable.begin(), calculable.end());
    out.propensity.assign(propensities.begin(), propensities.end());
    out.weight.assign(propensities.size(), 0.0);
    out.weight_cap = weight_cap;

    std::size_t n_calc = 0;
    for (const char c : calculable) {
        if (c) {
            ++n_calc;
        }
    }
    out.marginal_rate =
        propensities.empty() ? 0.0
                             : static_cast<double>(n_calc) /
                                   static_cast<double>(propensities.size());

    std::vector<double> calc_weights;
    calc_weights.reserve(n_calc);
    for (std::size_t i = 0; i < propensities.size(); ++i) {
        if (!calculable[i]) {
            continue;
        }
        if (!(propensities[i] > 0.0) || !(propensities[i] < 1.0)) {
            throw std::invalid_argument("stabilized_weights: propensities must be in (0,1)");
        }
        double w = out.marginal_rate / propensities[i];
        if (weight_cap && w > *weight_cap) {
            w = *weight_cap;
        }
        out.weight[i] = w;
        calc_weights.push_back(w);
    }
    if (!calc_weights.empty()) {
        out.weight_mean = stats::mean(calc_weights);
        out.weight_min = *std::min_element(calc_weights.begin(), calc_weights.end());
        out.weight_max = *std::max_element(calc_weights.begin(), calc_weights.end());
        out.ess = ess(calc_weights);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Standardized mean difference
// ---------------------------------------------------------------------------

// (mean_A - mean_B) / sqrt((var_A + var_B) / 2). Means may be weighted; the
// denominator always uses the unweighted group variances so before/after
// comparisons share one scale. nullopt when the pooled variance is zero.
inline std::optional<double> smd(std::span<const double> a, std::span<const double> b,
                                 std::span<const double> weights_a = {},
                                 std::span<const double> weights_b = {}) {
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("smd: both groups must be nonempty");
    }
    auto weighted_mean = [](std::span<const double> v, std::span<const double> w) {
        if (w.empty()) {
            return stats::mean(v);
        }
        if (w.size() != v.size()) {
            throw std::invalid_argument("smd: weight length mismatch");
        }
        double num = 0.0;
        double den = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            num += w[i] * v[i];
            den += w[i];
        }
        if (!(den > 0.0)) {
            throw std::invalid_argument("smd: weights sum to zero");
        }
        return num / den;
    };
    const double denom = std::sqrt((stats::variance(a) + stats::variance(b)) / 2.0);
    if (denom == 0.0) {
        return std::nullopt;
    }
    return (weighted_mean(a, weights_a) - weighted_mean(b, weights_b)) / denom;
}

// ---------------------------------------------------------------------------
// Balance report
// ---------------------------------------------------------------------------

// A covariate expanded into numeric indicator levels (one per category,
// 0/1), or carried through as a continuous column.
struct CovariateLevel {
    std::string covariate;
    std::string level; // empty for continuous covariates
    std::vector<double> values;
};

inline std::vector<CovariateLevel> expand_covariate_levels(
    std::span<const ParticipationRecord> records, std::span<const std::string> names) {
    std::vector<CovariateLevel> out;
    for (const auto& name : names) {
        const auto column = feature_column(records, name);
        if (column.kind == stats::FeatureKind::Numeric) {
            CovariateLevel lvl;
            lvl.covariate = name;
            // Median-imputed so every record participates in the SMD.
            std::vector<double> present;
            for (const auto& v : column.nums) {
                if (v) {
                    present.push_back(*v);
                }
            }
            if (present.empty()) {
                continue;
            }
            std::sort(present.begin(), present.end());
            const double median = stats::percentile_sorted(present, 50.0);
            lvl.values.reserve(column.nums.size());
            for (const auto& v : column.nums) {
                lvl.values.push_back(v ? *v : median);
            }
            out.push_back(std::move(lvl));
            continue;
        }
        std::set<std::string> cats;
        for (const auto& v : column.cats) {
            if (v) {
                cats.insert(*v);
            }
        }
        for (const auto& cat : cats) {
            CovariateLevel lvl;
            lvl.covariate = name;
            lvl.level = cat;
            lvl.values.reserve(column.cats.size());
            for (const auto& v : column.cats) {
                lvl.values.push_back(v && *v == cat ? 1.0 : 0.0);
            }
            out.push_back(std::move(lvl));
        }
    }
    return out;
}

struct BalanceRow {
    std::string covariate;
    std::string level;
    std::optional<double> smd_before;
    std::optional<double> smd_after;
};

struct BalanceReport {
    std::vector<BalanceRow> rows;
    std::size_t imbalanced_before = 0; // |SMD| >= threshold
    std::size_t imbalanced_after = 0;
    double threshold = 0.1;
    double ess = 0.0;
};

// SMD of each covariate level: calculable subsample vs the full restricted
// sample, before (unweighted) and after (stabilized weights) reweighting.
inline BalanceReport balance_report(std::span<const ParticipationRecord> records,
                                    const WeightedSample& sample,
                                    std::span<const std::string> covariates
                                    = default_ipw_covariates(),
                                    double threshold = 0.1) {
    if (records.size() != sample.calculable.size()) {
        throw std::invalid_argument("balance_report: record/sample length mismatch");
    }
    BalanceReport report;
    report.threshold = threshold;
    report.ess = sample.ess;

    const auto levels = expand_covariate_levels(records, covariates);
    for (const auto& lvl : levels) {
        std::vector<double> calc_values;
        std::vector<double> calc_weights;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (sample.calculable[i]) {
                calc_values.push_back(lvl.values[i]);
                calc_weights.push_back(sample.weight[i]);
            }
        }
        if (calc_values.empty()) {
            continue;
        }
        BalanceRow row;
        row.covariate = lvl.covariate;
        row.level = lvl.level;
        row.smd_before = smd(calc_values, lvl.values);
        row.smd_after = smd(calc_values, lvl.values, calc_weights, {});
        if (row.smd_before && std::abs(*row.smd_before) >= threshold) {
            ++report.imbalanced_before;
        }
        if (row.smd_after && std::abs(*row.smd_after) >= threshold) {
            ++report.imbalanced_after;
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline void write_weights_csv(const std::string& path,
                              std::span<const ParticipationRecord> records,
                              const WeightedSample& sample) {
    CsvWriter w(path);
    w.row({"record_id", "calculable", "p_hat", "w_hat"});
    for (std::size_t i = 0; i < records.size(); ++i) {
        w.row({records[i].record_id, sample.calculable[i] ? "true" : "false",
               format_double(sample.propensity[i]),
               sample.calculable[i] ? format_double(sample.weight[i]) : ""});
    }
}

inline void write_balance_csv(const std::string& path, const BalanceReport& report) {
    CsvWriter w(path);
    w.row({"covariate", "level", "smd_before", "smd_after"});
    for (const auto& row : report.rows) {
        w.row({row.covariate, row.level,
               row.smd_before ? format_double(*row.smd_before) : "undefined",
               row.smd_after ? format_double(*row.smd_after) : "undefined"});
    }
}

inline void write_weight_histogram_csv(const std::string& path,
                                       const WeightedSample& sample, int bins = 40) {
    std::vector<double> weights;
    for (std::size_t i = 0; i < sample.weight.size(); ++i) {
        if (sample.calculable[i]) {
            weights.push_back(sample.weight[i]);
        }
    }
    CsvWriter w(path);
    w.row({"bin_lo", "bin_hi", "count"});
    if (weights.empty()) {
        return;
    }
    const double lo = *std::min_element(weights.begin(), weights.end());
    const double hi = *std::max_element(weights.begin(), weights.end());
    const double width = hi > lo ? (hi - lo) / bins : 1.0;
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (const double v : weights) {
        auto b = static_cast<std::size_t>((v - lo) / width);
        if (b >= counts.size()) {
            b = counts.size() - 1;
        }
        ++counts[b];
    }
    for (std::size_t b = 0; b < counts.size(); ++b) {
        w.row({format_double(lo + width * static_cast<double>(b)),
               format_double(lo + width * static_cast<double>(b + 1)),
               std::to_string(counts[b])});
    }
}

} // namespace retrain
