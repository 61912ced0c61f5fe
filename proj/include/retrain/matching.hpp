#pragma once
// Propensity-score matching: logistic propensity with target-encoded
// high-cardinality covariates, greedy nearest-neighbor within exact strata
// and a caliper, weighted ATT/ATE with bootstrap CIs, and balance/overlap
// diagnostics.

#include "retrain/csv.hpp"
#include "retrain/parallel.hpp"
#include "retrain/reweight.hpp"
#include "retrain/rng.hpp"
#include "retrain/stats.hpp"
#include "retrain/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace retrain {

inline const std::vector<std::string>& default_match_covariates() {
    static const std::vector<std::string> names = {
        "pre_occupation", "pre_subsector", "wdb",           "state",
        "age",            "pre_mean_wage", "sex",           "race_ethnicity",
        "education_level", "low_income",   "employment_status",
    };
    return names;
}

// Covariates encoded by smoothed target means instead of one-hot columns.
inline const std::set<std::string>& default_target_encoded() {
    static const std::set<std::string> names = {"pre_occupation", "pre_subsector", "wdb",
                                                "state"};
    return names;
}

struct MatchSpec {
    std::string name = "treatment";
    std::function<bool(const ParticipationRecord&)> treatment;
    std::vector<std::string> strata = {"program_year"};
    double caliper = 0.1;
    std::vector<std::string> covariates = default_match_covariates();
    std::set<std::string> target_encoded = default_target_encoded();
    bool with_replacement = true;
    double l2 = 1e-6;
    double target_smoothing = 20.0;
    int bootstrap_replicates = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (!treatment) {
            throw std::invalid_argument("MatchSpec: treatment predicate required");
        }
        if (!(caliper > 0.0)) {
            throw std::invalid_argument("MatchSpec: caliper must be positive");
        }
    }
};

struct PropensityFit {
    std::vector<double> propensity; // per record, clipped to (0,1)
    double auc = 0.0;
    stats::LogisticModel model;
    std::vector<char> treated;
};

inline PropensityFit fit_propensity(std::span<const ParticipationRecord> records,
                                    const MatchSpec& spec) {
    spec.validate();
    PropensityFit fit;
    fit.treated.resize(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        fit.treated[i] = spec.treatment(records[i]) ? 1 : 0;
    }
    auto features = feature_columns(records, spec.covariates);
    for (auto& f : features) {
        if (spec.target_encoded.count(f.name) > 0 &&
            f.kind == stats::FeatureKind::Categorical) {
            f.kind = stats::FeatureKind::TargetEncoded;
        }
    }
    const auto x = stats::encode(std::move(features), &fit.treated, spec.target_smoothing);
    fit.model = stats::fit_logistic(x, fit.treated, spec.l2);
    fit.propensity = stats::predict_proba(fit.model, x);
    for (double& p : fit.propensity) {
        p = std::clamp(p, kPropensityClip, 1.0 - kPropensityClip);
    }
    fit.auc = stats::auc(fit.propensity, fit.treated);
    return fit;
}

struct MatchedPair {
    std::size_t treated_index = 0; // indices into the record span
    std::size_t control_index = 0;
    double distance = 0.0;
};

struct MatchResult {
    std::vector<MatchedPair> pairs;
    std::vector<std::size_t> unmatched_treated;
    std::size_t n_treated = 0;
    std::size_t n_control = 0;
    double match_rate = 0.0;
    std::size_t duplicate_controls = 0; // pairs minus distinct controls used
};

namespace detail {

struct Unit {
    std::size_t index;
    double propensity;
};

// Greedy nearest-neighbor of `from` units against `to` units inside one
// stratum. `from` is processed in descending propensity; candidates are
// binary-searched in the sorted `to` propensities. Ties prefer the lower
// candidate, then the earlier record index.
inline void match_direction(std::vector<Unit> from, std::vector<Unit> to, double caliper,
                            bool with_replacement, std::vector<MatchedPair>& pairs,
                            std::vector<std::size_t>& unmatched) {
    if (to.empty()) {
        for (const auto& u : from) {
            unmatched.push_back(u.index);
        }
        return;
    }
    std::sort(from.begin(), from.end(), [](const Unit& a, const Unit& b) {
        if (a.propensity != b.propensity) {
            return a.propensity > b.propensity;
        }
        return a.index < b.index;
    });
    std::sort(to.begin(), to.end(), [](const Unit& a, const Unit& b) {
        if (a.propensity != b.propensity) {
            return a.propensity < b.propensity;
        }
        return a.index < b.index;
    });
    std::vector<char> used(to.size(), 0);

    for (const auto& u : from) {
        // Insertion point in sorted candidate propensities.
        const auto it = std::lower_bound(
            to.begin(), to.end(), u.propensity,
            [](const Unit& a, double p) { return a.propensity < p; });
        const std::ptrdiff_t pos = it - to.begin();

        std::ptrdiff_t best = -1;
        double best_dist = 0.0;
        auto consider = [&](std::ptrdiff_t j) {
            if (j < 0 || j >= static_cast<std::ptrdiff_t>(to.size())) {
                return;
            }
            if (!with_replacement && used[static_cast<std::size_t>(j)]) {
                return;
            }
            const double d = std::abs(to[static_cast<std::size_t>(j)].propensity -
                                      u.propensity);
            if (best < 0 || d < best_dist) {
                best = j;
                best_dist = d;
            }
        };
        if (with_replacement) {
            consider(pos - 1);
            consider(pos);
        } else {
            // Probe outward past used controls on both sides.
            for (std::ptrdiff_t j = pos - 1; j >= 0; --j) {
                if (!used[static_cast<std::size_t>(j)]) {
                    consider(j);
                    break;
                }
            }
            for (std::ptrdiff_t j = pos; j < static_cast<std::ptrdiff_t>(to.size()); ++j) {
                if (!used[static_cast<std::size_t>(j)]) {
                    consider(j);
                    break;
                }
            }
        }
        if (best >= 0 && best_dist <= caliper) {
            pairs.push_back({u.index, to[static_cast<std::size_t>(best)].index, best_dist});
            used[static_cast<std::size_t>(best)] = 1;
        } else {
            unmatched.push_back(u.index);
        }
    }
}

inline std::string strata_key(const ParticipationRecord& rec,
                              std::span<const std::string> strata) {
    std::string key;
    for (const auto& field : strata) {
        if (!key.empty()) {
            key += '|';
        }
        if (field == "program_year") {
            key += std::to_string(rec.program_year);
        } else if (field == "state") {
            key += rec.state;
        } else if (field == "wdb") {
            key += rec.wdb_id;
        } else if (field == "funding_stream") {
            key += to_string(rec.funding_stream);
        } else {
            throw std::invalid_argument("match: unsupported stratum field '" + field + "'");
        }
    }
    return key;
}

} // namespace detail

// Treated-to-control nearest-neighbor matching within exact strata.
inline MatchResult match(std::span<const ParticipationRecord> records,
                         std::span<const double> propensity, const MatchSpec& spec,
                         bool mirror = false) {
    spec.validate();
    if (records.size() != propensity.size()) {
        throw std::invalid_argument("match: propensity length mismatch");
    }
    MatchResult result;

    std::map<std::string, std::pair<std::vector<detail::Unit>, std::vector<detail::Unit>>>
        strata;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const bool is_treated = spec.treatment(records[i]);
        auto& bucket = strata[detail::strata_key(records[i], spec.strata)];
        const detail::Unit unit{i, propensity[i]};
        // In mirror mode the roles swap: controls seek nearest treated.
        const bool is_from = mirror ? !is_treated : is_treated;
        if (is_from) {
            bucket.first.push_back(unit);
        } else {
            bucket.second.push_back(unit);
        }
        if (is_treated) {
            ++result.n_treated;
        } else {
            ++result.n_control;
        }
    }

    for (auto& [key, bucket] : strata) {
        detail::match_direction(std::move(bucket.first), std::move(bucket.second),
                                spec.caliper, spec.with_replacement, result.pairs,
                                result.unmatched_treated);
    }
    std::sort(result.pairs.begin(), result.pairs.end(),
              [](const MatchedPair& a, const MatchedPair& b) {
                  return a.treated_index < b.treated_index;
              });
    std::sort(result.unmatched_treated.begin(), result.unmatched_treated.end());

    const std::size_t from_total = mirror ? result.n_control : result.n_treated;
    result.match_rate = from_total > 0
                            ? static_cast<double>(result.pairs.size()) /
                                  static_cast<double>(from_total)
                            : 0.0;
    std::set<std::size_t> distinct;
    for (const auto& p : result.pairs) {
        distinct.insert(p.control_index);
    }
    result.duplicate_controls = result.pairs.size() - distinct.size();
    return result;
}

// ---------------------------------------------------------------------------
// Effects
// ---------------------------------------------------------------------------

struct EffectEstimate {
    double estimate = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t n_pairs = 0;
};

struct Effects {
    EffectEstimate att;
    EffectEstimate ate;
    std::size_t n_pairs_mirror = 0;
    int bootstrap_replicates = 0;
    std::uint64_t seed = 0;
};

namespace detail {

// Weighted mean pair difference. For the ATT direction the "from" unit is
// treated and the difference is Y_t - Y_c; the mirror direction flips signs
// so the contribution is always treated-minus-control.
inline double weighted_pair_effect(std::span<const MatchedPair> pairs,
                                   std::span<const double> outcome,
                                   std::span<const double> weights, bool mirror) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& p : pairs) {
        const double w = weights.empty() ? 1.0 : weights[p.treated_index];
        const double diff = outcome[p.treated_index] - outcome[p.control_index];
        num += w * (mirror ? -diff : diff);
        den += w;
    }
    if (!(den > 0.0)) {
        throw std::runtime_error("effects: zero total weight over pairs");
    }
    return num / den;
}

inline double weight_total(std::span<const MatchedPair> pairs,
                           std::span<const double> weights) {
    double total = 0.0;
    for (const auto& p : pairs) {
        total += weights.empty() ? 1.0 : weights[p.treated_index];
    }
    return total;
}

} // namespace detail

// ATT over matched treated units; ATE combines the mirrored match (controls
// matched to nearest treated), weighting the two directions by their matched
// weighted sizes. Percentile bootstrap CIs resample pairs as units.
inline Effects effects(std::span<const ParticipationRecord> records,
                       std::span<const double> propensity,
                       std::span<const double> outcome, const MatchSpec& spec,
                       std::span<const double> weights = {}) {
    if (outcome.size() != records.size()) {
        throw std::invalid_argument("effects: outcome length mismatch");
    }
    const MatchResult att_match = match(records, propensity, spec, false);
    const MatchResult atc_match = match(records, propensity, spec, true);
    if (att_match.pairs.empty()) {
        throw std::runtime_error("effects: no matched pairs");
    }

    Effects out;
    out.bootstrap_replicates = spec.bootstrap_replicates;
    out.seed = spec.seed;
    out.att.n_pairs = att_match.pairs.size();
    out.ate.n_pairs = att_match.pairs.size();
    out.n_pairs_mirror = atc_match.pairs.size();

    out.att.estimate =
        detail::weighted_pair_effect(att_match.pairs, outcome, weights, false);

    const double s_att = detail::weight_total(att_match.pairs, weights);
    double atc = 0.0;
    double s_atc = 0.0;
    if (!atc_match.pairs.empty()) {
        atc = detail::weighted_pair_effect(atc_match.pairs, outcome, weights, true);
        s_atc = detail::weight_total(atc_match.pairs, weights);
    }
    out.ate.estimate = (s_att * out.att.estimate + s_atc * atc) / (s_att + s_atc);

    // Pair bootstrap, replicate streams derived from (seed, replicate).
    const int b_total = spec.bootstrap_replicates;
    std::vector<double> att_reps(static_cast<std::size_t>(b_total));
    std::vector<double> ate_reps(static_cast<std::size_t>(b_total));
    parallel_for(static_cast<std::size_t>(b_total), [&](std::size_t b) {
        Rng rng(derive_seed(spec.seed, 0x9000 + b));
        auto resample = [&](std::span<const MatchedPair> pairs, bool mirror,
                            double& effect, double& total_weight) {
            double num = 0.0;
            double den = 0.0;
            const std::size_t n = pairs.size();
            for (std::size_t k = 0; k < n; ++k) {
                const auto& p = pairs[rng.uniform_int(n)];
                const double w = weights.empty() ? 1.0 : weights[p.treated_index];
                const double diff = outcome[p.treated_index] - outcome[p.control_index];
                num += w * (mirror ? -diff : diff);
                den += w;
            }
            effect = den > 0.0 ? num / den : 0.0;
            total_weight = den;
        };
        double att_b = 0.0;
        double s_att_b = 0.0;
        resample(att_match.pairs, false, att_b, s_att_b);
        att_reps[b] = att_b;
        if (!atc_match.pairs.empty()) {
            double atc_b = 0.0;
            double s_atc_b = 0.0;
            resample(atc_match.pairs, true, atc_b, s_atc_b);
            ate_reps[b] = (s_att_b * att_b + s_atc_b * atc_b) / (s_att_b + s_atc_b);
        } else {
            ate_reps[b] = att_b;
        }
    });
    std::sort(att_reps.begin(), att_reps.end());
    std::sort(ate_reps.begin(), ate_reps.end());
    out.att.ci_low = stats::percentile_sorted(att_reps, 2.5);
    out.att.ci_high = stats::percentile_sorted(att_reps, 97.5);
    out.ate.ci_low = stats::percentile_sorted(ate_reps, 2.5);
    out.ate.ci_high = stats::percentile_sorted(ate_reps, 97.5);
    return out;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct LovePlotRow {
    std::string covariate;
    std::string level;
    std::optional<double> smd_before;
    std::optional<double> smd_after;
    bool flagged_after = false; // |SMD| >= 0.1 on the matched set
};

struct OverlapHistogram {
    // Propensity distribution per arm over fixed bins on [0, 1].
    std::vector<double> bin_edges;
    std::vector<std::size_t> treated_counts;
    std::vector<std::size_t> control_counts;
};

struct MatchDiagnostics {
    std::vector<LovePlotRow> love;
    OverlapHistogram overlap;
    double max_abs_smd_before = 0.0;
    double max_abs_smd_after = 0.0;
};

inline MatchDiagnostics match_diagnostics(std::span<const ParticipationRecord> records,
                                          std::span<const double> propensity,
                                          const MatchResult& result, const MatchSpec& spec,
                                          double threshold = 0.1, int bins = 20) {
    MatchDiagnostics diag;

    std::vector<char> treated(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        treated[i] = spec.treatment(records[i]) ? 1 : 0;
    }

    const auto levels = expand_covariate_levels(records, spec.covariates);
    for (const auto& lvl : levels) {
        std::vector<double> t_before, c_before;
        for (std::size_t i = 0; i < records.size(); ++i) {
            (treated[i] ? t_before : c_before).push_back(lvl.values[i]);
        }
        if (t_before.empty() || c_before.empty()) {
            continue;
        }
        // Matched set with control multiplicity.
        std::vector<double> t_after, c_after;
        for (const auto& p : result.pairs) {
            t_after.push_back(lvl.values[p.treated_index]);
            c_after.push_back(lvl.values[p.control_index]);
        }
        LovePlotRow row;
        row.covariate = lvl.covariate;
        row.level = lvl.level;
        row.smd_before = smd(t_before, c_before);
        if (!t_after.empty()) {
            row.smd_after = smd(t_after, c_after);
        }
        if (row.smd_before) {
            diag.max_abs_smd_before =
                std::max(diag.max_abs_smd_before, std::abs(*row.smd_before));
        }
        if (row.smd_after) {
            diag.max_abs_smd_after =
                std::max(diag.max_abs_smd_after, std::abs(*row.smd_after));
            row.flagged_after = std::abs(*row.smd_after) >= threshold;
        }
        diag.love.push_back(std::move(row));
    }

    diag.overlap.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) {
        diag.overlap.bin_edges[static_cast<std::size_t>(b)] =
            static_cast<double>(b) / static_cast<double>(bins);
    }
    diag.overlap.treated_counts.assign(static_cast<std::size_t>(bins), 0);
    diag.overlap.control_counts.assign(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto b = static_cast<std::size_t>(propensity[i] * bins);
        if (b >= static_cast<std::size_t>(bins)) {
            b = static_cast<std::size_t>(bins) - 1;
        }
        if (treated[i]) {
            ++diag.overlap.treated_counts[b];
        } else {
            ++diag.overlap.control_counts[b];
        }
    }
    return diag;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

inline void write_effects_csv(const std::string& path,
                              std::span<const std::pair<std::string, Effects>> rows) {
    CsvWriter w(path);
    w.row({"intervention", "n_pairs", "att", "att_ci_low", "att_ci_high", "ate",
           "ate_ci_low", "ate_ci_high"});
    for (const auto& [name, eff] : rows) {
        w.row({name, std::to_string(eff.att.n_pairs), format_double(eff.att.estimate),
               format_double(eff.att.ci_low), format_double(eff.att.ci_high),
               format_double(eff.ate.estimate), format_double(eff.ate.ci_low),
               format_double(eff.ate.ci_high)});
    }
}

inline void write_match_diagnostics_csv(
    const std::string& path,
    std::span<const std::tuple<std::string, MatchResult, double>> rows) {
    CsvWriter w(path);
    w.row({"intervention", "treated", "matched", "match_rate", "duplicate_controls",
           "auc"});
    for (const auto& [name, result, auc_value] : rows) {
        w.row({name, std::to_string(result.n_treated), std::to_string(result.pairs.size()),
               format_double(result.match_rate), std::to_string(result.duplicate_controls),
               format_double(auc_value)});
    }
}

inline void write_love_plot_csv(const std::string& path, const MatchDiagnostics& diag) {
    CsvWriter w(path);
    w.row({"covariate", "level", "smd_before", "smd_after", "flagged_after"});
    for (const auto& row : diag.love) {
        w.row({row.covariate, row.level,
               row.smd_before ? format_double(*row.smd_before) : "undefined",
               row.smd_after ? format_double(*row.smd_after) : "undefined",
               row.flagged_after ? "true" : "false"});
    }
}

inline void write_overlap_csv(const std::string& path, const OverlapHistogram& h) {
    CsvWriter w(path);
    w.row({"bin_lo", "bin_hi", "treated", "control"});
    for (std::size_t b = 0; b + 1 < h.bin_edges.size(); ++b) {
        w.row({format_double(h.bin_edges[b]), format_double(h.bin_edges[b + 1]),
               std::to_string(h.treated_counts[b]), std::to_string(h.control_counts[b])});
    }
}

} // namespace retrain
