#pragma once
// Index construction: IHS wage means, winsorized min-max normalization over
// pooled pre+post sets, per-record subcomponents, and the weighted composite
// in occupation-level and subsector-level variants.

#include "retrain/csv.hpp"
#include "retrain/parallel.hpp"
#include "retrain/stats.hpp"
#include "retrain/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace retrain {

enum class IndexVariant { Occupation, Subsector };

inline const char* to_string(IndexVariant v) {
    return v == IndexVariant::Occupation ? "occupation" : "subsector";
}

inline std::optional<IndexVariant> parse_variant(const std::string& s) {
    if (s == "occupation") return IndexVariant::Occupation;
    if (s == "subsector") return IndexVariant::Subsector;
    return std::nullopt;
}

// Mean of the present quarters passed through asinh; missing when no quarter
// is observed.
inline std::optional<double> ihs_mean_wage(std::span<const std::optional<double>> wages) {
    std::vector<double> present;
    present.reserve(wages.size());
    for (const auto& w : wages) {
        if (w) {
            present.push_back(*w);
        }
    }
    if (present.empty()) {
        return std::nullopt;
    }
    return std::asinh(stats::mean(present));
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct NormalizationContext {
    double winsor_lo_pct = 1.0;
    double winsor_hi_pct = 99.0;
    double lo_cut = 0.0; // winsor clamp values
    double hi_cut = 0.0;
    double min = 0.0; // min/max of the clamped pool
    double max = 0.0;
    bool degenerate = false; // constant pool; everything normalizes to 0.5
    std::size_t n_pool = 0;

    double normalize(double v) const {
        if (degenerate) {
            return 0.5;
        }
        const double clamped = std::clamp(v, min, max);
        return (clamped - min) / (max - min);
    }
};

inline NormalizationContext build_normalization(std::vector<double> values,
                                                double winsor_lo_pct = 1.0,
                                                double winsor_hi_pct = 99.0) {
    if (values.empty()) {
        throw std::invalid_argument("build_normalization: empty pool");
    }
    if (winsor_lo_pct > winsor_hi_pct) {
        throw std::invalid_argument("build_normalization: winsor bounds inverted");
    }
    NormalizationContext ctx;
    ctx.winsor_lo_pct = winsor_lo_pct;
    ctx.winsor_hi_pct = winsor_hi_pct;
    ctx.n_pool = values.size();

    std::sort(values.begin(), values.end());
    ctx.lo_cut = stats::percentile_sorted(values, winsor_lo_pct);
    ctx.hi_cut = stats::percentile_sorted(values, winsor_hi_pct);
    // Min/max over the winsorized pool: clamping the sorted extremes is
    // equivalent to clamping every element first.
    ctx.min = std::max(values.front(), ctx.lo_cut);
    ctx.max = std::min(values.back(), ctx.hi_cut);
    ctx.degenerate = !(ctx.max > ctx.min);
    return ctx;
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

// Subcomponent weights; magnitudes are renormalized to sum to 1 and the
// (+, -, -) sign structure is fixed by construction.
struct IndexWeights {
    double wage = 0.5;
    double cognitive = 0.25;
    double manual_task = 0.25;

    IndexWeights normalized() const {
        const double total =
            std::abs(wage) + std::abs(cognitive) + std::abs(manual_task);
        if (!(total > 0.0)) {
            throw std::invalid_argument("IndexWeights: weights sum to zero");
        }
        return {std::abs(wage) / total, std::abs(cognitive) / total,
                std::abs(manual_task) / total};
    }

    double combine(double i_w, double i_c, double i_m) const {
        const IndexWeights w = normalized();
        return w.wage * i_w - w.cognitive * i_c - w.manual_task * i_m;
    }
};

struct IndexScore {
    std::string record_id;
    IndexVariant variant = IndexVariant::Occupation;
    double i_w = 0.0;
    double i_c = 0.0;
    double i_m = 0.0;
    double i_n = 0.0;
    bool calculable = false;
    std::string reason; // semicolon-joined missing-input reasons
};

struct ScoreContexts {
    NormalizationContext wage;
    NormalizationContext cognitive;
    NormalizationContext manual_task;
};

struct ScoreSet {
    IndexVariant variant = IndexVariant::Occupation;
    IndexWeights weights;
    ScoreContexts contexts;
    std::vector<IndexScore> scores; // aligned with the input records
};

// Wage subcomponent: normalized post-minus-pre IHS means.
inline std::optional<double> wage_subcomponent(std::optional<double> pre_ihs,
                                               std::optional<double> post_ihs,
                                               const NormalizationContext& ctx) {
    if (!pre_ihs || !post_ihs) {
        return std::nullopt;
    }
    return ctx.normalize(*post_ihs) - ctx.normalize(*pre_ihs);
}

inline std::optional<std::pair<double, double>> rti_subcomponents_occupation(
    const ParticipationRecord& rec, const TaskIntensityBook& book,
    const NormalizationContext& ctx_c, const NormalizationContext& ctx_m) {
    if (!rec.pre_occ || !rec.post_occ) {
        return std::nullopt;
    }
    const auto pre = book.occ_rti.find(*rec.pre_occ);
    const auto post = book.occ_rti.find(*rec.post_occ);
    if (pre == book.occ_rti.end() || post == book.occ_rti.end()) {
        return std::nullopt;
    }
    return std::make_pair(
        ctx_c.normalize(post->second.cognitive) - ctx_c.normalize(pre->second.cognitive),
        ctx_m.normalize(post->second.manual_task) - ctx_m.normalize(pre->second.manual_task));
}

inline std::optional<std::pair<double, double>> rti_subcomponents_subsector(
    const ParticipationRecord& rec, const TaskIntensityBook& book,
    const NormalizationContext& ctx_c, const NormalizationContext& ctx_m) {
    if (!rec.pre_subsector || !rec.post_subsector) {
        return std::nullopt;
    }
    const auto pre = book.subsector_rti.find(*rec.pre_subsector);
    const auto post = book.subsector_rti.find(*rec.post_subsector);
    if (pre == book.subsector_rti.end() || post == book.subsector_rti.end()) {
        return std::nullopt;
    }
    return std::make_pair(
        ctx_c.normalize(post->second.cognitive) - ctx_c.normalize(pre->second.cognitive),
        ctx_m.normalize(post->second.manual_task) - ctx_m.normalize(pre->second.manual_task));
}

inline IndexScore composite(const std::string& record_id, IndexVariant variant,
                            std::optional<double> i_w,
                            std::optional<std::pair<double, double>> rti,
                            const IndexWeights& weights, std::string reason) {
    IndexScore score;
    score.record_id = record_id;
    score.variant = variant;
    if (i_w && rti) {
        score.i_w = *i_w;
        score.i_c = rti->first;
        score.i_m = rti->second;
        score.i_n = weights.combine(score.i_w, score.i_c, score.i_m);
        score.calculable = true;
    } else {
        score.calculable = false;
        score.reason = std::move(reason);
    }
    return score;
}

// ---------------------------------------------------------------------------
// Dataset-level scoring
// ---------------------------------------------------------------------------

namespace detail {

inline void append_reason(std::string& reason, const char* what) {
    if (!reason.empty()) {
        reason += ';';
    }
    reason += what;
}

} // namespace detail

// Scores every record under one variant. Normalization contexts are built
// once from the pooled pre+post values of this dataset and then frozen.
inline ScoreSet score_dataset(std::span<const ParticipationRecord> records,
                              const TaskIntensityBook& book, IndexVariant variant,
                              const IndexWeights& weights = {}, double winsor_lo = 1.0,
                              double winsor_hi = 99.0) {
    ScoreSet out;
    out.variant = variant;
    out.weights = weights;

    const std::size_t n = records.size();
    std::vector<std::optional<double>> pre_ihs(n);
    std::vector<std::optional<double>> post_ihs(n);
    parallel_for(n, [&](std::size_t i) {
        const auto& rec = records[i];
        if (rec.deflate_error) {
            return; // wages unusable; reason recorded below
        }
        pre_ihs[i] = ihs_mean_wage(rec.pre_wages);
        post_ihs[i] = ihs_mean_wage(rec.post_wages);
    });

    std::vector<double> wage_pool;
    for (std::size_t i = 0; i < n; ++i) {
        if (pre_ihs[i]) {
            wage_pool.push_back(*pre_ihs[i]);
        }
        if (post_ihs[i]) {
            wage_pool.push_back(*post_ihs[i]);
        }
    }

    std::vector<double> cog_pool;
    std::vector<double> man_pool;
    auto pool_occ = [&](const std::optional<std::string>& code) {
        if (!code) {
            return;
        }
        const auto it = book.occ_rti.find(*code);
        if (it != book.occ_rti.end()) {
            cog_pool.push_back(it->second.cognitive);
            man_pool.push_back(it->second.manual_task);
        }
    };
    auto pool_sub = [&](const std::optional<std::string>& code) {
        if (!code) {
            return;
        }
        const auto it = book.subsector_rti.find(*code);
        if (it != book.subsector_rti.end()) {
            cog_pool.push_back(it->second.cognitive);
            man_pool.push_back(it->second.manual_task);
        }
    };
    for (const auto& rec : records) {
        if (variant == IndexVariant::Occupation) {
            pool_occ(rec.pre_occ);
            pool_occ(rec.post_occ);
        } else {
            pool_sub(rec.pre_subsector);
            pool_sub(rec.post_subsector);
        }
    }

    const bool have_wages = !wage_pool.empty();
    const bool have_rti = !cog_pool.empty();
    if (have_wages) {
        out.contexts.wage = build_normalization(std::move(wage_pool), winsor_lo, winsor_hi);
    }
    if (have_rti) {
        out.contexts.cognitive =
            build_normalization(std::move(cog_pool), winsor_lo, winsor_hi);
        out.contexts.manual_task =
            build_normalization(std::move(man_pool), winsor_lo, winsor_hi);
    }

    out.scores.resize(n);
    parallel_for(n, [&](std::size_t i) {
        const auto& rec = records[i];
        std::string reason;
        std::optional<double> i_w;
        if (rec.deflate_error) {
            detail::append_reason(reason, rec.deflate_error->c_str());
        } else {
            if (!pre_ihs[i]) {
                detail::append_reason(reason, "missing_pre_wages");
            }
            if (!post_ihs[i]) {
                detail::append_reason(reason, "missing_post_wages");
            }
            if (have_wages) {
                i_w = wage_subcomponent(pre_ihs[i], post_ihs[i], out.contexts.wage);
            }
        }

        std::optional<std::pair<double, double>> rti;
        if (variant == IndexVariant::Occupation) {
            if (!rec.pre_occ) {
                detail::append_reason(reason, "missing_pre_occupation");
            }
            if (!rec.post_occ) {
                detail::append_reason(reason, "missing_post_occupation");
            }
            if (have_rti) {
                rti = rti_subcomponents_occupation(rec, book, out.contexts.cognitive,
                                                   out.contexts.manual_task);
                if (!rti && rec.pre_occ && rec.post_occ) {
                    detail::append_reason(reason, "missing_rti_for_occupation");
                }
            }
        } else {
            if (!rec.pre_subsector) {
                detail::append_reason(reason, "missing_pre_subsector");
            }
            if (!rec.post_subsector) {
                detail::append_reason(reason, "missing_post_subsector");
            }
            if (have_rti) {
                rti = rti_subcomponents_subsector(rec, book, out.contexts.cognitive,
                                                  out.contexts.manual_task);
            }
        }
        out.scores[i] =
            composite(rec.record_id, variant, i_w, rti, weights, std::move(reason));
    });
    return out;
}

// ---------------------------------------------------------------------------
// Occupation-vs-subsector proxy validation
// ---------------------------------------------------------------------------

struct ProxyChannelFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t n = 0;
};

struct ProxyValidation {
    ProxyChannelFit cognitive;
    ProxyChannelFit manual_task;
};

// OLS of occupation-level deltas on subsector-level deltas over records
// calculable under both variants.
inline ProxyValidation validate_subsector_proxy(std::span<const IndexScore> scores_occ,
                                                std::span<const IndexScore> scores_sub) {
    if (scores_occ.size() != scores_sub.size()) {
        throw std::invalid_argument("validate_subsector_proxy: score sets misaligned");
    }
    std::vector<double> occ_c, sub_c, occ_m, sub_m;
    for (std::size_t i = 0; i < scores_occ.size(); ++i) {
        if (!scores_occ[i].calculable || !scores_sub[i].calculable) {
            continue;
        }
        occ_c.push_back(scores_occ[i].i_c);
        sub_c.push_back(scores_sub[i].i_c);
        occ_m.push_back(scores_occ[i].i_m);
        sub_m.push_back(scores_sub[i].i_m);
    }
    if (occ_c.size() < 2) {
        throw std::invalid_argument(
            "validate_subsector_proxy: need at least 2 records calculable in both variants");
    }
    ProxyValidation out;
    auto fill = [](const stats::OlsFit& fit) {
        return ProxyChannelFit{fit.slope, fit.intercept, fit.r_squared, fit.n};
    };
    out.cognitive = fill(stats::ols(sub_c, occ_c));
    out.manual_task = fill(stats::ols(sub_m, occ_m));
    return out;
}

// ---------------------------------------------------------------------------
// Score CSV round trip
// ---------------------------------------------------------------------------

inline void write_scores_csv(const std::string& path, const ScoreSet& set) {
    CsvWriter w(path);
    w.row({"record_id", "variant", "i_w", "i_c", "i_m", "i_n", "calculable", "reason"});
    for (const auto& s : set.scores) {
        if (s.calculable) {
            w.row({s.record_id, to_string(s.variant), format_double(s.i_w),
                   format_double(s.i_c), format_double(s.i_m), format_double(s.i_n),
                   "true", ""});
        } else {
            w.row({s.record_id, to_string(s.variant), "", "", "", "", "false", s.reason});
        }
    }
}

inline std::vector<IndexScore> read_scores_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    const int id = t.col("record_id");
    const int variant = t.col("variant");
    const int iw = t.col("i_w");
    const int ic = t.col("i_c");
    const int im = t.col("i_m");
    const int in_col = t.col("i_n");
    const int calc = t.col("calculable");
    const int reason = t.col("reason");
    if (id < 0 || variant < 0 || iw < 0 || ic < 0 || im < 0 || in_col < 0 || calc < 0 ||
        reason < 0) {
        throw std::runtime_error("read_scores_csv: unexpected header in " + path);
    }
    std::vector<IndexScore> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        IndexScore s;
        s.record_id = row[static_cast<std::size_t>(id)];
        const auto v = parse_variant(row[static_cast<std::size_t>(variant)]);
        if (!v) {
            throw std::runtime_error("read_scores_csv: bad variant value");
        }
        s.variant = *v;
        s.calculable = row[static_cast<std::size_t>(calc)] == "true";
        if (s.calculable) {
            s.i_w = std::stod(row[static_cast<std::size_t>(iw)]);
            s.i_c = std::stod(row[static_cast<std::size_t>(ic)]);
            s.i_m = std::stod(row[static_cast<std::size_t>(im)]);
            s.i_n = std::stod(row[static_cast<std::size_t>(in_col)]);
        } else {
            s.reason = row[static_cast<std::size_t>(reason)];
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace retrain
