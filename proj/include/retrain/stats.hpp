#pragma once
// Shared numeric engine: logistic regression via IRLS, OLS, rank statistics,
// classifier metrics, percentile utilities, and Dirichlet draws.

#include "retrain/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace retrain::stats {

inline double mean(std::span<const double> v) {
    if (v.empty()) {
        throw std::invalid_argument("mean: empty input");
    }
    // A constant vector averages to exactly that constant; summation
    // rounding must not break zero-at-no-change identities downstream.
    bool constant = true;
    for (const double x : v) {
        if (x != v.front()) {
            constant = false;
            break;
        }
    }
    if (constant) {
        return v.front();
    }
    double s = 0.0;
    for (const double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

inline double variance(std::span<const double> v) {
    // Population variance.
    const double m = mean(v);
    double s = 0.0;
    for (const double x : v) {
        s += (x - m) * (x - m);
    }
    return s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Percentiles and quartiles (linear interpolation between order statistics)
// ---------------------------------------------------------------------------

inline double percentile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) {
        throw std::invalid_argument("percentile: empty input");
    }
    if (p < 0.0 || p > 100.0) {
        throw std::invalid_argument("percentile: p outside [0, 100]");
    }
    const std::size_t n = sorted.size();
    if (n == 1) {
        return sorted[0];
    }
    const double h = (static_cast<double>(n) - 1.0) * p / 100.0;
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= n) {
        return sorted[n - 1];
    }
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double percentile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    return percentile_sorted(values, p);
}

struct Quartiles {
    double q1 = 0.0;
    double q2 = 0.0;
    double q3 = 0.0;
    bool degenerate = false; // constant input; everything lands in Q1

    // Half-open [Q_k, Q_{k+1}) bins, top boundary closed.
    int assign(double v) const {
        if (degenerate) {
            return 0;
        }
        if (v < q1) return 0;
        if (v < q2) return 1;
        if (v < q3) return 2;
        return 3;
    }
};

inline Quartiles quartiles(std::vector<double> values) {
    if (values.empty()) {
        throw std::invalid_argument("quartiles: empty input");
    }
    std::sort(values.begin(), values.end());
    Quartiles q;
    q.q1 = percentile_sorted(values, 25.0);
    q.q2 = percentile_sorted(values, 50.0);
    q.q3 = percentile_sorted(values, 75.0);
    q.degenerate = values.front() == values.back();
    return q;
}

// ---------------------------------------------------------------------------
// Ranks, Spearman, AUC
// ---------------------------------------------------------------------------

// 1-based ranks; ties receive the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) {
            ++j;
        }
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    return ranks;
}

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("pearson: length mismatch");
    }
    if (a.size() < 2) {
        throw std::invalid_argument("pearson: need at least 2 points");
    }
    const double ma = mean(a);
    const double mb = mean(b);
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) {
        return std::nullopt;
    }
    return sab / std::sqrt(saa * sbb);
}

// Pearson correlation of average ranks. nullopt when either input is
// constant (rank variance zero).
inline std::optional<double> spearman_rho(std::span<const double> a,
                                          std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("spearman_rho: length mismatch");
    }
    if (a.size() < 2) {
        throw std::invalid_argument("spearman_rho: need at least 2 points");
    }
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    return pearson(ra, rb);
}

// Mann-Whitney formulation; ties contribute half credit.
inline double auc(std::span<const double> scores, std::span<const char> labels) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("auc: length mismatch");
    }
    std::size_t n_pos = 0;
    for (const char y : labels) {
        if (y) {
            ++n_pos;
        }
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw std::invalid_argument("auc: both classes required");
    }
    const auto ranks = average_ranks(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i]) {
            rank_sum_pos += ranks[i];
        }
    }
    const double u = rank_sum_pos -
                     static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// OLS
// ---------------------------------------------------------------------------

struct OlsFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t n = 0;
};

inline OlsFit ols(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("ols: length mismatch");
    }
    if (x.size() < 2) {
        throw std::invalid_argument("ols: need at least 2 points");
    }
    const double mx = mean(x);
    const double my = mean(y);
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) {
        throw std::invalid_argument("ols: degenerate regressor");
    }
    OlsFit fit;
    fit.n = x.size();
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    if (syy == 0.0) {
        fit.r_squared = 0.0;
    } else {
        double ss_res = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double resid = y[i] - (fit.intercept + fit.slope * x[i]);
            ss_res += resid * resid;
        }
        fit.r_squared = 1.0 - ss_res / syy;
        fit.r_squared = std::clamp(fit.r_squared, 0.0, 1.0);
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Classifier metrics
// ---------------------------------------------------------------------------

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct ClassifierReport {
    ClassMetrics negative; // class 0
    ClassMetrics positive; // class 1
    double accuracy = 0.0;
    ClassMetrics macro_avg;
    ClassMetrics weighted_avg;
    std::size_t n = 0;
};

inline ClassifierReport classifier_report(std::span<const double> probabilities,
                                          std::span<const char> labels,
                                          double threshold = 0.5) {
    if (probabilities.size() != labels.size()) {
        throw std::invalid_argument("classifier_report: length mismatch");
    }
    if (probabilities.empty()) {
        throw std::invalid_argument("classifier_report: empty input");
    }
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = probabilities[i] >= threshold;
        const bool truth = labels[i] != 0;
        if (pred && truth) ++tp;
        else if (pred && !truth) ++fp;
        else if (!pred && truth) ++fn;
        else ++tn;
    }
    auto safe_div = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
    auto metrics = [&](std::size_t tpos, std::size_t fpos, std::size_t fneg,
                       std::size_t support) {
        ClassMetrics m;
        m.precision = safe_div(static_cast<double>(tpos), static_cast<double>(tpos + fpos));
        m.recall = safe_div(static_cast<double>(tpos), static_cast<double>(tpos + fneg));
        m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
        m.support = support;
        return m;
    };

    ClassifierReport rep;
    rep.n = labels.size();
    rep.positive = metrics(tp, fp, fn, tp + fn);
    rep.negative = metrics(tn, fn, fp, tn + fp);
    rep.accuracy = static_cast<double>(tp + tn) / static_cast<double>(rep.n);

    rep.macro_avg.precision = (rep.negative.precision + rep.positive.precision) / 2.0;
    rep.macro_avg.recall = (rep.negative.recall + rep.positive.recall) / 2.0;
    rep.macro_avg.f1 = (rep.negative.f1 + rep.positive.f1) / 2.0;
    rep.macro_avg.support = rep.n;

    const double w0 = static_cast<double>(rep.negative.support) / static_cast<double>(rep.n);
    const double w1 = static_cast<double>(rep.positive.support) / static_cast<double>(rep.n);
    rep.weighted_avg.precision = w0 * rep.negative.precision + w1 * rep.positive.precision;
    rep.weighted_avg.recall = w0 * rep.negative.recall + w1 * rep.positive.recall;
    rep.weighted_avg.f1 = w0 * rep.negative.f1 + w1 * rep.positive.f1;
    rep.weighted_avg.support = rep.n;
    return rep;
}

// ---------------------------------------------------------------------------
// Dirichlet
// ---------------------------------------------------------------------------

// Normalized independent gamma draws.
inline std::vector<double> dirichlet_sample(std::span<const double> alpha, Rng& rng) {
    if (alpha.empty()) {
        throw std::invalid_argument("dirichlet_sample: empty alpha");
    }
    for (const double a : alpha) {
        if (!(a > 0.0)) {
            throw std::invalid_argument("dirichlet_sample: alpha components must be > 0");
        }
    }
    std::vector<double> draw(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        draw[i] = rng.gamma(alpha[i]);
        total += draw[i];
    }
    for (double& v : draw) {
        v /= total;
    }
    return draw;
}

// ---------------------------------------------------------------------------
// Feature encoding -> design matrix
// ---------------------------------------------------------------------------

enum class FeatureKind { Categorical, Numeric, TargetEncoded };

// A raw feature column prior to encoding. Categorical and target-encoded
// features use `cats`; numeric features use `nums`.
struct FeatureColumn {
    std::string name;
    FeatureKind kind = FeatureKind::Categorical;
    std::vector<std::optional<std::string>> cats;
    std::vector<std::optional<double>> nums;

    std::size_t size() const {
        return kind == FeatureKind::Numeric ? nums.size() : cats.size();
    }
};

struct ColumnEncoding {
    std::string feature;
    FeatureKind kind = FeatureKind::Categorical;
    std::string impute_method;

    // Categorical / target-encoded
    std::vector<std::string> categories; // sorted lexicographically
    std::string mode;

    // Numeric
    double median = 0.0;
    double center = 0.0;
    double scale = 1.0;
    bool degenerate = false;

    // Target encoding
    std::map<std::string, double> target_means;
    double global_mean = 0.0;
    double smoothing = 20.0;
};

struct DesignMatrix {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<double> cells; // row-major
    std::vector<std::string> col_names;
    std::vector<ColumnEncoding> encodings;
    std::map<std::string, std::string> imputation_log;

    double at(std::size_t r, std::size_t c) const { return cells[r * n_cols + c]; }
    double& at(std::size_t r, std::size_t c) { return cells[r * n_cols + c]; }
};

namespace detail {

inline std::string categorical_mode(const std::vector<std::optional<std::string>>& values) {
    std::map<std::string, std::size_t> counts;
    for (const auto& v : values) {
        if (v) {
            ++counts[*v];
        }
    }
    if (counts.empty()) {
        throw std::invalid_argument("encode: feature has no observed values");
    }
    // Most frequent; ties resolve to the lexicographically smallest (map order).
    std::string best;
    std::size_t best_count = 0;
    for (const auto& [cat, count] : counts) {
        if (count > best_count) {
            best = cat;
            best_count = count;
        }
    }
    return best;
}

inline double numeric_median(const std::vector<std::optional<double>>& values) {
    std::vector<double> present;
    for (const auto& v : values) {
        if (v) {
            present.push_back(*v);
        }
    }
    if (present.empty()) {
        throw std::invalid_argument("encode: feature has no observed values");
    }
    std::sort(present.begin(), present.end());
    return percentile_sorted(present, 50.0);
}

} // namespace detail

// Fit encodings on the given columns and build the design matrix.
// Column order is deterministic: features sorted lexicographically by name,
// one-hot columns sorted by category with a trailing "__other" column that
// absorbs unseen categories at predict time.
inline DesignMatrix encode(std::vector<FeatureColumn> features,
                           const std::vector<char>* target = nullptr,
                           double target_smoothing = 20.0) {
    if (features.empty()) {
        throw std::invalid_argument("encode: no features");
    }
    std::sort(features.begin(), features.end(),
              [](const FeatureColumn& a, const FeatureColumn& b) { return a.name < b.name; });
    const std::size_t n = features.front().size();
    for (const auto& f : features) {
        if (f.size() != n) {
            throw std::invalid_argument("encode: feature length mismatch");
        }
    }

    DesignMatrix m;
    m.n_rows = n;

    for (auto& f : features) {
        ColumnEncoding enc;
        enc.feature = f.name;
        enc.kind = f.kind;
        switch (f.kind) {
        case FeatureKind::Categorical: {
            enc.mode = detail::categorical_mode(f.cats);
            enc.impute_method = "mode";
            std::set<std::string> cats;
            for (const auto& v : f.cats) {
                cats.insert(v ? *v : enc.mode);
            }
            enc.categories.assign(cats.begin(), cats.end());
            for (const auto& c : enc.categories) {
                m.col_names.push_back(f.name + "=" + c);
            }
            m.col_names.push_back(f.name + "=__other");
            break;
        }
        case FeatureKind::Numeric: {
            enc.median = detail::numeric_median(f.nums);
            enc.impute_method = "median";
            std::vector<double> imputed(n);
            for (std::size_t i = 0; i < n; ++i) {
                imputed[i] = f.nums[i] ? *f.nums[i] : enc.median;
            }
            enc.center = mean(imputed);
            const double sd = std::sqrt(variance(imputed));
            enc.degenerate = sd == 0.0;
            enc.scale = enc.degenerate ? 1.0 : sd;
            m.col_names.push_back(f.name);
            break;
        }
        case FeatureKind::TargetEncoded: {
            if (target == nullptr || target->size() != n) {
                throw std::invalid_argument("encode: target required for target encoding");
            }
            enc.mode = detail::categorical_mode(f.cats);
            enc.impute_method = "mode";
            enc.smoothing = target_smoothing;
            double total = 0.0;
            std::map<std::string, std::pair<double, std::size_t>> sums;
            for (std::size_t i = 0; i < n; ++i) {
                const std::string& cat = f.cats[i] ? *f.cats[i] : enc.mode;
                auto& [sum, count] = sums[cat];
                sum += (*target)[i] ? 1.0 : 0.0;
                total += (*target)[i] ? 1.0 : 0.0;
                ++count;
            }
            enc.global_mean = total / static_cast<double>(n);
            for (const auto& [cat, sc] : sums) {
                const double smoothed =
                    (sc.first + enc.smoothing * enc.global_mean) /
                    (static_cast<double>(sc.second) + enc.smoothing);
                enc.target_means[cat] = smoothed;
            }
            m.col_names.push_back(f.name);
            break;
        }
        }
        m.imputation_log[f.name] = enc.impute_method;
        m.encodings.push_back(std::move(enc));
    }

    m.n_cols = m.col_names.size();
    m.cells.assign(m.n_rows * m.n_cols, 0.0);

    std::size_t col = 0;
    std::size_t feat_idx = 0;
    for (const auto& f : features) {
        const ColumnEncoding& enc = m.encodings[feat_idx++];
        switch (f.kind) {
        case FeatureKind::Categorical: {
            for (std::size_t i = 0; i < n; ++i) {
                const std::string& cat = f.cats[i] ? *f.cats[i] : enc.mode;
                const auto it =
                    std::lower_bound(enc.categories.begin(), enc.categories.end(), cat);
                std::size_t offset;
                if (it != enc.categories.end() && *it == cat) {
                    offset = static_cast<std::size_t>(it - enc.categories.begin());
                } else {
                    offset = enc.categories.size(); // __other
                }
                m.at(i, col + offset) = 1.0;
            }
            col += enc.categories.size() + 1;
            break;
        }
        case FeatureKind::Numeric: {
            for (std::size_t i = 0; i < n; ++i) {
                const double v = f.nums[i] ? *f.nums[i] : enc.median;
                m.at(i, col) = enc.degenerate ? 0.0 : (v - enc.center) / enc.scale;
            }
            ++col;
            break;
        }
        case FeatureKind::TargetEncoded: {
            for (std::size_t i = 0; i < n; ++i) {
                const std::string& cat = f.cats[i] ? *f.cats[i] : enc.mode;
                const auto it = enc.target_means.find(cat);
                m.at(i, col) = it != enc.target_means.end() ? it->second : enc.global_mean;
            }
            ++col;
            break;
        }
        }
    }
    return m;
}

// Re-encode new data with fitted encodings (unseen categories -> __other
// column / global target mean; missing values use the fitted imputations).
inline DesignMatrix apply_encoding(const DesignMatrix& fitted,
                                   std::vector<FeatureColumn> features) {
    std::sort(features.begin(), features.end(),
              [](const FeatureColumn& a, const FeatureColumn& b) { return a.name < b.name; });
    if (features.size() != fitted.encodings.size()) {
        throw std::invalid_argument("apply_encoding: feature set mismatch");
    }
    const std::size_t n = features.front().size();

    DesignMatrix m;
    m.n_rows = n;
    m.n_cols = fitted.n_cols;
    m.col_names = fitted.col_names;
    m.encodings = fitted.encodings;
    m.imputation_log = fitted.imputation_log;
    m.cells.assign(m.n_rows * m.n_cols, 0.0);

    std::size_t col = 0;
    for (std::size_t fi = 0; fi < features.size(); ++fi) {
        const auto& f = features[fi];
        const ColumnEncoding& enc = fitted.encodings[fi];
        if (f.name != enc.feature || f.kind != enc.kind) {
            throw std::invalid_argument("apply_encoding: feature mismatch at " + f.name);
        }
        if (f.size() != n) {
            throw std::invalid_argument("apply_encoding: feature length mismatch");
        }
        switch (f.kind) {
        case FeatureKind::Categorical: {
            for (std::size_t i = 0; i < n; ++i) {
                const std::string& cat = f.cats[i] ? *f.cats[i] : enc.mode;
                const auto it =
                    std::lower_bound(enc.categories.begin(), enc.categories.end(), cat);
                std::size_t offset;
                if (it != enc.categories.end() && *it == cat) {
                    offset = static_cast<std::size_t>(it - enc.categories.begin());
                } else {
                    offset = enc.categories.size();
                }
                m.at(i, col + offset) = 1.0;
            }
            col += enc.categories.size() + 1;
            break;
        }
        case FeatureKind::Numeric: {
            for (std::size_t i = 0; i < n; ++i) {
                const double v = f.nums[i] ? *f.nums[i] : enc.median;
                m.at(i, col) = enc.degenerate ? 0.0 : (v - enc.center) / enc.scale;
            }
            ++col;
            break;
        }
        case FeatureKind::TargetEncoded: {
            for (std::size_t i = 0; i < n; ++i) {
                const std::string& cat = f.cats[i] ? *f.cats[i] : enc.mode;
                const auto it = enc.target_means.find(cat);
                m.at(i, col) = it != enc.target_means.end() ? it->second : enc.global_mean;
            }
            ++col;
            break;
        }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Logistic regression (penalized MLE via IRLS)
// ---------------------------------------------------------------------------

struct LogisticModel {
    std::vector<double> coef; // aligned with col_names
    double intercept = 0.0;
    double l2 = 0.0;
    int iterations = 0;
    double grad_norm = 0.0;
    bool converged = false;
    std::vector<std::string> col_names;
};

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// L2-penalized Bernoulli log-likelihood; the intercept is not penalized.
inline double penalized_loglik(const DesignMatrix& x, std::span<const char> y,
                               std::span<const double> coef, double intercept, double l2) {
    double ll = 0.0;
    for (std::size_t i = 0; i < x.n_rows; ++i) {
        double z = intercept;
        for (std::size_t j = 0; j < x.n_cols; ++j) {
            z += x.at(i, j) * coef[j];
        }
        // log(p) for y=1, log(1-p) for y=0, written in a stable form.
        const double zy = y[i] ? z : -z;
        if (zy > 0.0) {
            ll += -std::log1p(std::exp(-zy));
        } else {
            ll += zy - std::log1p(std::exp(zy));
        }
    }
    double penalty = 0.0;
    for (const double b : coef) {
        penalty += b * b;
    }
    return ll - 0.5 * l2 * penalty;
}

namespace detail {

// Cholesky solve of the (p+1)x(p+1) SPD Newton system, column 0 = intercept.
inline bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t p) {
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * p + j];
            for (std::size_t k = 0; k < j; ++k) {
                s -= a[i * p + k] * a[j * p + k];
            }
            if (i == j) {
                if (s <= 0.0) {
                    return false;
                }
                a[i * p + i] = std::sqrt(s);
            } else {
                a[i * p + j] = s / a[j * p + j];
            }
        }
    }
    for (std::size_t i = 0; i < p; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) {
            s -= a[i * p + k] * b[k];
        }
        b[i] = s / a[i * p + i];
    }
    for (std::size_t ii = p; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < p; ++k) {
            s -= a[k * p + ii] * b[k];
        }
        b[ii] = s / a[ii * p + ii];
    }
    return true;
}

} // namespace detail

inline LogisticModel fit_logistic(const DesignMatrix& x, std::span<const char> y,
                                  double l2 = 1e-6, double tolerance = 1e-6,
                                  int max_iterations = 500) {
    if (x.n_rows != y.size()) {
        throw std::invalid_argument("fit_logistic: label length mismatch");
    }
    if (l2 < 0.0) {
        throw std::invalid_argument("fit_logistic: l2 must be >= 0");
    }
    std::size_t n_pos = 0;
    for (const char v : y) {
        if (v) {
            ++n_pos;
        }
    }
    if (n_pos == 0 || n_pos == y.size()) {
        throw std::invalid_argument("fit_logistic: need both classes present");
    }

    const std::size_t p = x.n_cols + 1; // column 0 = intercept
    std::vector<double> beta(p, 0.0);
    std::vector<double> grad(p);
    std::vector<double> hess(p * p);
    std::vector<double> prob(x.n_rows);

    auto eval = [&](const std::vector<double>& b) {
        return penalized_loglik(x, y, std::span<const double>(b.data() + 1, x.n_cols), b[0],
                                l2);
    };
    auto compute_grad = [&](const std::vector<double>& b) {
        for (std::size_t i = 0; i < x.n_rows; ++i) {
            double z = b[0];
            for (std::size_t j = 0; j < x.n_cols; ++j) {
                z += x.at(i, j) * b[j + 1];
            }
            prob[i] = sigmoid(z);
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < x.n_rows; ++i) {
            const double r = (y[i] ? 1.0 : 0.0) - prob[i];
            grad[0] += r;
            for (std::size_t j = 0; j < x.n_cols; ++j) {
                grad[j + 1] += x.at(i, j) * r;
            }
        }
        for (std::size_t j = 1; j < p; ++j) {
            grad[j] -= l2 * b[j];
        }
        double norm = 0.0;
        for (const double g : grad) {
            norm += g * g;
        }
        return std::sqrt(norm);
    };

    LogisticModel model;
    model.l2 = l2;
    model.col_names = x.col_names;

    double ll = eval(beta);
    double gnorm = compute_grad(beta);

    int iter = 0;
    for (; iter < max_iterations && gnorm >= tolerance; ++iter) {
        // Newton system: (X'WX + l2*I) delta = grad, intercept unpenalized.
        std::fill(hess.begin(), hess.end(), 0.0);
        for (std::size_t i = 0; i < x.n_rows; ++i) {
            const double w = prob[i] * (1.0 - prob[i]);
            hess[0] += w;
            for (std::size_t j = 0; j < x.n_cols; ++j) {
                const double xw = x.at(i, j) * w;
                hess[(j + 1) * p] += xw;
                for (std::size_t k = 0; k <= j; ++k) {
                    hess[(j + 1) * p + (k + 1)] += xw * x.at(i, k);
                }
            }
        }
        for (std::size_t j = 1; j < p; ++j) {
            hess[j * p + j] += l2;
        }
        // Small diagonal jitter keeps the factorization alive when W
        // collapses near perfectly separated solutions.
        for (std::size_t j = 0; j < p; ++j) {
            hess[j * p + j] += 1e-12;
        }
        std::vector<double> step = grad;
        std::vector<double> chol = hess;
        if (!detail::cholesky_solve(chol, step, p)) {
            throw std::runtime_error(
                "fit_logistic: singular Newton system; increase l2 regularization");
        }
        // Step halving keeps the penalized log-likelihood non-decreasing.
        double scale = 1.0;
        std::vector<double> candidate(p);
        bool improved = false;
        for (int h = 0; h < 40; ++h) {
            for (std::size_t j = 0; j < p; ++j) {
                candidate[j] = beta[j] + scale * step[j];
            }
            const double cand_ll = eval(candidate);
            if (cand_ll >= ll - 1e-14) {
                beta = candidate;
                ll = cand_ll;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if (!improved) {
            break;
        }
        gnorm = compute_grad(beta);

        if (l2 == 0.0) {
            for (std::size_t j = 1; j < p; ++j) {
                if (std::abs(beta[j]) > 30.0) {
                    throw std::runtime_error(
                        "fit_logistic: coefficients diverging (perfect separation?); "
                        "use l2 > 0");
                }
            }
        }
    }

    model.intercept = beta[0];
    model.coef.assign(beta.begin() + 1, beta.end());
    model.iterations = iter;
    model.grad_norm = gnorm;
    model.converged = gnorm < tolerance;
    if (!model.converged) {
        throw std::runtime_error("fit_logistic: did not converge after " +
                                 std::to_string(iter) + " iterations (grad norm " +
                                 std::to_string(gnorm) + ")");
    }
    return model;
}

inline std::vector<double> predict_proba(const LogisticModel& model, const DesignMatrix& x) {
    if (model.coef.size() != x.n_cols || model.col_names != x.col_names) {
        throw std::invalid_argument("predict_proba: design matrix column mismatch");
    }
    std::vector<double> out(x.n_rows);
    for (std::size_t i = 0; i < x.n_rows; ++i) {
        double z = model.intercept;
        for (std::size_t j = 0; j < x.n_cols; ++j) {
            z += x.at(i, j) * model.coef[j];
        }
        out[i] = sigmoid(z);
    }
    return out;
}

} // namespace retrain::stats
