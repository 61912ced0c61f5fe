#pragma once
// Synthetic participation datasets with planted ground truth: wage processes
// with an optional pre-entry dip, occupation/subsector universes, logit-linear
// missingness and treatment selection, counterfactual outcomes, and planted
// group effects. Also hosts the brute-force oracle used to validate the
// production index path; the oracle deliberately re-implements every formula
// without touching the production helpers.

#include "retrain/csv.hpp"
#include "retrain/parallel.hpp"
#include "retrain/rng.hpp"
#include "retrain/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace retrain::synth {

struct SynthConfig {
    std::size_t n = 10000;
    std::uint64_t seed = 1;

    // Universe
    int n_occupations = 40;
    int n_subsectors = 12;
    int n_states = 8;
    int wdbs_per_state = 3;
    int year_min = 2016;
    int year_max = 2023;

    // Restriction flags
    double frac_reportable = 0.02;
    double frac_missing_exit = 0.02;

    // Wage process (real 2010 dollars, log scale)
    double log_wage_mean = 8.8;
    double log_wage_sd = 0.6;
    double ashenfelter_dip = 0.25; // fractional dip in quarter -1, half in -2
    double mean_reversion = 0.3;
    double wage_growth = 0.03;
    double wage_quarter_noise = 0.05;
    double wage_growth_noise = 0.15;
    double cpi_annual_inflation = 0.02;

    // Missingness (calculability) logit
    double miss_intercept = 1.1;
    double miss_age = -0.7;        // on standardized age
    double miss_low_income = -0.9;
    double miss_training = 0.8;
    double frac_drop_pre_quarter = 0.15;  // calculable records missing 1 quarter
    double frac_drop_post_quarter = 0.15;

    // Treatment selection logit (treatment = received_training)
    double treat_intercept = -1.4;
    double treat_age = -0.5;
    double treat_low_income = 0.8;
    double treat_wage = -0.5; // on standardized log base wage

    // Planted outcome model (counterfactual index outcomes)
    double outcome_age = -0.3;
    double outcome_low_income = 0.3;
    double outcome_wage = -0.4;
    double outcome_noise = 0.4;
    double treatment_effect = 0.0; // constant additive delta on the outcome

    // Monotone wage-growth bump across funding streams (plants a known
    // incidence ordering when nonzero).
    double group_effect_scale = 0.0;

    // Occupation/industry transitions
    double p_same_occupation = 0.30;
    double p_same_subsector = 0.45;
    double p_duplicate_code_obs = 0.30; // extra same-code observation quarter
    double p_naics_detail_digit = 0.50; // emit 4-digit NAICS to exercise truncation

    void validate() const {
        if (n_occupations < 2 || n_subsectors < 2) {
            throw std::invalid_argument("SynthConfig: universe sizes must be >= 2");
        }
        if (year_min > year_max) {
            throw std::invalid_argument("SynthConfig: year range inverted");
        }
        for (const double p :
             {frac_reportable, frac_missing_exit, frac_drop_pre_quarter,
              frac_drop_post_quarter, p_same_occupation, p_same_subsector,
              p_duplicate_code_obs, p_naics_detail_digit}) {
            if (p < 0.0 || p > 1.0) {
                throw std::invalid_argument("SynthConfig: probabilities must be in [0,1]");
            }
        }
    }
};

struct RecordTruth {
    double p_calculable = 0.0;
    bool calculable = false;
    double p_treated = 0.0;
    bool treated = false;
    double y0 = 0.0; // untreated index outcome
    double y1 = 0.0; // treated index outcome (y0 + delta)
    bool reportable = false;
    bool missing_exit = false;
    double real_pre_mean = 0.0;  // planted real mean over emitted pre quarters
    double real_post_mean = 0.0;
};

struct GroundTruth {
    std::vector<RecordTruth> per_record; // aligned with records
    std::map<std::string, double> missingness_beta;
    std::map<std::string, double> treatment_beta;
    std::vector<std::string> funding_order; // ascending planted wage bump
    double treatment_effect = 0.0;
    std::size_t n_reportable = 0;
    std::size_t n_missing_exit = 0;

    double observed_outcome(std::size_t i) const {
        const RecordTruth& t = per_record[i];
        return t.treated ? t.y1 : t.y0;
    }
};

struct SynthOutput {
    std::vector<ParticipationRecord> records;
    std::set<std::string> soc_codes;
    TaskIntensityBook book;
    CpiTable cpi;
    GroundTruth truth;
};

namespace detail {

inline std::string soc_code(int k) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d-%04d", 11 + (k % 40), 1010 + k);
    return buf;
}

inline std::string subsector_code(int j) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%03d", 111 + j);
    return buf;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

} // namespace detail

inline SynthOutput generate(const SynthConfig& config) {
    config.validate();
    SynthOutput out;

    // ---- Universe (seed stream 1) ----
    Rng urng(derive_seed(config.seed, 1));
    std::vector<std::string> occupations;
    for (int k = 0; k < config.n_occupations; ++k) {
        occupations.push_back(detail::soc_code(k));
        out.soc_codes.insert(occupations.back());
        RtiPair rti;
        rti.cognitive = urng.normal();
        rti.manual_task = urng.normal();
        out.book.occ_rti[occupations.back()] = rti;
    }
    std::vector<std::string> subsectors;
    for (int j = 0; j < config.n_subsectors; ++j) {
        subsectors.push_back(detail::subsector_code(j));
    }
    // Membership: every occupation sits in at least one subsector; each
    // subsector gets a few extras.
    std::map<std::string, std::vector<std::string>> occ_subsectors;
    for (int k = 0; k < config.n_occupations; ++k) {
        const std::string& sub = subsectors[static_cast<std::size_t>(k) %
                                            subsectors.size()];
        out.book.emp_shares[{occupations[static_cast<std::size_t>(k)], sub}] =
            100.0 + 900.0 * urng.uniform01();
        occ_subsectors[occupations[static_cast<std::size_t>(k)]].push_back(sub);
    }
    for (int j = 0; j < config.n_subsectors; ++j) {
        const int extras = 2 + static_cast<int>(urng.uniform_int(3));
        for (int e = 0; e < extras; ++e) {
            const auto& occ =
                occupations[urng.uniform_int(occupations.size())];
            auto key = std::make_pair(occ, subsectors[static_cast<std::size_t>(j)]);
            if (out.book.emp_shares.count(key) == 0) {
                out.book.emp_shares[key] = 100.0 + 900.0 * urng.uniform01();
                occ_subsectors[occ].push_back(subsectors[static_cast<std::size_t>(j)]);
            }
        }
    }
    build_subsector_rti(out.book);

    // CPI path from (year_min - 2) through (year_max + 3), base 2010.
    out.cpi.base_year = 2010;
    for (int y = std::min(config.year_min - 2, 2010); y <= config.year_max + 3; ++y) {
        out.cpi.values[y] =
            100.0 * std::pow(1.0 + config.cpi_annual_inflation, y - 2010);
    }

    const std::vector<FundingStream> streams = {
        FundingStream::Adult, FundingStream::DislocatedWorker, FundingStream::Youth,
        FundingStream::WagnerPeyser, FundingStream::Other};
    // Monotone planted bump, ascending in this order.
    out.truth.funding_order = {"Adult", "DislocatedWorker", "Youth", "WagnerPeyser",
                               "Other"};
    const std::vector<TrainingService> services = {
        TrainingService::OccupationalSkills, TrainingService::OnTheJob,
        TrainingService::SkillUpgrading, TrainingService::Entrepreneurial,
        TrainingService::AdultEducationWithTraining, TrainingService::CustomizedTraining,
        TrainingService::RegisteredApprenticeship,
        TrainingService::YouthOccupationalSkills, TrainingService::OtherOccupational,
        TrainingService::RemedialTraining, TrainingService::PrerequisiteTraining,
        TrainingService::JobReadiness, TrainingService::EnglishLanguageWithTraining,
        TrainingService::IncumbentWorker};
    const std::vector<std::string> sexes = {"Female", "Male", "DidNotIdentify"};
    const std::vector<std::string> races = {"White", "Black", "Hispanic", "Asian",
                                            "Other"};
    const std::vector<std::string> education = {
        "NoEducation", "SecondaryDiploma", "SomeCollege", "Bachelors", "Advanced"};

    out.truth.missingness_beta = {{"intercept", config.miss_intercept},
                                  {"age_z", config.miss_age},
                                  {"low_income", config.miss_low_income},
                                  {"received_training", config.miss_training}};
    out.truth.treatment_beta = {{"intercept", config.treat_intercept},
                                {"age_z", config.treat_age},
                                {"low_income", config.treat_low_income},
                                {"log_wage_z", config.treat_wage}};
    out.truth.treatment_effect = config.treatment_effect;

    out.records.resize(config.n);
    out.truth.per_record.resize(config.n);

    parallel_for(config.n, [&](std::size_t i) {
        Rng rng(derive_seed(config.seed, 1000 + i));
        ParticipationRecord rec;
        RecordTruth truth;

        char idbuf[24];
        std::snprintf(idbuf, sizeof(idbuf), "R%08zu", i);
        rec.record_id = idbuf;

        rec.program_year = config.year_min +
                           static_cast<int>(rng.uniform_int(
                               static_cast<std::uint64_t>(config.year_max -
                                                          config.year_min + 1)));
        const int state_idx = static_cast<int>(rng.uniform_int(config.n_states));
        rec.state = "S" + std::to_string(10 + state_idx);
        rec.wdb_id = rec.state + "-W" +
                     std::to_string(1 + rng.uniform_int(config.wdbs_per_state));
        rec.funding_stream = streams[rng.uniform_int(streams.size())];
        rec.employment_status = static_cast<EmploymentStatus>(rng.uniform_int(4));

        const double age = 18.0 + static_cast<double>(rng.uniform_int(47));
        rec.age = age;
        const double age_z = (age - 40.0) / 12.0;
        rec.sex = sexes[rng.uniform_int(sexes.size())];
        rec.race_ethnicity = races[rng.uniform_int(races.size())];
        rec.education_level = education[rng.uniform_int(education.size())];
        const bool low_income = rng.bernoulli(0.35);
        rec.low_income = low_income;

        Date entry;
        entry.year = rec.program_year;
        entry.month = 1 + static_cast<int>(rng.uniform_int(12));
        entry.day = 1 + static_cast<int>(rng.uniform_int(28));
        rec.entry_date = entry;
        const int duration_quarters = 1 + static_cast<int>(rng.uniform_int(3));
        rec.exit_date = add_months(entry, 3 * duration_quarters);

        // Base log real wage; mildly age- and income-dependent so selection
        // models have observable signal.
        const double lw = config.log_wage_mean + 0.25 * age_z -
                          (low_income ? 0.5 : 0.0) +
                          config.log_wage_sd * rng.normal();
        const double lw_z = (lw - config.log_wage_mean) / config.log_wage_sd;

        // Treatment selection.
        truth.p_treated = detail::logistic(
            config.treat_intercept + config.treat_age * age_z +
            config.treat_low_income * (low_income ? 1.0 : 0.0) +
            config.treat_wage * lw_z);
        truth.treated = rng.bernoulli(truth.p_treated);
        rec.received_training = truth.treated;
        rec.training_service = truth.treated
                                   ? services[rng.uniform_int(services.size())]
                                   : TrainingService::None;

        // Counterfactual outcomes.
        truth.y0 = 0.5 * std::tanh(config.outcome_age * age_z +
                                   config.outcome_low_income * (low_income ? 1.0 : 0.0) +
                                   config.outcome_wage * lw_z +
                                   config.outcome_noise * rng.normal());
        truth.y1 = truth.y0 + config.treatment_effect;

        // Pre wages (real): dip in the final pre quarters.
        std::array<double, 3> pre_real{};
        for (std::size_t q = 0; q < 3; ++q) {
            double w = std::exp(lw + config.wage_quarter_noise * rng.normal());
            if (q == 2) {
                w *= 1.0 - config.ashenfelter_dip;
            } else if (q == 1) {
                w *= 1.0 - config.ashenfelter_dip / 2.0;
            }
            pre_real[q] = w;
        }
        // Post wages: growth plus mean reversion plus the planted funding
        // stream bump.
        const double stream_bump =
            config.group_effect_scale *
            0.05 * static_cast<double>(static_cast<int>(rec.funding_stream));
        const double growth = config.wage_growth + stream_bump +
                              config.mean_reversion * (config.log_wage_mean - lw) +
                              config.wage_growth_noise * rng.normal();
        std::array<double, 4> post_real{};
        for (std::size_t q = 0; q < 4; ++q) {
            post_real[q] = std::exp(lw + growth + config.wage_quarter_noise * rng.normal());
        }

        // Occupations and subsectors.
        const std::string& pre_occ = occupations[rng.uniform_int(occupations.size())];
        std::string post_occ = pre_occ;
        if (!rng.bernoulli(config.p_same_occupation)) {
            do {
                post_occ = occupations[rng.uniform_int(occupations.size())];
            } while (post_occ == pre_occ && occupations.size() > 1);
        }
        const auto& pre_subs = occ_subsectors.at(pre_occ);
        const std::string& pre_sub = pre_subs[rng.uniform_int(pre_subs.size())];
        std::string post_sub = pre_sub;
        if (!rng.bernoulli(config.p_same_subsector)) {
            const auto& post_subs = occ_subsectors.at(post_occ);
            post_sub = post_subs[rng.uniform_int(post_subs.size())];
        }

        // Calculability: C=0 knocks out the post period entirely.
        truth.p_calculable = detail::logistic(
            config.miss_intercept + config.miss_age * age_z +
            config.miss_low_income * (low_income ? 1.0 : 0.0) +
            config.miss_training * (truth.treated ? 1.0 : 0.0));
        truth.calculable = rng.bernoulli(truth.p_calculable);

        // Emit wages as nominal dollars for the quarter's calendar year.
        auto nominal = [&](double real, const Date& anchor, int quarter) {
            const int y = quarter_year(anchor, quarter);
            return real * out.cpi.values.at(y) / out.cpi.values.at(out.cpi.base_year);
        };
        std::vector<double> pre_present;
        for (std::size_t q = 0; q < 3; ++q) {
            rec.pre_wages[q] = nominal(pre_real[q], entry, kPreQuarters[q]);
            pre_present.push_back(pre_real[q]);
        }
        if (rng.bernoulli(config.frac_drop_pre_quarter)) {
            const std::size_t q = rng.uniform_int(3);
            rec.pre_wages[q] = std::nullopt;
            pre_present.erase(pre_present.begin() + static_cast<std::ptrdiff_t>(q));
        }
        std::vector<double> post_present;
        if (truth.calculable) {
            for (std::size_t q = 0; q < 4; ++q) {
                rec.post_wages[q] = nominal(post_real[q], *rec.exit_date, kPostQuarters[q]);
                post_present.push_back(post_real[q]);
            }
            if (rng.bernoulli(config.frac_drop_post_quarter)) {
                const std::size_t q = rng.uniform_int(4);
                rec.post_wages[q] = std::nullopt;
                post_present.erase(post_present.begin() +
                                   static_cast<std::ptrdiff_t>(q));
            }
        }
        double pre_sum = 0.0;
        for (const double w : pre_present) {
            pre_sum += w;
        }
        truth.real_pre_mean = pre_sum / static_cast<double>(pre_present.size());
        if (!post_present.empty()) {
            double post_sum = 0.0;
            for (const double w : post_present) {
                post_sum += w;
            }
            truth.real_post_mean = post_sum / static_cast<double>(post_present.size());
        }

        // Code observations. Pre codes report at quarter -1 (sometimes also
        // -3); post codes at +2 (sometimes also +4).
        auto naics_repr = [&](const std::string& sub) {
            if (rng.bernoulli(config.p_naics_detail_digit)) {
                return sub + std::to_string(rng.uniform_int(10));
            }
            return sub;
        };
        rec.pre_occ_candidates.push_back({pre_occ, -1});
        if (rng.bernoulli(config.p_duplicate_code_obs)) {
            rec.pre_occ_candidates.push_back({pre_occ, -3});
        }
        rec.pre_naics_candidates.push_back({naics_repr(pre_sub), -1});
        if (truth.calculable) {
            rec.post_occ_candidates.push_back({post_occ, 2});
            if (rng.bernoulli(config.p_duplicate_code_obs)) {
                rec.post_occ_candidates.push_back({post_occ, 4});
            }
            rec.post_naics_candidates.push_back({naics_repr(post_sub), 2});
        }

        // Restriction flags.
        truth.reportable = rng.bernoulli(config.frac_reportable);
        truth.missing_exit = !truth.reportable && rng.bernoulli(config.frac_missing_exit);
        rec.reportable_individual = truth.reportable;
        if (truth.missing_exit) {
            rec.exit_date.reset();
        }

        out.records[i] = std::move(rec);
        out.truth.per_record[i] = truth;
    });

    for (const auto& t : out.truth.per_record) {
        if (t.reportable) {
            ++out.truth.n_reportable;
        }
        if (t.missing_exit) {
            ++out.truth.n_missing_exit;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Oracle: planted effect averages
// ---------------------------------------------------------------------------

struct OracleEffects {
    std::optional<double> att;
    std::optional<double> ate;
};

inline OracleEffects oracle_effects(const GroundTruth& truth) {
    OracleEffects out;
    double treated_sum = 0.0;
    std::size_t treated_n = 0;
    double all_sum = 0.0;
    for (const auto& t : truth.per_record) {
        const double delta = t.y1 - t.y0;
        all_sum += delta;
        if (t.treated) {
            treated_sum += delta;
            ++treated_n;
        }
    }
    if (treated_n > 0) {
        out.att = treated_sum / static_cast<double>(treated_n);
    }
    if (!truth.per_record.empty()) {
        out.ate = all_sum / static_cast<double>(truth.per_record.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Oracle: brute-force index recomputation (independent code path)
// ---------------------------------------------------------------------------

struct OracleScore {
    double i_w = 0.0;
    double i_c = 0.0;
    double i_m = 0.0;
    double i_n = 0.0;
    bool calculable = false;
};

namespace oracle_detail {

// Everything below re-derives the formulas from first principles; none of the
// production normalization/statistics helpers are used.

inline double naive_percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) {
        return v[0];
    }
    const double h = (static_cast<double>(v.size()) - 1.0) * p / 100.0;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) {
        return v.back();
    }
    return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

struct NaiveRange {
    double lo = 0.0;
    double hi = 0.0;
    bool flat = true;
};

inline NaiveRange naive_range(const std::vector<double>& pool, double lo_pct,
                              double hi_pct) {
    NaiveRange r;
    if (pool.empty()) {
        return r;
    }
    const double cut_lo = naive_percentile(pool, lo_pct);
    const double cut_hi = naive_percentile(pool, hi_pct);
    double mn = cut_hi;
    double mx = cut_lo;
    for (double v : pool) {
        if (v < cut_lo) {
            v = cut_lo;
        }
        if (v > cut_hi) {
            v = cut_hi;
        }
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    r.lo = mn;
    r.hi = mx;
    r.flat = !(mx > mn);
    return r;
}

inline double naive_norm(double v, const NaiveRange& r) {
    if (r.flat) {
        return 0.5;
    }
    if (v < r.lo) {
        v = r.lo;
    }
    if (v > r.hi) {
        v = r.hi;
    }
    return (v - r.lo) / (r.hi - r.lo);
}

inline std::optional<double> naive_ihs_mean(std::span<const std::optional<double>> wages) {
    double sum = 0.0;
    std::size_t count = 0;
    bool all_same = true;
    double first = 0.0;
    for (const auto& w : wages) {
        if (!w) {
            continue;
        }
        if (count == 0) {
            first = *w;
        } else if (*w != first) {
            all_same = false;
        }
        sum += *w;
        ++count;
    }
    if (count == 0) {
        return std::nullopt;
    }
    return std::asinh(all_same ? first : sum / static_cast<double>(count));
}

} // namespace oracle_detail

// Direct, unoptimized recomputation of every score; the equivalence oracle
// for the production scorer. `use_subsector` selects the variant.
inline std::map<std::string, OracleScore> oracle_index(
    std::span<const ParticipationRecord> records, const TaskIntensityBook& book,
    bool use_subsector, double w_wage = 0.5, double w_cognitive = 0.25,
    double w_manual = 0.25, double winsor_lo = 1.0, double winsor_hi = 99.0) {
    const std::size_t n = records.size();
    std::vector<std::optional<double>> pre(n), post(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (records[i].deflate_error) {
            continue;
        }
        pre[i] = oracle_detail::naive_ihs_mean(records[i].pre_wages);
        post[i] = oracle_detail::naive_ihs_mean(records[i].post_wages);
    }
    std::vector<double> wage_pool;
    for (std::size_t i = 0; i < n; ++i) {
        if (pre[i]) {
            wage_pool.push_back(*pre[i]);
        }
        if (post[i]) {
            wage_pool.push_back(*post[i]);
        }
    }

    auto rti_of = [&](const std::optional<std::string>& code)
        -> std::optional<RtiPair> {
        if (!code) {
            return std::nullopt;
        }
        if (use_subsector) {
            const auto it = book.subsector_rti.find(*code);
            if (it == book.subsector_rti.end()) {
                return std::nullopt;
            }
            return it->second;
        }
        const auto it = book.occ_rti.find(*code);
        if (it == book.occ_rti.end()) {
            return std::nullopt;
        }
        return it->second;
    };

    std::vector<double> cog_pool, man_pool;
    for (const auto& rec : records) {
        for (const auto& side :
             {use_subsector ? rec.pre_subsector : rec.pre_occ,
              use_subsector ? rec.post_subsector : rec.post_occ}) {
            const auto rti = rti_of(side);
            if (rti) {
                cog_pool.push_back(rti->cognitive);
                man_pool.push_back(rti->manual_task);
            }
        }
    }

    const auto wage_range = oracle_detail::naive_range(wage_pool, winsor_lo, winsor_hi);
    const auto cog_range = oracle_detail::naive_range(cog_pool, winsor_lo, winsor_hi);
    const auto man_range = oracle_detail::naive_range(man_pool, winsor_lo, winsor_hi);

    const double w_total = std::abs(w_wage) + std::abs(w_cognitive) + std::abs(w_manual);

    std::map<std::string, OracleScore> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = records[i];
        OracleScore score;
        const auto pre_rti = rti_of(use_subsector ? rec.pre_subsector : rec.pre_occ);
        const auto post_rti = rti_of(use_subsector ? rec.post_subsector : rec.post_occ);
        if (pre[i] && post[i] && pre_rti && post_rti && !wage_pool.empty() &&
            !cog_pool.empty()) {
            score.calculable = true;
            score.i_w = oracle_detail::naive_norm(*post[i], wage_range) -
                        oracle_detail::naive_norm(*pre[i], wage_range);
            score.i_c = oracle_detail::naive_norm(post_rti->cognitive, cog_range) -
                        oracle_detail::naive_norm(pre_rti->cognitive, cog_range);
            score.i_m = oracle_detail::naive_norm(post_rti->manual_task, man_range) -
                        oracle_detail::naive_norm(pre_rti->manual_task, man_range);
            score.i_n = (std::abs(w_wage) / w_total) * score.i_w -
                        (std::abs(w_cognitive) / w_total) * score.i_c -
                        (std::abs(w_manual) / w_total) * score.i_m;
        }
        out[rec.record_id] = score;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Emission: the same CSV schema the ingest module consumes
// ---------------------------------------------------------------------------

inline void write_records_csv(const std::string& path,
                              std::span<const ParticipationRecord> records) {
    CsvWriter w(path);
    w.row({"record_id", "program_year", "state", "wdb_id", "funding_stream",
           "received_training", "training_service_type", "employment_status_at_entry",
           "reportable_individual", "entry_date", "exit_date", "age", "sex",
           "race_ethnicity", "education_level", "low_income", "pre_wage_m3",
           "pre_wage_m2", "pre_wage_m1", "post_wage_p1", "post_wage_p2", "post_wage_p3",
           "post_wage_p4", "pre_occ_m3", "pre_occ_m2", "pre_occ_m1", "post_occ_p1",
           "post_occ_p2", "post_occ_p3", "post_occ_p4", "pre_naics_m3", "pre_naics_m2",
           "pre_naics_m1", "post_naics_p1", "post_naics_p2", "post_naics_p3",
           "post_naics_p4"});

    for (const auto& rec : records) {
        auto wage = [](const std::optional<double>& v) {
            return v ? format_double(*v) : "";
        };
        auto code_at = [](const std::vector<CodeObservation>& candidates, int quarter) {
            for (const auto& c : candidates) {
                if (c.quarter == quarter) {
                    return c.code;
                }
            }
            return std::string();
        };
        w.row({rec.record_id,
               std::to_string(rec.program_year),
               rec.state,
               rec.wdb_id,
               to_string(rec.funding_stream),
               rec.received_training ? "true" : "false",
               to_string(rec.training_service),
               to_string(rec.employment_status),
               rec.reportable_individual ? "true" : "false",
               rec.entry_date ? format_date(*rec.entry_date) : "",
               rec.exit_date ? format_date(*rec.exit_date) : "",
               rec.age ? format_double(*rec.age) : "",
               rec.sex.value_or(""),
               rec.race_ethnicity.value_or(""),
               rec.education_level.value_or(""),
               rec.low_income ? (*rec.low_income ? "true" : "false") : "",
               wage(rec.pre_wages[0]),
               wage(rec.pre_wages[1]),
               wage(rec.pre_wages[2]),
               wage(rec.post_wages[0]),
               wage(rec.post_wages[1]),
               wage(rec.post_wages[2]),
               wage(rec.post_wages[3]),
               code_at(rec.pre_occ_candidates, -3),
               code_at(rec.pre_occ_candidates, -2),
               code_at(rec.pre_occ_candidates, -1),
               code_at(rec.post_occ_candidates, 1),
               code_at(rec.post_occ_candidates, 2),
               code_at(rec.post_occ_candidates, 3),
               code_at(rec.post_occ_candidates, 4),
               code_at(rec.pre_naics_candidates, -3),
               code_at(rec.pre_naics_candidates, -2),
               code_at(rec.pre_naics_candidates, -1),
               code_at(rec.post_naics_candidates, 1),
               code_at(rec.post_naics_candidates, 2),
               code_at(rec.post_naics_candidates, 3),
               code_at(rec.post_naics_candidates, 4)});
    }
}

inline void write_codebooks(const std::string& soc_path, const std::string& rti_path,
                            const std::string& employment_path,
                            const std::string& cpi_path, const SynthOutput& out) {
    {
        CsvWriter w(soc_path);
        w.row({"soc_code", "title"});
        for (const auto& code : out.soc_codes) {
            w.row({code, "Occupation " + code});
        }
    }
    {
        CsvWriter w(rti_path);
        w.row({"soc_code", "rti_cognitive", "rti_manual"});
        for (const auto& [code, rti] : out.book.occ_rti) {
            w.row({code, format_double(rti.cognitive), format_double(rti.manual_task)});
        }
    }
    {
        CsvWriter w(employment_path);
        w.row({"soc_code", "naics", "employment"});
        for (const auto& [key, share] : out.book.emp_shares) {
            // Shares here are already normalized; scale keeps them readable.
            w.row({key.first, key.second, format_double(share * 1000.0)});
        }
    }
    {
        CsvWriter w(cpi_path);
        w.row({"year", "cpi"});
        for (const auto& [year, value] : out.cpi.values) {
            w.row({std::to_string(year), format_double(value)});
        }
    }
}

inline nlohmann::json ground_truth_json(const SynthOutput& out) {
    nlohmann::json j;
    j["treatment_effect"] = out.truth.treatment_effect;
    j["n_reportable"] = out.truth.n_reportable;
    j["n_missing_exit"] = out.truth.n_missing_exit;
    j["missingness_beta"] = out.truth.missingness_beta;
    j["treatment_beta"] = out.truth.treatment_beta;
    j["funding_order"] = out.truth.funding_order;
    const auto oracle = oracle_effects(out.truth);
    if (oracle.att) {
        j["oracle_att"] = *oracle.att;
    }
    if (oracle.ate) {
        j["oracle_ate"] = *oracle.ate;
    }
    nlohmann::json records = nlohmann::json::object();
    for (std::size_t i = 0; i < out.records.size(); ++i) {
        const auto& t = out.truth.per_record[i];
        nlohmann::json r;
        r["p_calculable"] = t.p_calculable;
        r["calculable"] = t.calculable;
        r["p_treated"] = t.p_treated;
        r["treated"] = t.treated;
        r["y0"] = t.y0;
        r["y1"] = t.y1;
        r["reportable"] = t.reportable;
        r["missing_exit"] = t.missing_exit;
        r["real_pre_mean"] = t.real_pre_mean;
        r["real_post_mean"] = t.real_post_mean;
        records[out.records[i].record_id] = std::move(r);
    }
    j["records"] = std::move(records);
    return j;
}

} // namespace retrain::synth
