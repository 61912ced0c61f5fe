#pragma once
// Monte Carlo weight-sensitivity analysis: Dirichlet-perturbed index
// recomputation, Spearman rank stability, and percentile-rank shifts per
// grouping. Per-simulation RNG streams derive from (seed, sim index) so
// parallel execution never changes results.

#include "retrain/aggregate.hpp"
#include "retrain/csv.hpp"
#include "retrain/index.hpp"
#include "retrain/parallel.hpp"
#include "retrain/rng.hpp"
#include "retrain/stats.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace retrain {

// |pct_rank_base - pct_rank_sim| per unit, pct_rank = (rank - 1) / (N - 1).
inline std::vector<double> percentile_shift(std::span<const double> baseline_ranks,
                                            std::span<const double> perturbed_ranks) {
    if (baseline_ranks.size() != perturbed_ranks.size()) {
        throw std::invalid_argument("percentile_shift: length mismatch");
    }
    const std::size_t n = baseline_ranks.size();
    if (n < 2) {
        throw std::invalid_argument("percentile_shift: need at least 2 units");
    }
    std::vector<double> out(n);
    const double denom = static_cast<double>(n) - 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::abs((baseline_ranks[i] - 1.0) / denom -
                          (perturbed_ranks[i] - 1.0) / denom);
    }
    return out;
}

struct SensitivityConfig {
    int n_sims = 500;
    double sample_frac = 0.10;
    std::uint64_t seed = 0;
    IndexWeights baseline{};
    std::size_t min_group_size = 1; // sensitivity keeps small groups visible
};

struct GroupingSensitivity {
    std::string grouping;
    std::size_t n_groups = 0;
    std::optional<double> mean_rho;
    std::optional<double> min_rho;
    std::optional<double> median_shift;
    std::optional<double> max_shift;
};

struct SimulationDraw {
    int sim = 0;
    std::uint64_t seed = 0;
    std::array<double, 3> weights{};
};

struct SensitivityReport {
    std::vector<GroupingSensitivity> rows;
    std::vector<SimulationDraw> sims;
    std::uint64_t seed = 0;
    double sample_frac = 0.0;
    int n_sims = 0;
    std::size_t sample_size = 0;
};

// The core robustness loop. `records` and `scores` are aligned; only
// calculable scores participate. A 10% subsample (by default) is drawn once
// per run; each simulation draws w ~ Dirichlet(1,1,1), recomputes
// i = w1*i_w - w2*i_c - w3*i_m, aggregates per grouping with unweighted
// means, and compares group rankings against the baseline weights.
inline SensitivityReport run_sensitivity(std::span<const ParticipationRecord> records,
                                         std::span<const IndexScore> scores,
                                         std::span<const std::string> groupings,
                                         const SensitivityConfig& config,
                                         const TaskIntensityBook* book = nullptr) {
    if (records.size() != scores.size()) {
        throw std::invalid_argument("run_sensitivity: records/scores misaligned");
    }
    if (config.n_sims < 1) {
        throw std::invalid_argument("run_sensitivity: n_sims must be >= 1");
    }
    if (!(config.sample_frac > 0.0) || config.sample_frac > 1.0) {
        throw std::invalid_argument("run_sensitivity: sample_frac must be in (0, 1]");
    }

    SensitivityReport report;
    report.seed = config.seed;
    report.sample_frac = config.sample_frac;
    report.n_sims = config.n_sims;

    // Calculable subset, then one subsample for the whole run.
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i].calculable) {
            eligible.push_back(i);
        }
    }
    if (eligible.empty()) {
        throw std::invalid_argument("run_sensitivity: no calculable scores");
    }
    std::size_t k = static_cast<std::size_t>(
        config.sample_frac * static_cast<double>(eligible.size()));
    if (k == 0) {
        k = 1;
    }
    Rng sampler(derive_seed(config.seed, 0));
    const auto picks = sampler.sample_without_replacement(eligible.size(), k);
    std::vector<std::size_t> sample;
    sample.reserve(picks.size());
    for (const std::size_t p : picks) {
        sample.push_back(eligible[p]);
    }
    report.sample_size = sample.size();

    // Subcomponents of the sampled records.
    const std::size_t n = sample.size();
    std::vector<double> iw(n), ic(n), im(n);
    for (std::size_t j = 0; j < n; ++j) {
        const IndexScore& s = scores[sample[j]];
        iw[j] = s.i_w;
        ic[j] = s.i_c;
        im[j] = s.i_m;
    }

    const IndexWeights base = config.baseline.normalized();
    std::vector<double> baseline_index(n);
    for (std::size_t j = 0; j < n; ++j) {
        baseline_index[j] = base.combine(iw[j], ic[j], im[j]);
    }

    // Group structures per grouping, resolved once. "participation_period"
    // treats each sampled record as its own group.
    struct GroupingState {
        std::string name;
        std::vector<std::string> keys;                // sorted group keys
        std::vector<std::vector<std::size_t>> members; // sample-local indices
        std::vector<double> baseline_values;
        std::vector<double> baseline_ranks;
    };
    std::vector<GroupingState> states;
    for (const auto& grouping : groupings) {
        GroupingState st;
        st.name = grouping;
        std::map<std::string, std::vector<std::size_t>> buckets;
        if (grouping == "participation_period") {
            for (std::size_t j = 0; j < n; ++j) {
                buckets[scores[sample[j]].record_id].push_back(j);
            }
        } else {
            const GroupKeyFn key_fn = grouping_key(grouping, book);
            for (std::size_t j = 0; j < n; ++j) {
                const auto key = key_fn(records[sample[j]]);
                if (key) {
                    buckets[*key].push_back(j);
                }
            }
        }
        for (auto& [key, members] : buckets) {
            st.keys.push_back(key);
            st.members.push_back(std::move(members));
        }
        st.baseline_values.resize(st.keys.size());
        for (std::size_t g = 0; g < st.members.size(); ++g) {
            double sum = 0.0;
            for (const std::size_t j : st.members[g]) {
                sum += baseline_index[j];
            }
            st.baseline_values[g] = sum / static_cast<double>(st.members[g].size());
        }
        if (st.keys.size() >= 2) {
            st.baseline_ranks = stats::average_ranks(st.baseline_values);
        }
        states.push_back(std::move(st));
    }

    // Per-simulation results, computed independently and folded in order.
    struct SimResult {
        std::array<double, 3> weights{};
        std::uint64_t seed = 0;
        std::vector<std::optional<double>> rho;    // per grouping
        std::vector<std::vector<double>> shifts;   // per grouping, per group
    };
    std::vector<SimResult> results(static_cast<std::size_t>(config.n_sims));

    parallel_for(static_cast<std::size_t>(config.n_sims), [&](std::size_t s) {
        SimResult& res = results[s];
        res.seed = derive_seed(config.seed, s + 1);
        Rng rng(res.seed);
        const std::array<double, 3> alpha{1.0, 1.0, 1.0};
        const auto w = stats::dirichlet_sample(alpha, rng);
        res.weights = {w[0], w[1], w[2]};

        std::vector<double> sim_index(n);
        for (std::size_t j = 0; j < n; ++j) {
            sim_index[j] = w[0] * iw[j] - w[1] * ic[j] - w[2] * im[j];
        }

        res.rho.resize(states.size());
        res.shifts.resize(states.size());
        for (std::size_t gi = 0; gi < states.size(); ++gi) {
            const GroupingState& st = states[gi];
            if (st.keys.size() < 2) {
                res.rho[gi] = std::nullopt;
                continue;
            }
            std::vector<double> values(st.keys.size());
            for (std::size_t g = 0; g < st.members.size(); ++g) {
                double sum = 0.0;
                for (const std::size_t j : st.members[g]) {
                    sum += sim_index[j];
                }
                values[g] = sum / static_cast<double>(st.members[g].size());
            }
            res.rho[gi] = stats::spearman_rho(st.baseline_values, values);
            const auto sim_ranks = stats::average_ranks(values);
            res.shifts[gi] = percentile_shift(st.baseline_ranks, sim_ranks);
        }
    });

    // Fold.
    for (int s = 0; s < config.n_sims; ++s) {
        const SimResult& res = results[static_cast<std::size_t>(s)];
        report.sims.push_back({s, res.seed, res.weights});
    }
    for (std::size_t gi = 0; gi < states.size(); ++gi) {
        GroupingSensitivity row;
        row.grouping = states[gi].name;
        row.n_groups = states[gi].keys.size();
        if (row.n_groups >= 2) {
            std::vector<double> rhos;
            std::vector<double> all_shifts;
            for (const auto& res : results) {
                if (res.rho[gi]) {
                    rhos.push_back(*res.rho[gi]);
                }
                all_shifts.insert(all_shifts.end(), res.shifts[gi].begin(),
                                  res.shifts[gi].end());
            }
            if (!rhos.empty()) {
                row.mean_rho = stats::mean(rhos);
                row.min_rho = *std::min_element(rhos.begin(), rhos.end());
            }
            if (!all_shifts.empty()) {
                row.median_shift = stats::percentile(all_shifts, 50.0);
                row.max_shift = *std::max_element(all_shifts.begin(), all_shifts.end());
            }
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

inline void write_sensitivity_csv(const std::string& path,
                                  const SensitivityReport& report) {
    CsvWriter w(path);
    w.row({"grouping", "n_groups", "mean_rho", "min_rho", "median_shift", "max_shift"});
    auto opt = [](const std::optional<double>& v) {
        return v ? format_double(*v) : "undefined";
    };
    for (const auto& row : report.rows) {
        w.row({row.grouping, std::to_string(row.n_groups), opt(row.mean_rho),
               opt(row.min_rho), opt(row.median_shift), opt(row.max_shift)});
    }
}

inline nlohmann::json sensitivity_replay_json(const SensitivityReport& report) {
    nlohmann::json j;
    j["seed"] = report.seed;
    j["sample_frac"] = report.sample_frac;
    j["n_sims"] = report.n_sims;
    j["sample_size"] = report.sample_size;
    nlohmann::json sims = nlohmann::json::array();
    for (const auto& s : report.sims) {
        nlohmann::json item;
        item["sim"] = s.sim;
        item["seed"] = s.seed;
        item["weights"] = {s.weights[0], s.weights[1], s.weights[2]};
        sims.push_back(std::move(item));
    }
    j["simulations"] = std::move(sims);
    return j;
}

} // namespace retrain
