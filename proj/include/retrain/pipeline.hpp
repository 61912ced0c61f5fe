#pragma once
// Stage orchestration for the CLI: run configuration, stage functions that
// read/write versioned artifacts, and replayable run manifests keyed by
// content hashes.

#include "retrain/aggregate.hpp"
#include "retrain/csv.hpp"
#include "retrain/index.hpp"
#include "retrain/ingest.hpp"
#include "retrain/matching.hpp"
#include "retrain/reweight.hpp"
#include "retrain/sensitivity.hpp"
#include "retrain/synth.hpp"
#include "retrain/types.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace retrain {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct MatchStageConfig {
    std::string name;
    std::string treatment_field; // "received_training" or "training_service_type"
    std::string treatment_value; // e.g. "true", "RegisteredApprenticeship"
    std::vector<std::string> strata = {"program_year"};
    double caliper = 0.1;
    std::vector<std::string> covariates = default_match_covariates();
    int bootstrap_replicates = 1000;
    std::string outcome_variant = "occupation";
    bool use_ipw_weights = true;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::string format = "csv"; // csv | json | latex (extra table formats)
    int threads = 0;

    // Input artifacts; empty entries default to the synth stage outputs.
    std::string records_path;
    std::string soc_path;
    std::string rti_path;
    std::string employment_path;
    std::string cpi_path;
    SchemaConfig schema;

    IngestOptions ingest;

    IndexWeights weights;
    double winsor_lo = 1.0;
    double winsor_hi = 99.0;

    std::string reweight_variant = "occupation";
    std::vector<std::string> ipw_covariates = default_ipw_covariates();
    std::optional<double> weight_cap;

    std::vector<std::string> groupings = {"state",           "program_year",
                                          "funding_stream",  "received_training",
                                          "employment_status", "training_service",
                                          "race_ethnicity",  "sex",
                                          "low_income",      "education_level",
                                          "age"};
    std::size_t min_group_size = 100;

    SensitivityConfig sensitivity;
    std::vector<std::string> sensitivity_groupings = {
        "participation_period", "state", "program_year", "funding_stream",
        "received_training",    "sex",   "education_level"};
    std::string sensitivity_variant = "occupation";

    std::vector<MatchStageConfig> match_specs;

    bool has_synth = false;
    synth::SynthConfig synth_config;

    nlohmann::json raw; // as loaded, for hashing
};

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field '" + key + "' has the wrong type");
    }
}

} // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg;
    cfg.raw = j;
    cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
    cfg.out_dir = detail::get_or<std::string>(j, "out_dir", "out");
    cfg.format = detail::get_or<std::string>(j, "format", "csv");
    if (cfg.format != "csv" && cfg.format != "json" && cfg.format != "latex") {
        throw ConfigError("config field 'format' must be csv, json, or latex");
    }
    cfg.threads = detail::get_or<int>(j, "threads", 0);

    if (j.contains("inputs")) {
        const auto& in = j.at("inputs");
        cfg.records_path = detail::get_or<std::string>(in, "records", "");
        cfg.soc_path = detail::get_or<std::string>(in, "soc", "");
        cfg.rti_path = detail::get_or<std::string>(in, "rti", "");
        cfg.employment_path = detail::get_or<std::string>(in, "employment", "");
        cfg.cpi_path = detail::get_or<std::string>(in, "cpi", "");
    }
    if (j.contains("schema")) {
        cfg.schema = SchemaConfig::from_json(j.at("schema"));
    }
    if (j.contains("ingest")) {
        const auto& g = j.at("ingest");
        cfg.ingest.min_program_year =
            detail::get_or<int>(g, "min_program_year", cfg.ingest.min_program_year);
        cfg.ingest.max_program_year =
            detail::get_or<int>(g, "max_program_year", cfg.ingest.max_program_year);
        cfg.ingest.max_reject_fraction = detail::get_or<double>(
            g, "max_reject_fraction", cfg.ingest.max_reject_fraction);
    }
    if (j.contains("index")) {
        const auto& g = j.at("index");
        if (g.contains("weights")) {
            const auto w = g.at("weights").get<std::vector<double>>();
            if (w.size() != 3) {
                throw ConfigError("config field 'index.weights' must have 3 entries");
            }
            cfg.weights = {w[0], w[1], w[2]};
            for (const double v : w) {
                if (v < 0.0) {
                    throw ConfigError("config field 'index.weights' must be nonnegative");
                }
            }
        }
        if (g.contains("winsor")) {
            const auto w = g.at("winsor").get<std::vector<double>>();
            if (w.size() != 2 || w[0] > w[1]) {
                throw ConfigError("config field 'index.winsor' must be [lo, hi]");
            }
            cfg.winsor_lo = w[0];
            cfg.winsor_hi = w[1];
        }
    }
    if (j.contains("reweight")) {
        const auto& g = j.at("reweight");
        cfg.reweight_variant =
            detail::get_or<std::string>(g, "variant", cfg.reweight_variant);
        if (!parse_variant(cfg.reweight_variant)) {
            throw ConfigError("config field 'reweight.variant' must be occupation or "
                              "subsector");
        }
        if (g.contains("covariates")) {
            cfg.ipw_covariates = g.at("covariates").get<std::vector<std::string>>();
        }
        if (g.contains("weight_cap") && !g.at("weight_cap").is_null()) {
            cfg.weight_cap = g.at("weight_cap").get<double>();
        }
    }
    if (j.contains("aggregate")) {
        const auto& g = j.at("aggregate");
        if (g.contains("groupings")) {
            cfg.groupings = g.at("groupings").get<std::vector<std::string>>();
        }
        cfg.min_group_size = detail::get_or<std::size_t>(g, "min_group_size", 100);
    }
    if (j.contains("sensitivity")) {
        const auto& g = j.at("sensitivity");
        cfg.sensitivity.n_sims = detail::get_or<int>(g, "n_sims", 500);
        cfg.sensitivity.sample_frac = detail::get_or<double>(g, "sample_frac", 0.10);
        if (g.contains("groupings")) {
            cfg.sensitivity_groupings =
                g.at("groupings").get<std::vector<std::string>>();
        }
        cfg.sensitivity_variant =
            detail::get_or<std::string>(g, "variant", cfg.sensitivity_variant);
        if (!parse_variant(cfg.sensitivity_variant)) {
            throw ConfigError(
                "config field 'sensitivity.variant' must be occupation or subsector");
        }
    }
    if (j.contains("match")) {
        for (const auto& m : j.at("match")) {
            MatchStageConfig spec;
            spec.name = detail::get_or<std::string>(m, "name", "treatment");
            spec.treatment_field =
                detail::get_or<std::string>(m, "treatment_field", "received_training");
            spec.treatment_value = detail::get_or<std::string>(m, "treatment_value", "true");
            if (m.contains("strata")) {
                spec.strata = m.at("strata").get<std::vector<std::string>>();
            }
            spec.caliper = detail::get_or<double>(m, "caliper", 0.1);
            if (!(spec.caliper > 0.0)) {
                throw ConfigError("config field 'match.caliper' must be positive");
            }
            if (m.contains("covariates")) {
                spec.covariates = m.at("covariates").get<std::vector<std::string>>();
            }
            spec.bootstrap_replicates = detail::get_or<int>(m, "bootstrap", 1000);
            spec.outcome_variant =
                detail::get_or<std::string>(m, "outcome_variant", "occupation");
            if (!parse_variant(spec.outcome_variant)) {
                throw ConfigError(
                    "config field 'match.outcome_variant' must be occupation or subsector");
            }
            spec.use_ipw_weights = detail::get_or<bool>(m, "use_ipw_weights", true);
            cfg.match_specs.push_back(std::move(spec));
        }
    }
    if (cfg.match_specs.empty()) {
        MatchStageConfig training;
        training.name = "received_training";
        cfg.match_specs.push_back(training);
        MatchStageConfig apprenticeship;
        apprenticeship.name = "registered_apprenticeship";
        apprenticeship.treatment_field = "training_service_type";
        apprenticeship.treatment_value = "RegisteredApprenticeship";
        cfg.match_specs.push_back(apprenticeship);
    }
    if (j.contains("synth")) {
        cfg.has_synth = true;
        const auto& g = j.at("synth");
        synth::SynthConfig& s = cfg.synth_config;
        s.n = detail::get_or<std::size_t>(g, "n", s.n);
        s.seed = cfg.seed == 0 ? s.seed : cfg.seed;
        s.seed = detail::get_or<std::uint64_t>(g, "seed", s.seed);
        s.n_occupations = detail::get_or<int>(g, "n_occupations", s.n_occupations);
        s.n_subsectors = detail::get_or<int>(g, "n_subsectors", s.n_subsectors);
        s.n_states = detail::get_or<int>(g, "n_states", s.n_states);
        s.year_min = detail::get_or<int>(g, "year_min", s.year_min);
        s.year_max = detail::get_or<int>(g, "year_max", s.year_max);
        s.frac_reportable = detail::get_or<double>(g, "frac_reportable", s.frac_reportable);
        s.frac_missing_exit =
            detail::get_or<double>(g, "frac_missing_exit", s.frac_missing_exit);
        s.ashenfelter_dip = detail::get_or<double>(g, "ashenfelter_dip", s.ashenfelter_dip);
        s.mean_reversion = detail::get_or<double>(g, "mean_reversion", s.mean_reversion);
        s.treatment_effect =
            detail::get_or<double>(g, "treatment_effect", s.treatment_effect);
        s.group_effect_scale =
            detail::get_or<double>(g, "group_effect_scale", s.group_effect_scale);
        s.miss_intercept = detail::get_or<double>(g, "miss_intercept", s.miss_intercept);
        s.miss_age = detail::get_or<double>(g, "miss_age", s.miss_age);
        s.miss_low_income =
            detail::get_or<double>(g, "miss_low_income", s.miss_low_income);
        s.miss_training = detail::get_or<double>(g, "miss_training", s.miss_training);
        s.treat_intercept = detail::get_or<double>(g, "treat_intercept", s.treat_intercept);
    }
    cfg.sensitivity.seed = cfg.seed;
    cfg.sensitivity.baseline = cfg.weights;
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw MissingArtifactError("config file not found: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

inline std::string content_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingArtifactError("cannot hash missing file: " + path);
    }
    // FNV-1a 64.
    std::uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    char hex[20];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

inline std::string hash_json(const nlohmann::json& j) {
    const std::string dump = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (const char c : dump) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    char hex[20];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

// Config hash excludes volatile fields so reruns in other directories or
// with other thread counts produce identical manifests.
inline std::string config_hash(const RunConfig& cfg) {
    nlohmann::json j = cfg.raw;
    j.erase("out_dir");
    j.erase("threads");
    return hash_json(j);
}

// Paths inside the output directory are recorded relative to it.
inline std::string manifest_path_key(const std::string& path, const std::string& out_dir) {
    const std::string normalized = fs::path(path).lexically_normal().generic_string();
    const std::string base = fs::path(out_dir).lexically_normal().generic_string();
    if (normalized.rfind(base + "/", 0) == 0) {
        return normalized.substr(base.size() + 1);
    }
    return normalized;
}

class StageManifest {
  public:
    StageManifest(std::string stage, const RunConfig& cfg)
        : stage_(std::move(stage)), out_dir_(cfg.out_dir) {
        manifest_["stage"] = stage_;
        manifest_["seed"] = cfg.seed;
        manifest_["config_hash"] = config_hash(cfg);
        manifest_["inputs"] = nlohmann::json::object();
        manifest_["outputs"] = nlohmann::json::object();
    }

    void input(const std::string& path) {
        manifest_["inputs"][manifest_path_key(path, out_dir_)] = content_hash(path);
    }

    void output(const std::string& path) {
        manifest_["outputs"][manifest_path_key(path, out_dir_)] = content_hash(path);
    }

    void extra(const std::string& key, nlohmann::json value) {
        manifest_[key] = std::move(value);
    }

    std::string write() const {
        const fs::path dir = fs::path(out_dir_) / stage_;
        fs::create_directories(dir);
        const std::string path = (dir / "manifest.json").string();
        std::ofstream out(path, std::ios::binary);
        out << manifest_.dump(2) << '\n';
        return path;
    }

  private:
    std::string stage_;
    std::string out_dir_;
    nlohmann::json manifest_;
};

// ---------------------------------------------------------------------------
// Stage paths
// ---------------------------------------------------------------------------

struct StagePaths {
    std::string out_dir;

    std::string dir(const std::string& stage) const {
        return (fs::path(out_dir) / stage).string();
    }
    std::string file(const std::string& stage, const std::string& name) const {
        return (fs::path(out_dir) / stage / name).string();
    }

    std::string synth_records() const { return file("synth", "records.csv"); }
    std::string synth_soc() const { return file("synth", "soc.csv"); }
    std::string synth_rti() const { return file("synth", "rti.csv"); }
    std::string synth_employment() const { return file("synth", "employment.csv"); }
    std::string synth_cpi() const { return file("synth", "cpi.csv"); }
    std::string ground_truth() const { return file("synth", "ground_truth.json"); }
    std::string clean_records() const { return file("ingest", "records_clean.csv"); }
    std::string rejection_report() const { return file("ingest", "rejection_report.json"); }
    std::string scores(const std::string& variant) const {
        return file("index", "scores_" + variant + ".csv");
    }
    std::string weights() const { return file("reweight", "weights.csv"); }
};

// Resolve input paths: explicit config entries win, otherwise the synth
// stage outputs are expected.
struct ResolvedInputs {
    std::string records;
    std::string soc;
    std::string rti;
    std::string employment;
    std::string cpi;
};

inline ResolvedInputs resolve_inputs(const RunConfig& cfg) {
    const StagePaths paths{cfg.out_dir};
    ResolvedInputs in;
    in.records = cfg.records_path.empty() ? paths.synth_records() : cfg.records_path;
    in.soc = cfg.soc_path.empty() ? paths.synth_soc() : cfg.soc_path;
    in.rti = cfg.rti_path.empty() ? paths.synth_rti() : cfg.rti_path;
    in.employment =
        cfg.employment_path.empty() ? paths.synth_employment() : cfg.employment_path;
    in.cpi = cfg.cpi_path.empty() ? paths.synth_cpi() : cfg.cpi_path;
    return in;
}

inline void require_artifact(const std::string& path) {
    if (!fs::exists(path)) {
        throw MissingArtifactError("missing artifact: " + path);
    }
}

// ---------------------------------------------------------------------------
// Clean-record round trip (between ingest and the analysis stages)
// ---------------------------------------------------------------------------

inline void write_clean_records_csv(const std::string& path,
                                    std::span<const ParticipationRecord> records) {
    CsvWriter w(path);
    w.row({"record_id", "program_year", "state", "wdb_id", "funding_stream",
           "received_training", "training_service_type", "employment_status_at_entry",
           "entry_date", "exit_date", "age", "sex", "race_ethnicity", "education_level",
           "low_income", "pre_wage_m3", "pre_wage_m2", "pre_wage_m1", "post_wage_p1",
           "post_wage_p2", "post_wage_p3", "post_wage_p4", "pre_occ", "post_occ",
           "pre_subsector", "post_subsector", "deflate_error"});
    auto opt_num = [](const std::optional<double>& v) {
        return v ? format_double(*v) : "";
    };
    for (const auto& rec : records) {
        w.row({rec.record_id, std::to_string(rec.program_year), rec.state, rec.wdb_id,
               to_string(rec.funding_stream), rec.received_training ? "true" : "false",
               to_string(rec.training_service), to_string(rec.employment_status),
               rec.entry_date ? format_date(*rec.entry_date) : "",
               rec.exit_date ? format_date(*rec.exit_date) : "", opt_num(rec.age),
               rec.sex.value_or(""), rec.race_ethnicity.value_or(""),
               rec.education_level.value_or(""),
               rec.low_income ? (*rec.low_income ? "true" : "false") : "",
               opt_num(rec.pre_wages[0]), opt_num(rec.pre_wages[1]),
               opt_num(rec.pre_wages[2]), opt_num(rec.post_wages[0]),
               opt_num(rec.post_wages[1]), opt_num(rec.post_wages[2]),
               opt_num(rec.post_wages[3]), rec.pre_occ.value_or(""),
               rec.post_occ.value_or(""), rec.pre_subsector.value_or(""),
               rec.post_subsector.value_or(""), rec.deflate_error.value_or("")});
    }
}

inline std::vector<ParticipationRecord> read_clean_records_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    auto idx = [&](const char* name) {
        const int i = t.col(name);
        if (i < 0) {
            throw std::runtime_error(std::string("clean records: missing column ") + name);
        }
        return static_cast<std::size_t>(i);
    };
    const std::size_t id = idx("record_id"), py = idx("program_year"), st = idx("state"),
                      wdb = idx("wdb_id"), fs_col = idx("funding_stream"),
                      rt = idx("received_training"), ts = idx("training_service_type"),
                      es = idx("employment_status_at_entry"), ed = idx("entry_date"),
                      xd = idx("exit_date"), age = idx("age"), sex = idx("sex"),
                      race = idx("race_ethnicity"), edu = idx("education_level"),
                      li = idx("low_income"), de = idx("deflate_error");
    const std::size_t pw[3] = {idx("pre_wage_m3"), idx("pre_wage_m2"), idx("pre_wage_m1")};
    const std::size_t qw[4] = {idx("post_wage_p1"), idx("post_wage_p2"),
                               idx("post_wage_p3"), idx("post_wage_p4")};
    const std::size_t po = idx("pre_occ"), qo = idx("post_occ"), ps = idx("pre_subsector"),
                      qs = idx("post_subsector");

    std::vector<ParticipationRecord> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        ParticipationRecord rec;
        rec.record_id = row[id];
        rec.program_year = std::stoi(row[py]);
        rec.state = row[st];
        rec.wdb_id = row[wdb];
        rec.funding_stream = parse_funding_stream(row[fs_col]).value();
        rec.received_training = row[rt] == "true";
        rec.training_service = parse_training_service(row[ts]).value();
        rec.employment_status = parse_employment_status(row[es]).value();
        if (!row[ed].empty()) {
            rec.entry_date = parse_date(row[ed]);
        }
        if (!row[xd].empty()) {
            rec.exit_date = parse_date(row[xd]);
        }
        if (!row[age].empty()) {
            rec.age = std::stod(row[age]);
        }
        auto opt_str = [&](std::size_t c) -> std::optional<std::string> {
            return row[c].empty() ? std::nullopt : std::optional<std::string>(row[c]);
        };
        rec.sex = opt_str(sex);
        rec.race_ethnicity = opt_str(race);
        rec.education_level = opt_str(edu);
        if (!row[li].empty()) {
            rec.low_income = row[li] == "true";
        }
        for (std::size_t q = 0; q < 3; ++q) {
            if (!row[pw[q]].empty()) {
                rec.pre_wages[q] = std::stod(row[pw[q]]);
            }
        }
        for (std::size_t q = 0; q < 4; ++q) {
            if (!row[qw[q]].empty()) {
                rec.post_wages[q] = std::stod(row[qw[q]]);
            }
        }
        rec.pre_occ = opt_str(po);
        rec.post_occ = opt_str(qo);
        rec.pre_subsector = opt_str(ps);
        rec.post_subsector = opt_str(qs);
        if (!row[de].empty()) {
            rec.deflate_error = row[de];
        } else {
            rec.wages_are_real = true;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void run_synth_stage(const RunConfig& cfg) {
    if (!cfg.has_synth) {
        throw ConfigError("config has no 'synth' section");
    }
    const StagePaths paths{cfg.out_dir};
    fs::create_directories(paths.dir("synth"));

    auto output = synth::generate(cfg.synth_config);
    synth::write_records_csv(paths.synth_records(), output.records);
    synth::write_codebooks(paths.synth_soc(), paths.synth_rti(), paths.synth_employment(),
                           paths.synth_cpi(), output);
    {
        std::ofstream gt(paths.ground_truth(), std::ios::binary);
        gt << synth::ground_truth_json(output).dump(2) << '\n';
    }

    StageManifest manifest("synth", cfg);
    manifest.output(paths.synth_records());
    manifest.output(paths.synth_soc());
    manifest.output(paths.synth_rti());
    manifest.output(paths.synth_employment());
    manifest.output(paths.synth_cpi());
    manifest.output(paths.ground_truth());
    manifest.write();
}

inline void run_ingest_stage(const RunConfig& cfg) {
    const StagePaths paths{cfg.out_dir};
    const ResolvedInputs in = resolve_inputs(cfg);
    for (const auto& p : {in.records, in.soc, in.rti, in.employment, in.cpi}) {
        require_artifact(p);
    }
    const Codebooks books = load_codebooks(in.soc, in.rti, in.employment, in.cpi);
    auto loaded = load_records(in.records, cfg.schema, books, cfg.ingest);
    auto restricted = restrict_sample(std::move(loaded.records));
    for (auto& rec : restricted.kept) {
        resolve_codes(rec, books);
        deflate_wages(rec, books.cpi);
    }

    fs::create_directories(paths.dir("ingest"));
    write_clean_records_csv(paths.clean_records(), restricted.kept);
    {
        nlohmann::json j = loaded.report.to_json();
        j["restriction"] = {{"removed_reportable", restricted.removed_reportable},
                            {"removed_missing_exit", restricted.removed_missing_exit},
                            {"kept", restricted.kept.size()},
                            {"empty_warning", restricted.empty_warning}};
        std::ofstream out(paths.rejection_report(), std::ios::binary);
        out << j.dump(2) << '\n';
    }

    StageManifest manifest("ingest", cfg);
    manifest.input(in.records);
    manifest.input(in.soc);
    manifest.input(in.rti);
    manifest.input(in.employment);
    manifest.input(in.cpi);
    manifest.output(paths.clean_records());
    manifest.output(paths.rejection_report());
    manifest.write();
}

namespace detail {

inline nlohmann::json context_json(const NormalizationContext& ctx) {
    nlohmann::json j;
    j["winsor_lo_pct"] = ctx.winsor_lo_pct;
    j["winsor_hi_pct"] = ctx.winsor_hi_pct;
    j["lo_cut"] = ctx.lo_cut;
    j["hi_cut"] = ctx.hi_cut;
    j["min"] = ctx.min;
    j["max"] = ctx.max;
    j["degenerate"] = ctx.degenerate;
    j["n_pool"] = ctx.n_pool;
    return j;
}

inline Codebooks load_books_for(const RunConfig& cfg) {
    const ResolvedInputs in = resolve_inputs(cfg);
    for (const auto& p : {in.soc, in.rti, in.employment, in.cpi}) {
        require_artifact(p);
    }
    return load_codebooks(in.soc, in.rti, in.employment, in.cpi);
}

} // namespace detail

inline void run_index_stage(const RunConfig& cfg) {
    const StagePaths paths{cfg.out_dir};
    require_artifact(paths.clean_records());
    const Codebooks books = detail::load_books_for(cfg);
    const auto records = read_clean_records_csv(paths.clean_records());

    fs::create_directories(paths.dir("index"));
    const auto occ = score_dataset(records, books.book, IndexVariant::Occupation,
                                   cfg.weights, cfg.winsor_lo, cfg.winsor_hi);
    const auto sub = score_dataset(records, books.book, IndexVariant::Subsector,
                                   cfg.weights, cfg.winsor_lo, cfg.winsor_hi);
    write_scores_csv(paths.scores("occupation"), occ);
    write_scores_csv(paths.scores("subsector"), sub);

    nlohmann::json norm;
    norm["occupation"] = {{"wage", detail::context_json(occ.contexts.wage)},
                          {"cognitive", detail::context_json(occ.contexts.cognitive)},
                          {"manual", detail::context_json(occ.contexts.manual_task)}};
    norm["subsector"] = {{"wage", detail::context_json(sub.contexts.wage)},
                         {"cognitive", detail::context_json(sub.contexts.cognitive)},
                         {"manual", detail::context_json(sub.contexts.manual_task)}};
    {
        std::ofstream out(paths.file("index", "normalization.json"), std::ios::binary);
        out << norm.dump(2) << '\n';
    }

    nlohmann::json proxy;
    try {
        const auto fit = validate_subsector_proxy(occ.scores, sub.scores);
        proxy["status"] = "ok";
        proxy["cognitive"] = {{"slope", fit.cognitive.slope},
                              {"intercept", fit.cognitive.intercept},
                              {"r_squared", fit.cognitive.r_squared},
                              {"n", fit.cognitive.n}};
        proxy["manual"] = {{"slope", fit.manual_task.slope},
                           {"intercept", fit.manual_task.intercept},
                           {"r_squared", fit.manual_task.r_squared},
                           {"n", fit.manual_task.n}};
    } catch (const std::exception& e) {
        proxy["status"] = "unavailable";
        proxy["reason"] = e.what();
    }
    {
        std::ofstream out(paths.file("index", "proxy_validation.json"), std::ios::binary);
        out << proxy.dump(2) << '\n';
    }

    StageManifest manifest("index", cfg);
    manifest.input(paths.clean_records());
    manifest.output(paths.scores("occupation"));
    manifest.output(paths.scores("subsector"));
    manifest.output(paths.file("index", "normalization.json"));
    manifest.output(paths.file("index", "proxy_validation.json"));
    manifest.write();
}

inline void run_reweight_stage(const RunConfig& cfg) {
    const StagePaths paths{cfg.out_dir};
    require_artifact(paths.clean_records());
    require_artifact(paths.scores(cfg.reweight_variant));
    const auto records = read_clean_records_csv(paths.clean_records());
    const auto scores = read_scores_csv(paths.scores(cfg.reweight_variant));
    if (scores.size() != records.size()) {
        throw std::runtime_error("reweight: scores misaligned with clean records");
    }
    std::vector<char> calculable(records.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        calculable[i] = scores[i].calculable ? 1 : 0;
    }
    const auto propensity =
        estimate_calculability(records, calculable, cfg.ipw_covariates);
    const auto sample = stabilized_weights(propensity, calculable, cfg.weight_cap);
    const auto balance = balance_report(records, sample, cfg.ipw_covariates);

    fs::create_directories(paths.dir("reweight"));
    write_weights_csv(paths.weights(), records, sample);
    write_balance_csv(paths.file("reweight", "balance.csv"), balance);
    write_weight_histogram_csv(paths.file("reweight", "weight_histogram.csv"), sample);
    {
        nlohmann::json j;
        j["variant"] = cfg.reweight_variant;
        j["marginal_rate"] = sample.marginal_rate;
        j["weight_mean"] = sample.weight_mean;
        j["weight_min"] = sample.weight_min;
        j["weight_max"] = sample.weight_max;
        j["ess"] = sample.ess;
        j["imbalanced_before"] = balance.imbalanced_before;
        j["imbalanced_after"] = balance.imbalanced_after;
        j["covariate_levels"] = balance.rows.size();
        std::ofstream out(paths.file("reweight", "ipw_summary.json"), std::ios::binary);
        out << j.dump(2) << '\n';
    }

    StageManifest manifest("reweight", cfg);
    manifest.input(paths.clean_records());
    manifest.input(paths.scores(cfg.reweight_variant));
    manifest.output(paths.weights());
    manifest.output(paths.file("reweight", "balance.csv"));
    manifest.output(paths.file("reweight", "weight_histogram.csv"));
    manifest.output(paths.file("reweight", "ipw_summary.json"));
    manifest.write();
}

namespace detail {

inline std::vector<double> load_weights_for(const std::string& path,
                                            std::span<const ParticipationRecord> records) {
    const CsvTable t = read_csv(path);
    const int id = t.col("record_id");
    const int wh = t.col("w_hat");
    if (id < 0 || wh < 0) {
        throw std::runtime_error("weights csv: unexpected header");
    }
    std::map<std::string, double> by_id;
    for (const auto& row : t.rows) {
        const std::string& w = row[static_cast<std::size_t>(wh)];
        if (!w.empty()) {
            by_id[row[static_cast<std::size_t>(id)]] = std::stod(w);
        }
    }
    std::vector<double> out(records.size(), 0.0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto it = by_id.find(records[i].record_id);
        if (it != by_id.end()) {
            out[i] = it->second;
        }
    }
    return out;
}

} // namespace detail

inline void run_aggregate_stage(const RunConfig& cfg) {
    const StagePaths paths{cfg.out_dir};
    require_artifact(paths.clean_records());
    require_artifact(paths.scores("occupation"));
    require_artifact(paths.scores("subsector"));
    require_artifact(paths.weights());
    const Codebooks books = detail::load_books_for(cfg);
    const auto records = read_clean_records_csv(paths.clean_records());
    const auto occ_scores = read_scores_csv(paths.scores("occupation"));
    const auto sub_scores = read_scores_csv(paths.scores("subsector"));
    const auto ipw = detail::load_weights_for(paths.weights(), records);

    fs::create_directories(paths.dir("aggregate"));
    fs::create_directories((fs::path(paths.dir("aggregate")) / "tables").string());

    StageManifest manifest("aggregate", cfg);
    manifest.input(paths.clean_records());
    manifest.input(paths.scores("occupation"));
    manifest.input(paths.scores("subsector"));
    manifest.input(paths.weights());

    auto emit_tables = [&](std::span<const IndexScore> scores,
                           std::span<const double> weights, const std::string& label) {
        for (const auto& grouping : cfg.groupings) {
            const auto rows = group_index(records, scores, weights, grouping,
                                          cfg.min_group_size, &books.book);
            const std::string base = "tables/" + label + "_" + grouping;
            const std::string csv_path = paths.file("aggregate", base + ".csv");
            write_group_csv(csv_path, rows);
            manifest.output(csv_path);
            if (cfg.format == "json") {
                const std::string json_path = paths.file("aggregate", base + ".json");
                std::ofstream out(json_path, std::ios::binary);
                out << group_summaries_json(rows).dump(2) << '\n';
                out.close();
                manifest.output(json_path);
            } else if (cfg.format == "latex") {
                const std::string tex_path = paths.file("aggregate", base + ".tex");
                write_group_latex(tex_path, rows);
                manifest.output(tex_path);
            }
        }
    };
    // Occupation-level tables use IPW weights; subsector tables are
    // unweighted, mirroring the reporting convention.
    emit_tables(occ_scores, ipw, "occupation_ipw");
    emit_tables(sub_scores, {}, "subsector");

    // Quartile transitions for IHS wages and occupation RTI, on records
    // whose occupation-variant score is calculable.
    {
        std::vector<double> pre_w, post_w, pre_c, post_c, pre_m, post_m, w;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!occ_scores[i].calculable) {
                continue;
            }
            const auto& rec = records[i];
            const auto pre = ihs_mean_wage(rec.pre_wages);
            const auto post = ihs_mean_wage(rec.post_wages);
            if (!pre || !post || !rec.pre_occ || !rec.post_occ) {
                continue;
            }
            const auto pre_rti = books.book.occ_rti.find(*rec.pre_occ);
            const auto post_rti = books.book.occ_rti.find(*rec.post_occ);
            if (pre_rti == books.book.occ_rti.end() ||
                post_rti == books.book.occ_rti.end()) {
                continue;
            }
            pre_w.push_back(*pre);
            post_w.push_back(*post);
            pre_c.push_back(pre_rti->second.cognitive);
            post_c.push_back(post_rti->second.cognitive);
            pre_m.push_back(pre_rti->second.manual_task);
            post_m.push_back(post_rti->second.manual_task);
            w.push_back(ipw[i]);
        }
        const std::string path = paths.file("aggregate", "quartile_transitions.csv");
        if (!pre_w.empty()) {
            CsvWriter writer(path);
            writer.row({"measure", "pre_quartile", "post_quartile", "percent",
                        "deviation_from_25"});
            auto emit = [&](std::span<const double> pre, std::span<const double> post,
                            const std::string& measure) {
                const auto m = quartile_transition_matrix(pre, post, w);
                for (std::size_t x = 0; x < 4; ++x) {
                    for (std::size_t y = 0; y < 4; ++y) {
                        writer.row({measure, "Q" + std::to_string(x + 1),
                                    "Q" + std::to_string(y + 1),
                                    format_double(m.cells[x][y]),
                                    format_double(m.deviation[x][y])});
                    }
                }
            };
            emit(pre_w, post_w, "ihs_wages");
            emit(pre_c, post_c, "rti_cognitive");
            emit(pre_m, post_m, "rti_manual");
        } else {
            CsvWriter writer(path);
            writer.row({"measure", "pre_quartile", "post_quartile", "percent",
                        "deviation_from_25"});
        }
        manifest.output(path);
    }

    // Binscatter of pre-participation RTI against the index.
    {
        std::vector<double> x_c, x_m, y;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!occ_scores[i].calculable || !records[i].pre_occ) {
                continue;
            }
            const auto it = books.book.occ_rti.find(*records[i].pre_occ);
            if (it == books.book.occ_rti.end()) {
                continue;
            }
            x_c.push_back(it->second.cognitive);
            x_m.push_back(it->second.manual_task);
            y.push_back(occ_scores[i].i_n);
        }
        const std::string path = paths.file("aggregate", "binscatter.csv");
        CsvWriter writer(path);
        writer.row({"measure", "bin", "x_mean", "y_mean", "n", "ols_slope",
                    "ols_intercept", "ols_r_squared"});
        const std::size_t bins = 20;
        if (x_c.size() >= bins) {
            auto emit = [&](std::span<const double> x, const std::string& measure) {
                const auto b = binscatter(x, y, bins);
                for (std::size_t i = 0; i < b.bins.size(); ++i) {
                    writer.row({measure, std::to_string(i + 1),
                                format_double(b.bins[i].x_mean),
                                format_double(b.bins[i].y_mean),
                                std::to_string(b.bins[i].n), format_double(b.fit.slope),
                                format_double(b.fit.intercept),
                                format_double(b.fit.r_squared)});
                }
            };
            emit(x_c, "rti_cognitive_pre");
            emit(x_m, "rti_manual_pre");
        }
        manifest.output(path);
    }

    manifest.write();
}

inline void run_sensitivity_stage(const RunConfig& cfg) {
    const StagePaths paths{cfg.out_dir};
    require_artifact(paths.clean_records());
    require_artifact(paths.scores(cfg.sensitivity_variant));
    const Codebooks books = detail::load_books_for(cfg);
    const auto records = read_clean_records_csv(paths.clean_records());
    const auto scores = read_scores_csv(paths.scores(cfg.sensitivity_variant));
    if (scores.size() != records.size()) {
        throw std::runtime_error("sensitivity: scores misaligned with clean records");
    }

    SensitivityConfig sc = cfg.sensitivity;
    sc.seed = cfg.seed;
    sc.baseline = cfg.weights;
    const auto report =
        run_sensitivity(records, scores, cfg.sensitivity_groupings, sc, &books.book);

    fs::create_directories(paths.dir("sensitivity"));
    const std::string csv_path =
        paths.file("sensitivity", "sensitivity_" + cfg.sensitivity_variant + ".csv");
    write_sensitivity_csv(csv_path, report);
    const std::string replay_path = paths.file("sensitivity", "replay.json");
    {
        std::ofstream out(replay_path, std::ios::binary);
        out << sensitivity_replay_json(report).dump(2) << '\n';
    }

    StageManifest manifest("sensitivity", cfg);
    manifest.input(paths.clean_records());
    manifest.input(paths.scores(cfg.sensitivity_variant));
    manifest.output(csv_path);
    manifest.output(replay_path);
    manifest.write();
}

namespace detail {

inline std::function<bool(const ParticipationRecord&)> treatment_predicate(
    const MatchStageConfig& spec) {
    if (spec.treatment_field == "received_training") {
        const bool want = spec.treatment_value == "true";
        return [want](const ParticipationRecord& r) { return r.received_training == want; };
    }
    if (spec.treatment_field == "training_service_type") {
        const auto service = parse_training_service(spec.treatment_value);
        if (!service) {
            throw ConfigError("match.treatment_value: unknown training service '" +
                              spec.treatment_value + "'");
        }
        return [s = *service](const ParticipationRecord& r) {
            return r.training_service == s;
        };
    }
    if (spec.treatment_field == "funding_stream") {
        const auto stream = parse_funding_stream(spec.treatment_value);
        if (!stream) {
            throw ConfigError("match.treatment_value: unknown funding stream '" +
                              spec.treatment_value + "'");
        }
        return [s = *stream](const ParticipationRecord& r) {
            return r.funding_stream == s;
        };
    }
    throw ConfigError("match.treatment_field: unsupported field '" +
                      spec.treatment_field + "'");
}

} // namespace detail

inline void run_match_stage(const RunConfig& cfg) {
    const StagePaths paths{cfg.out_dir};
    require_artifact(paths.clean_records());
    require_artifact(paths.weights());
    const auto records = read_clean_records_csv(paths.clean_records());
    const auto ipw_all = detail::load_weights_for(paths.weights(), records);

    fs::create_directories(paths.dir("match"));
    StageManifest manifest("match", cfg);
    manifest.input(paths.clean_records());
    manifest.input(paths.weights());

    std::vector<std::pair<std::string, Effects>> effect_rows;
    std::vector<std::tuple<std::string, MatchResult, double>> diagnostic_rows;

    for (const auto& stage_spec : cfg.match_specs) {
        require_artifact(paths.scores(stage_spec.outcome_variant));
        const auto scores = read_scores_csv(paths.scores(stage_spec.outcome_variant));
        if (scores.size() != records.size()) {
            throw std::runtime_error("match: scores misaligned with clean records");
        }

        // Eligible set: records with a calculable outcome.
        std::vector<ParticipationRecord> eligible;
        std::vector<double> outcome;
        std::vector<double> weights;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!scores[i].calculable) {
                continue;
            }
            eligible.push_back(records[i]);
            outcome.push_back(scores[i].i_n);
            weights.push_back(stage_spec.use_ipw_weights && ipw_all[i] > 0.0 ? ipw_all[i]
                                                                             : 1.0);
        }

        MatchSpec spec;
        spec.name = stage_spec.name;
        spec.treatment = detail::treatment_predicate(stage_spec);
        spec.strata = stage_spec.strata;
        spec.caliper = stage_spec.caliper;
        spec.covariates = stage_spec.covariates;
        spec.bootstrap_replicates = stage_spec.bootstrap_replicates;
        spec.seed = cfg.seed;

        const auto fit = fit_propensity(eligible, spec);
        const auto result = match(eligible, fit.propensity, spec);
        const auto eff = effects(eligible, fit.propensity, outcome, spec, weights);
        const auto diag = match_diagnostics(eligible, fit.propensity, result, spec);

        effect_rows.emplace_back(stage_spec.name, eff);
        diagnostic_rows.emplace_back(stage_spec.name, result, fit.auc);

        const std::string love_path =
            paths.file("match", "love_plot_" + stage_spec.name + ".csv");
        write_love_plot_csv(love_path, diag);
        manifest.output(love_path);
        const std::string overlap_path =
            paths.file("match", "overlap_" + stage_spec.name + ".csv");
        write_overlap_csv(overlap_path, diag.overlap);
        manifest.output(overlap_path);
    }

    const std::string effects_path = paths.file("match", "effects.csv");
    write_effects_csv(effects_path, effect_rows);
    manifest.output(effects_path);
    const std::string diag_path = paths.file("match", "diagnostics.csv");
    write_match_diagnostics_csv(diag_path, diagnostic_rows);
    manifest.output(diag_path);
    manifest.write();
}

// Bundles every emitted table into out/report and writes an inventory.
inline void run_report_stage(const RunConfig& cfg) {
    const StagePaths paths{cfg.out_dir};
    const fs::path report_dir = fs::path(cfg.out_dir) / "report";
    fs::create_directories(report_dir);

    StageManifest manifest("report", cfg);
    nlohmann::json inventory = nlohmann::json::array();

    const std::vector<std::string> stages = {"ingest", "index", "reweight", "aggregate",
                                             "sensitivity", "match"};
    for (const auto& stage : stages) {
        const fs::path dir = fs::path(cfg.out_dir) / stage;
        if (!fs::exists(dir)) {
            throw MissingArtifactError("missing artifact: " + dir.string() +
                                       " (run the " + stage + " stage first)");
        }
        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(dir)) {
            if (!entry.is_regular_file()) {
                continue;
            }
            if (entry.path().filename() == "manifest.json") {
                continue;
            }
            files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& src : files) {
            const std::string flat =
                stage + "_" + src.lexically_relative(dir).generic_string();
            std::string name = flat;
            for (char& c : name) {
                if (c == '/') {
                    c = '_';
                }
            }
            const fs::path dst = report_dir / name;
            fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
            manifest.output(dst.string());
            inventory.push_back(name);
        }
    }
    {
        nlohmann::json j;
        j["tables"] = inventory;
        std::ofstream out((report_dir / "report_inventory.json").string(),
                          std::ios::binary);
        out << j.dump(2) << '\n';
    }
    manifest.output((report_dir / "report_inventory.json").string());
    manifest.write();
}

// Full pipeline in stage order; runs synth first when configured.
inline void run_pipeline(const RunConfig& cfg) {
    if (cfg.has_synth) {
        run_synth_stage(cfg);
    }
    run_ingest_stage(cfg);
    run_index_stage(cfg);
    run_reweight_stage(cfg);
    run_aggregate_stage(cfg);
    run_sensitivity_stage(cfg);
    run_match_stage(cfg);
    run_report_stage(cfg);
}

} // namespace retrain
