#pragma once
// Record ingestion: CSV parsing against a declarative schema, row
// validation, sample restriction, code resolution, and CPI deflation.

#include "retrain/csv.hpp"
#include "retrain/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace retrain {

// Maps canonical field names to source column names. Fields absent from the
// map fall back to the canonical name itself.
struct SchemaConfig {
    std::map<std::string, std::string> columns;

    const std::string& column_for(const std::string& canonical) const {
        auto it = columns.find(canonical);
        return it != columns.end() ? it->second : canonical;
    }

    static SchemaConfig from_json(const nlohmann::json& j) {
        SchemaConfig cfg;
        for (auto it = j.begin(); it != j.end(); ++it) {
            cfg.columns[it.key()] = it.value().get<std::string>();
        }
        return cfg;
    }
};

// Canonical column set. Wage and code columns are per-quarter:
// pre_* columns cover offsets -3..-1, post_* columns offsets +1..+4.
inline const std::vector<std::string>& canonical_required_fields() {
    static const std::vector<std::string> fields = {
        "record_id",     "program_year",      "state",
        "wdb_id",        "funding_stream",    "received_training",
        "training_service_type", "employment_status_at_entry",
        "reportable_individual", "entry_date", "exit_date",
    };
    return fields;
}

inline const std::vector<std::string>& canonical_optional_fields() {
    static const std::vector<std::string> fields = {
        "age",       "sex",         "race_ethnicity", "education_level", "low_income",
        "pre_wage_m3", "pre_wage_m2", "pre_wage_m1",
        "post_wage_p1", "post_wage_p2", "post_wage_p3", "post_wage_p4",
        "pre_occ_m3", "pre_occ_m2", "pre_occ_m1",
        "post_occ_p1", "post_occ_p2", "post_occ_p3", "post_occ_p4",
        "pre_naics_m3", "pre_naics_m2", "pre_naics_m1",
        "post_naics_p1", "post_naics_p2", "post_naics_p3", "post_naics_p4",
    };
    return fields;
}

struct IngestOptions {
    int min_program_year = 2016;
    int max_program_year = 2024;
    double max_reject_fraction = 0.5; // hard failure above this
};

struct RejectionReport {
    std::map<std::string, std::size_t> rejects;  // row dropped, first reason wins
    std::map<std::string, std::size_t> warnings; // field dropped, record kept
    std::size_t input_rows = 0;
    std::size_t emitted = 0;

    std::size_t total_rejected() const {
        std::size_t total = 0;
        for (const auto& [_, n] : rejects) {
            total += n;
        }
        return total;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["input_rows"] = input_rows;
        j["emitted"] = emitted;
        j["rejects"] = rejects.empty() ? nlohmann::json::object() : nlohmann::json(rejects);
        j["warnings"] =
            warnings.empty() ? nlohmann::json::object() : nlohmann::json(warnings);
        return j;
    }
};

struct Codebooks {
    std::set<std::string> soc;                    // valid occupation codes
    std::map<std::string, std::string> soc_title; // optional titles
    TaskIntensityBook book;
    CpiTable cpi;
};

// ---------------------------------------------------------------------------
// Codebook loaders
// ---------------------------------------------------------------------------

inline std::set<std::string> load_soc_structure(const std::string& path,
                                                std::map<std::string, std::string>* titles
                                                = nullptr) {
    const CsvTable t = read_csv(path);
    const int code_col = t.col("soc_code");
    if (code_col < 0) {
        throw std::runtime_error("soc codebook: missing soc_code column in " + path);
    }
    const int title_col = t.col("title");
    std::set<std::string> codes;
    for (const auto& row : t.rows) {
        const std::string& code = row[static_cast<std::size_t>(code_col)];
        if (code.empty()) {
            continue;
        }
        codes.insert(code);
        if (titles != nullptr && title_col >= 0) {
            (*titles)[code] = row[static_cast<std::size_t>(title_col)];
        }
    }
    return codes;
}

inline void load_rti(const std::string& path, TaskIntensityBook& book) {
    const CsvTable t = read_csv(path);
    const int soc = t.col("soc_code");
    const int rc = t.col("rti_cognitive");
    const int rm = t.col("rti_manual");
    if (soc < 0 || rc < 0 || rm < 0) {
        throw std::runtime_error(
            "rti codebook: need soc_code, rti_cognitive, rti_manual columns in " + path);
    }
    for (const auto& row : t.rows) {
        RtiPair pair;
        pair.cognitive = std::stod(row[static_cast<std::size_t>(rc)]);
        pair.manual_task = std::stod(row[static_cast<std::size_t>(rm)]);
        book.occ_rti[row[static_cast<std::size_t>(soc)]] = pair;
    }
}

inline void load_employment_shares(const std::string& path, TaskIntensityBook& book) {
    const CsvTable t = read_csv(path);
    const int soc = t.col("soc_code");
    const int naics = t.col("naics");
    const int emp = t.col("employment");
    if (soc < 0 || naics < 0 || emp < 0) {
        throw std::runtime_error(
            "employment codebook: need soc_code, naics, employment columns in " + path);
    }
    for (const auto& row : t.rows) {
        const std::string sub = naics3(row[static_cast<std::size_t>(naics)]);
        const double value = std::stod(row[static_cast<std::size_t>(emp)]);
        if (value < 0.0) {
            throw std::runtime_error("employment codebook: negative employment in " + path);
        }
        book.emp_shares[{row[static_cast<std::size_t>(soc)], sub}] += value;
    }
    build_subsector_rti(book);
}

inline CpiTable load_cpi(const std::string& path, int base_year = 2010) {
    const CsvTable t = read_csv(path);
    const int year = t.col("year");
    const int value = t.col("cpi");
    if (year < 0 || value < 0) {
        throw std::runtime_error("cpi table: need year, cpi columns in " + path);
    }
    CpiTable cpi;
    cpi.base_year = base_year;
    for (const auto& row : t.rows) {
        const int y = std::stoi(row[static_cast<std::size_t>(year)]);
        const double v = std::stod(row[static_cast<std::size_t>(value)]);
        if (!(v > 0.0)) {
            throw std::runtime_error("cpi table: non-positive CPI value for year " +
                                     std::to_string(y));
        }
        cpi.values[y] = v;
    }
    if (!cpi.has_year(base_year)) {
        throw std::runtime_error("cpi table: base year " + std::to_string(base_year) +
                                 " missing");
    }
    return cpi;
}

inline Codebooks load_codebooks(const std::string& soc_path, const std::string& rti_path,
                                const std::string& employment_path,
                                const std::string& cpi_path) {
    Codebooks books;
    books.soc = load_soc_structure(soc_path, &books.soc_title);
    load_rti(rti_path, books.book);
    load_employment_shares(employment_path, books.book);
    books.cpi = load_cpi(cpi_path);
    return books;
}

// ---------------------------------------------------------------------------
// Record loading
// ---------------------------------------------------------------------------

struct LoadResult {
    std::vector<ParticipationRecord> records;
    RejectionReport report;
};

namespace detail {

struct RowReject {
    std::string reason;
};

inline std::optional<double> parse_optional_double(const std::string& s) {
    if (s.empty()) {
        return std::nullopt;
    }
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) {
        throw std::invalid_argument("trailing characters");
    }
    return v;
}

inline std::optional<bool> parse_optional_bool(const std::string& s) {
    if (s.empty()) {
        return std::nullopt;
    }
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("not a boolean");
}

} // namespace detail

inline LoadResult load_records(const std::string& path, const SchemaConfig& schema,
                               const Codebooks& books, const IngestOptions& options = {}) {
    const CsvTable table = read_csv(path);

    // Resolve all column indices up front; required columns must exist.
    std::map<std::string, int> col;
    for (const auto& field : canonical_required_fields()) {
        const std::string& name = schema.column_for(field);
        const int idx = table.col(name);
        if (idx < 0) {
            throw std::runtime_error("load_records: required column '" + name +
                                     "' (field " + field + ") missing in " + path);
        }
        col[field] = idx;
    }
    for (const auto& field : canonical_optional_fields()) {
        col[field] = table.col(schema.column_for(field));
    }

    LoadResult out;
    out.report.input_rows = table.rows.size();

    auto cell = [&](const std::vector<std::string>& row, const std::string& field)
        -> const std::string& {
        static const std::string empty;
        const int idx = col.at(field);
        if (idx < 0 || static_cast<std::size_t>(idx) >= row.size()) {
            return empty;
        }
        return row[static_cast<std::size_t>(idx)];
    };

    for (const auto& row : table.rows) {
        ParticipationRecord rec;
        std::string reject;

        try {
            rec.record_id = cell(row, "record_id");
            if (rec.record_id.empty()) {
                throw detail::RowReject{"missing_record_id"};
            }
            try {
                rec.program_year = std::stoi(cell(row, "program_year"));
            } catch (...) {
                throw detail::RowReject{"bad_program_year"};
            }
            if (rec.program_year < options.min_program_year ||
                rec.program_year > options.max_program_year) {
                throw detail::RowReject{"program_year_out_of_range"};
            }
            rec.state = cell(row, "state");
            rec.wdb_id = cell(row, "wdb_id");

            const auto funding = parse_funding_stream(cell(row, "funding_stream"));
            if (!funding) {
                throw detail::RowReject{"bad_funding_stream"};
            }
            rec.funding_stream = *funding;

            const auto training_flag =
                detail::parse_optional_bool(cell(row, "received_training"));
            if (!training_flag) {
                throw detail::RowReject{"bad_received_training"};
            }
            rec.received_training = *training_flag;

            const auto service = parse_training_service(cell(row, "training_service_type"));
            if (!service) {
                throw detail::RowReject{"bad_training_service_type"};
            }
            rec.training_service = *service;

            const auto status =
                parse_employment_status(cell(row, "employment_status_at_entry"));
            if (!status) {
                throw detail::RowReject{"bad_employment_status"};
            }
            rec.employment_status = *status;

            const auto reportable =
                detail::parse_optional_bool(cell(row, "reportable_individual"));
            if (!reportable) {
                throw detail::RowReject{"bad_reportable_individual"};
            }
            rec.reportable_individual = *reportable;

            const std::string& entry_str = cell(row, "entry_date");
            if (entry_str.empty()) {
                throw detail::RowReject{"missing_entry_date"};
            }
            rec.entry_date = parse_date(entry_str);
            if (!rec.entry_date) {
                throw detail::RowReject{"bad_entry_date"};
            }
            const std::string& exit_str = cell(row, "exit_date");
            if (!exit_str.empty()) {
                rec.exit_date = parse_date(exit_str);
                if (!rec.exit_date) {
                    throw detail::RowReject{"bad_exit_date"};
                }
            }

            try {
                rec.age = detail::parse_optional_double(cell(row, "age"));
            } catch (...) {
                throw detail::RowReject{"bad_age"};
            }
            auto optional_string = [&](const std::string& field) -> std::optional<std::string> {
                const std::string& v = cell(row, field);
                return v.empty() ? std::nullopt : std::optional<std::string>(v);
            };
            rec.sex = optional_string("sex");
            rec.race_ethnicity = optional_string("race_ethnicity");
            rec.education_level = optional_string("education_level");
            try {
                rec.low_income = detail::parse_optional_bool(cell(row, "low_income"));
            } catch (...) {
                throw detail::RowReject{"bad_low_income"};
            }

            auto parse_wage = [&](const std::string& field) -> std::optional<double> {
                std::optional<double> w;
                try {
                    w = detail::parse_optional_double(cell(row, field));
                } catch (...) {
                    throw detail::RowReject{"bad_wage"};
                }
                if (w) {
                    if (!std::isfinite(*w)) {
                        throw detail::RowReject{"nonfinite_wage"};
                    }
                    if (*w < 0.0) {
                        throw detail::RowReject{"negative_wage"};
                    }
                }
                return w;
            };
            rec.pre_wages[0] = parse_wage("pre_wage_m3");
            rec.pre_wages[1] = parse_wage("pre_wage_m2");
            rec.pre_wages[2] = parse_wage("pre_wage_m1");
            rec.post_wages[0] = parse_wage("post_wage_p1");
            rec.post_wages[1] = parse_wage("post_wage_p2");
            rec.post_wages[2] = parse_wage("post_wage_p3");
            rec.post_wages[3] = parse_wage("post_wage_p4");

            // Occupation/industry candidates; unknown codes become missing
            // with a warning, the record itself is kept.
            auto collect_codes = [&](const char* prefix, std::span<const int> quarters,
                                     std::vector<CodeObservation>& sink, bool is_soc) {
                for (const int q : quarters) {
                    std::string field = prefix;
                    field += q < 0 ? "m" : "p";
                    field += std::to_string(std::abs(q));
                    const std::string& code = cell(row, field);
                    if (code.empty()) {
                        continue;
                    }
                    if (is_soc) {
                        if (books.soc.count(code) == 0) {
                            ++out.report.warnings["unknown_soc_code"];
                            continue;
                        }
                    } else if (!books.book.has_subsector(naics3(code))) {
                        ++out.report.warnings["unknown_naics_code"];
                        continue;
                    }
                    sink.push_back({code, q});
                }
            };
            static constexpr int pre_q[] = {-3, -2, -1};
            static constexpr int post_q[] = {1, 2, 3, 4};
            collect_codes("pre_occ_", pre_q, rec.pre_occ_candidates, true);
            collect_codes("post_occ_", post_q, rec.post_occ_candidates, true);
            collect_codes("pre_naics_", pre_q, rec.pre_naics_candidates, false);
            collect_codes("post_naics_", post_q, rec.post_naics_candidates, false);
        } catch (const detail::RowReject& r) {
            reject = r.reason;
        }

        if (!reject.empty()) {
            ++out.report.rejects[reject];
        } else {
            out.records.push_back(std::move(rec));
            ++out.report.emitted;
        }
    }

    if (out.report.input_rows > 0) {
        const double frac = static_cast<double>(out.report.total_rejected()) /
                            static_cast<double>(out.report.input_rows);
        if (frac > options.max_reject_fraction) {
            throw std::runtime_error(
                "load_records: " + std::to_string(out.report.total_rejected()) + " of " +
                std::to_string(out.report.input_rows) +
                " rows rejected, above the configured failure threshold");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sample restriction
// ---------------------------------------------------------------------------

struct RestrictionResult {
    std::vector<ParticipationRecord> kept;
    std::size_t removed_reportable = 0;
    std::size_t removed_missing_exit = 0;
    bool empty_warning = false;
};

inline RestrictionResult restrict_sample(std::vector<ParticipationRecord> records) {
    RestrictionResult out;
    out.kept.reserve(records.size());
    for (auto& rec : records) {
        if (rec.reportable_individual) {
            ++out.removed_reportable;
            continue;
        }
        if (!rec.exit_date) {
            ++out.removed_missing_exit;
            continue;
        }
        out.kept.push_back(std::move(rec));
    }
    out.empty_warning = out.kept.empty();
    return out;
}

// ---------------------------------------------------------------------------
// Code resolution
// ---------------------------------------------------------------------------

// Nearest candidate by |quarter offset|; ties prefer the later-reported
// quarter. Returns nothing when no candidates exist.
inline std::optional<std::string> pick_nearest_code(
    const std::vector<CodeObservation>& candidates) {
    const CodeObservation* best = nullptr;
    for (const auto& c : candidates) {
        if (best == nullptr) {
            best = &c;
            continue;
        }
        const int d = std::abs(c.quarter);
        const int best_d = std::abs(best->quarter);
        if (d < best_d || (d == best_d && c.quarter > best->quarter)) {
            best = &c;
        }
    }
    if (best == nullptr) {
        return std::nullopt;
    }
    return best->code;
}

inline void resolve_codes(ParticipationRecord& rec, const Codebooks& books) {
    rec.pre_occ = pick_nearest_code(rec.pre_occ_candidates);
    rec.post_occ = pick_nearest_code(rec.post_occ_candidates);
    if (rec.pre_occ && books.soc.count(*rec.pre_occ) == 0) {
        rec.pre_occ.reset();
    }
    if (rec.post_occ && books.soc.count(*rec.post_occ) == 0) {
        rec.post_occ.reset();
    }
    auto resolve_naics = [&](const std::vector<CodeObservation>& candidates)
        -> std::optional<std::string> {
        auto code = pick_nearest_code(candidates);
        if (!code) {
            return std::nullopt;
        }
        const std::string sub = naics3(*code);
        if (!books.book.has_subsector(sub)) {
            return std::nullopt;
        }
        return sub;
    };
    rec.pre_subsector = resolve_naics(rec.pre_naics_candidates);
    rec.post_subsector = resolve_naics(rec.post_naics_candidates);
}

// ---------------------------------------------------------------------------
// Wage deflation
// ---------------------------------------------------------------------------

// Converts nominal wages to constant base-year dollars. Each quarter is
// attributed to the calendar year it falls in: pre quarters anchor to the
// entry date, post quarters to the exit date. A missing CPI year marks the
// record rather than half-deflating it.
inline void deflate_wages(ParticipationRecord& rec, const CpiTable& cpi) {
    if (rec.wages_are_real) {
        return;
    }
    struct Pending {
        double* slot;
        int year;
    };
    std::vector<Pending> pending;

    for (std::size_t i = 0; i < rec.pre_wages.size(); ++i) {
        if (!rec.pre_wages[i]) {
            continue;
        }
        if (!rec.entry_date) {
            rec.deflate_error = "missing_entry_date";
            return;
        }
        pending.push_back({&*rec.pre_wages[i], quarter_year(*rec.entry_date, kPreQuarters[i])});
    }
    for (std::size_t i = 0; i < rec.post_wages.size(); ++i) {
        if (!rec.post_wages[i]) {
            continue;
        }
        if (!rec.exit_date) {
            rec.deflate_error = "missing_exit_date";
            return;
        }
        pending.push_back(
            {&*rec.post_wages[i], quarter_year(*rec.exit_date, kPostQuarters[i])});
    }
    for (const auto& p : pending) {
        if (!cpi.has_year(p.year)) {
            rec.deflate_error = "missing_cpi_year_" + std::to_string(p.year);
            return;
        }
    }
    for (const auto& p : pending) {
        *p.slot *= cpi.deflator(p.year);
    }
    rec.wages_are_real = true;
}

} // namespace retrain
