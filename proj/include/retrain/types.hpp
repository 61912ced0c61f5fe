#pragma once
// Domain types shared across the pipeline: participation records, task
// intensity codebooks, CPI table, and the enums used in PIRL-style files.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace retrain {

// Raised for malformed run configuration; the CLI maps it to exit code 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when an upstream artifact is missing; CLI exit code 2.
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class FundingStream { Adult, DislocatedWorker, Youth, WagnerPeyser, Other };

enum class EmploymentStatus { Employed, Unemployed, NotInLaborForce, Other };

// 14 service categories plus None for non-training participation.
enum class TrainingService {
    None,
    OccupationalSkills,
    OnTheJob,
    SkillUpgrading,
    Entrepreneurial,
    AdultEducationWithTraining,
    CustomizedTraining,
    RegisteredApprenticeship,
    YouthOccupationalSkills,
    OtherOccupational,
    RemedialTraining,
    PrerequisiteTraining,
    JobReadiness,
    EnglishLanguageWithTraining,
    IncumbentWorker,
};

inline const char* to_string(FundingStream v) {
    switch (v) {
    case FundingStream::Adult: return "Adult";
    case FundingStream::DislocatedWorker: return "DislocatedWorker";
    case FundingStream::Youth: return "Youth";
    case FundingStream::WagnerPeyser: return "WagnerPeyser";
    case FundingStream::Other: return "Other";
    }
    return "Other";
}

inline const char* to_string(EmploymentStatus v) {
    switch (v) {
    case EmploymentStatus::Employed: return "Employed";
    case EmploymentStatus::Unemployed: return "Unemployed";
    case EmploymentStatus::NotInLaborForce: return "NotInLaborForce";
    case EmploymentStatus::Other: return "Other";
    }
    return "Other";
}

inline const char* to_string(TrainingService v) {
    switch (v) {
    case TrainingService::None: return "None";
    case TrainingService::OccupationalSkills: return "OccupationalSkills";
    case TrainingService::OnTheJob: return "OnTheJob";
    case TrainingService::SkillUpgrading: return "SkillUpgrading";
    case TrainingService::Entrepreneurial: return "Entrepreneurial";
    case TrainingService::AdultEducationWithTraining: return "AdultEducationWithTraining";
    case TrainingService::CustomizedTraining: return "CustomizedTraining";
    case TrainingService::RegisteredApprenticeship: return "RegisteredApprenticeship";
    case TrainingService::YouthOccupationalSkills: return "YouthOccupationalSkills";
    case TrainingService::OtherOccupational: return "OtherOccupational";
    case TrainingService::RemedialTraining: return "RemedialTraining";
    case TrainingService::PrerequisiteTraining: return "PrerequisiteTraining";
    case TrainingService::JobReadiness: return "JobReadiness";
    case TrainingService::EnglishLanguageWithTraining: return "EnglishLanguageWithTraining";
    case TrainingService::IncumbentWorker: return "IncumbentWorker";
    }
    return "None";
}

inline std::optional<FundingStream> parse_funding_stream(const std::string& s) {
    if (s == "Adult") return FundingStream::Adult;
    if (s == "DislocatedWorker") return FundingStream::DislocatedWorker;
    if (s == "Youth") return FundingStream::Youth;
    if (s == "WagnerPeyser") return FundingStream::WagnerPeyser;
    if (s == "Other") return FundingStream::Other;
    return std::nullopt;
}

inline std::optional<EmploymentStatus> parse_employment_status(const std::string& s) {
    if (s == "Employed") return EmploymentStatus::Employed;
    if (s == "Unemployed") return EmploymentStatus::Unemployed;
    if (s == "NotInLaborForce") return EmploymentStatus::NotInLaborForce;
    if (s == "Other") return EmploymentStatus::Other;
    return std::nullopt;
}

inline std::optional<TrainingService> parse_training_service(const std::string& s) {
    static const std::map<std::string, TrainingService> table = {
        {"None", TrainingService::None},
        {"OccupationalSkills", TrainingService::OccupationalSkills},
        {"OnTheJob", TrainingService::OnTheJob},
        {"SkillUpgrading", TrainingService::SkillUpgrading},
        {"Entrepreneurial", TrainingService::Entrepreneurial},
        {"AdultEducationWithTraining", TrainingService::AdultEducationWithTraining},
        {"CustomizedTraining", TrainingService::CustomizedTraining},
        {"RegisteredApprenticeship", TrainingService::RegisteredApprenticeship},
        {"YouthOccupationalSkills", TrainingService::YouthOccupationalSkills},
        {"OtherOccupational", TrainingService::OtherOccupational},
        {"RemedialTraining", TrainingService::RemedialTraining},
        {"PrerequisiteTraining", TrainingService::PrerequisiteTraining},
        {"JobReadiness", TrainingService::JobReadiness},
        {"EnglishLanguageWithTraining", TrainingService::EnglishLanguageWithTraining},
        {"IncumbentWorker", TrainingService::IncumbentWorker},
    };
    auto it = table.find(s);
    if (it == table.end()) {
        return std::nullopt;
    }
    return it->second;
}

struct Date {
    int year = 0;
    int month = 1; // 1..12
    int day = 1;   // 1..31

    bool operator==(const Date&) const = default;
};

inline std::optional<Date> parse_date(const std::string& s) {
    // Expects YYYY-MM-DD.
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
        return std::nullopt;
    }
    Date d;
    try {
        d.year = std::stoi(s.substr(0, 4));
        d.month = std::stoi(s.substr(5, 2));
        d.day = std::stoi(s.substr(8, 2));
    } catch (...) {
        return std::nullopt;
    }
    if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31) {
        return std::nullopt;
    }
    return d;
}

inline std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", d.year, d.month, d.day);
    return buf;
}

inline Date add_months(Date d, int months) {
    int m = d.month - 1 + months;
    int y = d.year + m / 12;
    m %= 12;
    if (m < 0) {
        m += 12;
        y -= 1;
    }
    d.year = y;
    d.month = m + 1;
    if (d.day > 28) {
        d.day = 28; // clamp so the result is always a valid date
    }
    return d;
}

// Calendar year containing the quarter shifted `quarters` from the anchor.
inline int quarter_year(const Date& anchor, int quarters) {
    return add_months(anchor, 3 * quarters).year;
}

// One observed occupation/industry code with its quarter offset relative
// to the participation window.
struct CodeObservation {
    std::string code;
    int quarter = 0;
};

// Pre-period quarters run -3..-1 relative to entry; post-period 1..4
// relative to exit.
inline constexpr std::array<int, 3> kPreQuarters{-3, -2, -1};
inline constexpr std::array<int, 4> kPostQuarters{1, 2, 3, 4};

struct ParticipationRecord {
    std::string record_id;
    int program_year = 0;
    std::string state;
    std::string wdb_id;
    FundingStream funding_stream = FundingStream::Other;
    bool received_training = false;
    TrainingService training_service = TrainingService::None;
    EmploymentStatus employment_status = EmploymentStatus::Other;
    bool reportable_individual = false;
    std::optional<Date> entry_date;
    std::optional<Date> exit_date;
    std::optional<double> age;
    std::optional<std::string> sex;
    std::optional<std::string> race_ethnicity;
    std::optional<std::string> education_level;
    std::optional<bool> low_income;

    std::array<std::optional<double>, 3> pre_wages;  // quarters -3, -2, -1
    std::array<std::optional<double>, 4> post_wages; // quarters +1 .. +4
    bool wages_are_real = false;                     // set once deflated
    std::optional<std::string> deflate_error;

    std::vector<CodeObservation> pre_occ_candidates;
    std::vector<CodeObservation> post_occ_candidates;
    std::vector<CodeObservation> pre_naics_candidates;
    std::vector<CodeObservation> post_naics_candidates;

    // Resolved canonical codes (subsectors are 3-digit NAICS).
    std::optional<std::string> pre_occ;
    std::optional<std::string> post_occ;
    std::optional<std::string> pre_subsector;
    std::optional<std::string> post_subsector;
};

struct RtiPair {
    double cognitive = 0.0;
    double manual_task = 0.0;
};

// Occupation-level routine task intensities plus the employment-share
// rollup to 3-digit subsectors.
struct TaskIntensityBook {
    std::map<std::string, RtiPair> occ_rti;
    // (soc, naics3) -> employment share, normalized so shares within each
    // subsector sum to 1.
    std::map<std::pair<std::string, std::string>, double> emp_shares;
    std::map<std::string, RtiPair> subsector_rti;

    bool has_occupation(const std::string& soc) const { return occ_rti.count(soc) > 0; }
    bool has_subsector(const std::string& naics3) const {
        return subsector_rti.count(naics3) > 0;
    }
};

// Share-weighted rollup of occupation RTI to subsectors. Shares are
// renormalized per subsector over the occupations that carry RTI values.
inline void build_subsector_rti(TaskIntensityBook& book) {
    std::map<std::string, double> totals;
    for (const auto& [key, share] : book.emp_shares) {
        if (book.occ_rti.count(key.first) > 0) {
            totals[key.second] += share;
        }
    }
    std::map<std::string, RtiPair> result;
    for (const auto& [key, share] : book.emp_shares) {
        auto occ = book.occ_rti.find(key.first);
        if (occ == book.occ_rti.end()) {
            continue;
        }
        const double total = totals[key.second];
        if (total <= 0.0) {
            continue;
        }
        const double w = share / total;
        auto& agg = result[key.second];
        agg.cognitive += w * occ->second.cognitive;
        agg.manual_task += w * occ->second.manual_task;
    }
    // Re-store normalized shares so downstream consumers see them sum to 1.
    std::map<std::pair<std::string, std::string>, double> normalized;
    for (const auto& [key, share] : book.emp_shares) {
        if (book.occ_rti.count(key.first) == 0) {
            continue;
        }
        const double total = totals[key.second];
        if (total > 0.0) {
            normalized[key] = share / total;
        }
    }
    book.emp_shares = std::move(normalized);
    book.subsector_rti = std::move(result);
}

struct CpiTable {
    std::map<int, double> values; // year -> annual CPI level
    int base_year = 2010;

    bool has_year(int year) const { return values.count(year) > 0; }

    double deflator(int year) const {
        auto base = values.find(base_year);
        auto y = values.find(year);
        if (base == values.end()) {
            throw std::runtime_error("cpi: base year missing");
        }
        if (y == values.end()) {
            throw std::runtime_error("cpi: year missing");
        }
        return base->second / y->second;
    }
};

inline std::string naics3(const std::string& code) {
    return code.size() > 3 ? code.substr(0, 3) : code;
}

} // namespace retrain
