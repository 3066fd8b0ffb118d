#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semalign/objectives.hpp"

namespace semalign {

/// One pseudo-label observation of an unlabeled sample at one epoch.
struct PLRecord {
    std::size_t sample_id = 0;
    std::size_t domain = 0;
    std::size_t epoch = 0;
    std::size_t pl = 0;
    double confidence = 0.0;
    bool passed = false;
    std::size_t true_label = 0;

    bool correct() const { return pl == true_label; }
};

/// Builds a record; `passed` is confidence >= tau.
PLRecord make_pl_record(std::size_t sample_id, std::size_t domain, std::size_t epoch,
                        std::span<const float> q_weak, double tau, std::size_t true_label);

/// Correct share of passed records; empty when nothing passed.
std::optional<double> pl_accuracy(std::span<const PLRecord> records);
/// #passed / n_u.
double pl_retention(std::span<const PLRecord> records, std::size_t n_u);
/// #(passed and correct) / n_u.
double edu(std::span<const PLRecord> records, std::size_t n_u);
/// EDU computed separately over the records of each domain id.
std::map<std::size_t, double> edu_by_domain(std::span<const PLRecord> records);

/// Returned by fdr() when the between-class scatter vanishes (log 0).
inline constexpr double kFdrZeroRatio = -std::numeric_limits<double>::max();

/// Natural log of trace(S_b) / trace(S_w) for an n x d row-major feature
/// matrix. Empty when fewer than two classes are present.
std::optional<double> fdr(std::span<const double> features, std::size_t n, std::size_t d,
                          std::span<const std::size_t> labels);
std::optional<double> fdr(std::span<const float> features, std::size_t n, std::size_t d,
                          std::span<const std::size_t> labels);

/// Row-wise argmax of an n x C score matrix.
std::vector<std::size_t> argmax_rows(std::span<const float> scores, std::size_t n, std::size_t C);
/// Fraction of predictions equal to the labels.
double top1_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

struct EpochReport {
    std::size_t epoch = 0;
    double lr = 0.0;
    LossValues losses;
    double pl_acc = std::numeric_limits<double>::quiet_NaN();  // NaN: nothing passed
    double retention = 0.0;
    double edu = 0.0;
    double fdr = std::numeric_limits<double>::quiet_NaN();  // NaN: undefined
    double target_acc = 0.0;
    std::map<std::string, double> edu_by_domain;
};

struct RunReport {
    std::string target;
    std::vector<std::string> sources;
    std::uint64_t seed = 0;
    std::string ablation;  // disabled components, comma separated
    std::vector<EpochReport> epochs;
    double prototype_cos_raw = std::numeric_limits<double>::quiet_NaN();
    double prototype_cos_refined = std::numeric_limits<double>::quiet_NaN();

    /// Mean of each column over the epochs, except target_acc, which is the
    /// last epoch's. NaN entries are skipped.
    EpochReport summary() const;
};

/// Fixed column order of report.csv.
const std::vector<std::string>& report_columns();

/// Numeric rows as written to report.csv; the last row is the summary, with
/// epoch 0.
struct ReportTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    double value(std::size_t row, const std::string& column) const;
};

ReportTable report_table(const RunReport& report);
std::string report_csv(const RunReport& report);
ReportTable parse_report_csv(const std::string& text);

std::string report_json(const RunReport& report);
RunReport parse_report_json(const std::string& text);

void write_report(const RunReport& report, const std::filesystem::path& dir);
RunReport read_report(const std::filesystem::path& run_dir);

/// Mean and sample standard deviation of one summary column over runs.
struct ColumnStats {
    std::string column;
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

std::vector<ColumnStats> aggregate(std::span<const RunReport> runs);

struct ColumnDelta {
    std::string column;
    ColumnStats a, b;
    double delta = 0.0;  // b.mean - a.mean
};

std::vector<ColumnDelta> compare(std::span<const RunReport> a, std::span<const RunReport> b);

}  // namespace semalign
