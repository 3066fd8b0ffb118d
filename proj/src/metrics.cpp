#include "semalign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "semalign/errors.hpp"

namespace semalign {

using nlohmann::json;

PLRecord make_pl_record(std::size_t sample_id, std::size_t domain, std::size_t epoch,
                        std::span<const float> q_weak, double tau, std::size_t true_label) {
    if (q_weak.empty()) throw DimensionError("make_pl_record: empty distribution");
    const auto it = std::max_element(q_weak.begin(), q_weak.end());
    PLRecord r;
    r.sample_id = sample_id;
    r.domain = domain;
    r.epoch = epoch;
    r.pl = static_cast<std::size_t>(it - q_weak.begin());
    r.confidence = *it;
    r.passed = r.confidence >= tau;
    r.true_label = true_label;
    return r;
}

std::optional<double> pl_accuracy(std::span<const PLRecord> records) {
    std::size_t passed = 0, correct = 0;
    for (const auto& r : records) {
        if (!r.passed) continue;
        ++passed;
        if (r.correct()) ++correct;
    }
    if (passed == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(passed);
}

double pl_retention(std::span<const PLRecord> records, std::size_t n_u) {
    if (n_u == 0) throw ParameterError("pl_retention: n_u must be >= 1");
    const auto passed = std::count_if(records.begin(), records.end(), [](const PLRecord& r) { return r.passed; });
    return static_cast<double>(passed) / static_cast<double>(n_u);
}

double edu(std::span<const PLRecord> records, std::size_t n_u) {
    if (n_u == 0) throw ParameterError("edu: n_u must be >= 1");
    const auto good = std::count_if(records.begin(), records.end(),
                                    [](const PLRecord& r) { return r.passed && r.correct(); });
    return static_cast<double>(good) / static_cast<double>(n_u);
}

std::map<std::size_t, double> edu_by_domain(std::span<const PLRecord> records) {
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> counts;  // domain -> (good, total)
    for (const auto& r : records) {
        auto& [good, total] = counts[r.domain];
        ++total;
        if (r.passed && r.correct()) ++good;
    }
    std::map<std::size_t, double> out;
    for (const auto& [domain, c] : counts) {
        out[domain] = static_cast<double>(c.first) / static_cast<double>(c.second);
    }
    return out;
}

namespace {

template <typename F>
std::optional<double> fdr_impl(std::span<const F> x, std::size_t n, std::size_t d,
                               std::span<const std::size_t> labels) {
    if (x.size() != n * d || labels.size() != n) {
        throw DimensionError("fdr: " + std::to_string(x.size()) + " values and " +
                             std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                             " x " + std::to_string(d) + " features");
    }
    std::map<std::size_t, std::pair<std::size_t, std::vector<double>>> classes;
    std::vector<double> global(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto& [count, sum] = classes[labels[i]];
        if (sum.empty()) sum.assign(d, 0.0);
        ++count;
        for (std::size_t k = 0; k < d; ++k) {
            sum[k] += x[i * d + k];
            global[k] += x[i * d + k];
        }
    }
    if (classes.size() < 2) return std::nullopt;
    for (auto& g : global) g /= static_cast<double>(n);
    for (auto& [label, c] : classes) {
        for (auto& v : c.second) v /= static_cast<double>(c.first);
    }
    double s_b = 0.0;
    for (const auto& [label, c] : classes) {
        double dist = 0.0;
        for (std::size_t k = 0; k < d; ++k) dist += (c.second[k] - global[k]) * (c.second[k] - global[k]);
        s_b += static_cast<double>(c.first) * dist;
    }
    double s_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& mu = classes[labels[i]].second;
        for (std::size_t k = 0; k < d; ++k) {
            const double e = x[i * d + k] - mu[k];
            s_w += e * e;
        }
    }
    s_w = std::max(s_w, 1e-9);
    if (s_b <= 0.0) return kFdrZeroRatio;
    return std::log(s_b / s_w);
}

}  // namespace

std::optional<double> fdr(std::span<const double> features, std::size_t n, std::size_t d,
                          std::span<const std::size_t> labels) {
    return fdr_impl(features, n, d, labels);
}

std::optional<double> fdr(std::span<const float> features, std::size_t n, std::size_t d,
                          std::span<const std::size_t> labels) {
    return fdr_impl(features, n, d, labels);
}

std::vector<std::size_t> argmax_rows(std::span<const float> scores, std::size_t n, std::size_t C) {
    if (scores.size() != n * C || C == 0) {
        throw DimensionError("argmax_rows: " + std::to_string(scores.size()) + " values for " +
                             std::to_string(n) + " x " + std::to_string(C));
    }
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = scores.subspan(i * C, C);
        out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

double top1_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
    if (predictions.size() != labels.size()) {
        throw DimensionError("top1_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                             std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw InputError("top1_accuracy: no samples");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// --- reports ---------------------------------------------------------------

namespace {

bool usable(double v) { return std::isfinite(v) && v != kFdrZeroRatio; }

std::vector<double> row_values(const EpochReport& e) {
    const auto& l = e.losses;
    return {static_cast<double>(e.epoch), e.lr, l.supervised, l.unsupervised, l.alignment, l.orthogonality,
            l.contrast, l.eml, l.anl, l.total, e.pl_acc, e.retention, e.edu, e.fdr, e.target_acc};
}

EpochReport from_row(const std::vector<double>& v) {
    EpochReport e;
    e.epoch = static_cast<std::size_t>(v[0]);
    e.lr = v[1];
    e.losses = {v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
    e.pl_acc = v[10];
    e.retention = v[11];
    e.edu = v[12];
    e.fdr = v[13];
    e.target_acc = v[14];
    return e;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json num(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double num(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

EpochReport RunReport::summary() const {
    EpochReport s;
    if (epochs.empty()) return s;
    const std::size_t cols = report_columns().size();
    std::vector<double> acc(cols, 0.0);
    std::vector<std::size_t> count(cols, 0);
    for (const auto& e : epochs) {
        const auto v = row_values(e);
        for (std::size_t c = 1; c < cols; ++c) {
            if (usable(v[c])) {
                acc[c] += v[c];
                ++count[c];
            }
        }
    }
    std::vector<double> mean(cols, std::numeric_limits<double>::quiet_NaN());
    mean[0] = 0.0;
    for (std::size_t c = 1; c < cols; ++c) {
        if (count[c]) mean[c] = acc[c] / static_cast<double>(count[c]);
    }
    s = from_row(mean);
    s.target_acc = epochs.back().target_acc;
    std::map<std::string, std::pair<double, std::size_t>> dom;
    for (const auto& e : epochs)
        for (const auto& [name, v] : e.edu_by_domain) {
            dom[name].first += v;
            ++dom[name].second;
        }
    for (const auto& [name, p] : dom) s.edu_by_domain[name] = p.first / static_cast<double>(p.second);
    return s;
}

const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols{"epoch", "lr",    "L_s",    "L_u",       "L_SA",
                                               "L_orth", "L_con", "L_EML",  "L_ANL",     "total",
                                               "pl_acc", "retention", "edu", "fdr", "target_acc"};
    return cols;
}

double ReportTable::value(std::size_t row, const std::string& column) const {
    const auto it = std::find(columns.begin(), columns.end(), column);
    if (it == columns.end()) throw InputError("report: no column '" + column + "'");
    return rows.at(row).at(static_cast<std::size_t>(it - columns.begin()));
}

ReportTable report_table(const RunReport& report) {
    ReportTable t;
    t.columns = report_columns();
    for (const auto& e : report.epochs) t.rows.push_back(row_values(e));
    t.rows.push_back(row_values(report.summary()));
    return t;
}

std::string report_csv(const RunReport& report) {
    const auto table = report_table(report);
    std::ostringstream os;
    for (std::size_t c = 0; c < table.columns.size(); ++c) os << (c ? "," : "") << table.columns[c];
    os << '\n';
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const bool summary = r + 1 == table.rows.size();
        for (std::size_t c = 0; c < table.columns.size(); ++c) {
            if (c) os << ',';
            if (c == 0) {
                os << (summary ? std::string("summary") : std::to_string(static_cast<std::size_t>(table.rows[r][0])));
            } else {
                os << fmt(table.rows[r][c]);
            }
        }
        os << '\n';
    }
    return os.str();
}

ReportTable parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    ReportTable t;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream ls(s);
        while (std::getline(ls, cell, ',')) out.push_back(cell);
        return out;
    };
    if (!std::getline(in, line)) throw FormatError("report.csv: empty");
    t.columns = split(line);
    if (t.columns != report_columns()) throw FormatError("report.csv: unexpected header '" + line + "'");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != t.columns.size()) {
            throw FormatError("report.csv line " + std::to_string(lineno) + ": expected " +
                              std::to_string(t.columns.size()) + " cells");
        }
        std::vector<double> row;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c == 0 && cells[c] == "summary") {
                row.push_back(0.0);
                continue;
            }
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cells[c], &used));
                if (used != cells[c].size()) throw std::invalid_argument(cells[c]);
            } catch (const std::exception&) {
                throw FormatError("report.csv line " + std::to_string(lineno) + ": bad number '" + cells[c] + "'");
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

namespace {

json epoch_json(const EpochReport& e) {
    json j;
    const auto v = row_values(e);
    const auto& cols = report_columns();
    j["epoch"] = e.epoch;
    for (std::size_t c = 1; c < cols.size(); ++c) j[cols[c]] = num(v[c]);
    j["edu_by_domain"] = e.edu_by_domain;
    return j;
}

EpochReport epoch_from_json(const json& j) {
    const auto& cols = report_columns();
    std::vector<double> v(cols.size());
    v[0] = static_cast<double>(j.at("epoch").get<std::size_t>());
    for (std::size_t c = 1; c < cols.size(); ++c) v[c] = num(j.at(cols[c]));
    auto e = from_row(v);
    if (j.contains("edu_by_domain")) e.edu_by_domain = j["edu_by_domain"].get<std::map<std::string, double>>();
    return e;
}

}  // namespace

std::string report_json(const RunReport& report) {
    json j;
    j["target"] = report.target;
    j["sources"] = report.sources;
    j["seed"] = report.seed;
    j["ablation"] = report.ablation;
    j["columns"] = report_columns();
    j["epochs"] = json::array();
    for (const auto& e : report.epochs) j["epochs"].push_back(epoch_json(e));
    j["summary"] = epoch_json(report.summary());
    j["prototype_cos_raw"] = num(report.prototype_cos_raw);
    j["prototype_cos_refined"] = num(report.prototype_cos_refined);
    return j.dump(2) + "\n";
}

RunReport parse_report_json(const std::string& text) {
    try {
        const auto j = json::parse(text);
        RunReport r;
        r.target = j.at("target").get<std::string>();
        r.sources = j.at("sources").get<std::vector<std::string>>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.ablation = j.value("ablation", "");
        for (const auto& e : j.at("epochs")) r.epochs.push_back(epoch_from_json(e));
        r.prototype_cos_raw = num(j.value("prototype_cos_raw", json(nullptr)));
        r.prototype_cos_refined = num(j.value("prototype_cos_refined", json(nullptr)));
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("report.json: ") + e.what());
    }
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

}  // namespace

void write_report(const RunReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_text(dir / "report.json", report_json(report));
    write_text(dir / "report.csv", report_csv(report));
}

RunReport read_report(const std::filesystem::path& run_dir) {
    const auto path = std::filesystem::is_directory(run_dir) ? run_dir / "report.json" : run_dir;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_report_json(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<ColumnStats> aggregate(std::span<const RunReport> runs) {
    const auto& cols = report_columns();
    std::vector<std::vector<double>> values(cols.size());
    for (const auto& r : runs) {
        auto v = row_values(r.summary());
        for (std::size_t c = 1; c < cols.size(); ++c)
            if (usable(v[c])) values[c].push_back(v[c]);
    }
    std::vector<ColumnStats> out;
    for (std::size_t c = 1; c < cols.size(); ++c) {
        ColumnStats s;
        s.column = cols[c];
        s.count = values[c].size();
        if (s.count) {
            double sum = 0.0;
            for (double v : values[c]) sum += v;
            s.mean = sum / static_cast<double>(s.count);
            if (s.count > 1) {
                double ss = 0.0;
                for (double v : values[c]) ss += (v - s.mean) * (v - s.mean);
                s.stddev = std::sqrt(ss / static_cast<double>(s.count - 1));
            }
        } else {
            s.mean = std::numeric_limits<double>::quiet_NaN();
        }
        out.push_back(s);
    }
    return out;
}

std::vector<ColumnDelta> compare(std::span<const RunReport> a, std::span<const RunReport> b) {
    const auto sa = aggregate(a);
    const auto sb = aggregate(b);
    std::vector<ColumnDelta> out;
    for (std::size_t i = 0; i < sa.size(); ++i) out.push_back({sa[i].column, sa[i], sb[i], sb[i].mean - sa[i].mean});
    return out;
}

}  // namespace semalign
