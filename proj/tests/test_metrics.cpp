#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "semalign/errors.hpp"
#include "semalign/metrics.hpp"
#include "semalign/rng.hpp"

using namespace semalign;

namespace {

PLRecord rec(bool passed, bool correct, std::size_t domain = 0) {
    PLRecord r;
    r.passed = passed;
    r.pl = 1;
    r.true_label = correct ? 1 : 2;
    r.domain = domain;
    r.confidence = passed ? 0.99 : 0.5;
    return r;
}

// Direct two-loop scatter sums.
double fdr_oracle(const std::vector<double>& x, std::size_t n, std::size_t d, const std::vector<std::size_t>& y) {
    const std::size_t C = *std::max_element(y.begin(), y.end()) + 1;
    std::vector<double> global(d, 0.0);
    std::vector<std::vector<double>> means(C, std::vector<double>(d, 0.0));
    std::vector<double> counts(C, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        counts[y[i]] += 1.0;
        for (std::size_t k = 0; k < d; ++k) {
            global[k] += x[i * d + k] / static_cast<double>(n);
            means[y[i]][k] += x[i * d + k];
        }
    }
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < d; ++k) means[c][k] /= counts[c];
    double sb = 0.0, sw = 0.0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < d; ++k) sb += counts[c] * (means[c][k] - global[k]) * (means[c][k] - global[k]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = x[i * d + k] - means[y[i]][k];
            sw += diff * diff;
        }
    return std::log(sb / std::max(sw, 1e-9));
}

RunReport sample_report(std::size_t epochs) {
    RunReport r;
    r.target = "sketch";
    r.sources = {"photo", "art", "cartoon"};
    r.seed = 4;
    r.ablation = "out";
    r.prototype_cos_raw = 0.12345678901234567;
    r.prototype_cos_refined = 0.1;
    Rng rng(5);
    for (std::size_t e = 1; e <= epochs; ++e) {
        EpochReport row;
        row.epoch = e;
        row.lr = 0.003 / static_cast<double>(e);
        row.losses.supervised = rng.uniform();
        row.losses.unsupervised = rng.uniform();
        row.losses.alignment = rng.uniform();
        row.losses.orthogonality = rng.uniform() * 1e-7;
        row.losses.contrast = rng.uniform();
        row.losses.eml = rng.uniform();
        row.losses.anl = rng.uniform();
        row.losses.total = rng.uniform() * 5;
        if (e > 2) row.pl_acc = rng.uniform();
        row.retention = rng.uniform();
        row.edu = rng.uniform() / 3.0;
        row.fdr = e == 1 ? kFdrZeroRatio : -rng.uniform();
        row.target_acc = rng.uniform();
        row.edu_by_domain = {{"photo", 0.1}, {"art", 0.2 + static_cast<double>(e)}};
        r.epochs.push_back(row);
    }
    return r;
}

bool same(double a, double b) {
    return (std::isnan(a) && std::isnan(b)) || std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a));
}

}  // namespace

TEST_CASE("pl accuracy examples") {
    const std::vector<PLRecord> four{rec(true, true), rec(true, true), rec(true, true), rec(true, false), rec(false, true)};
    CHECK(*pl_accuracy(four) == doctest::Approx(0.75));
    const std::vector<PLRecord> none{rec(false, true), rec(false, false)};
    CHECK_FALSE(pl_accuracy(none).has_value());
    const std::vector<PLRecord> all{rec(true, true), rec(true, true)};
    CHECK(*pl_accuracy(all) == 1.0);
    CHECK_FALSE(pl_accuracy({}).has_value());
}

TEST_CASE("edu examples") {
    std::vector<PLRecord> ten{rec(true, true), rec(true, true), rec(true, true), rec(true, false)};
    for (int i = 0; i < 6; ++i) ten.push_back(rec(false, i % 2 == 0));
    CHECK(edu(ten, 10) == doctest::Approx(0.3));
    CHECK(pl_retention(ten, 10) == doctest::Approx(0.4));
    const std::vector<PLRecord> none{rec(false, true), rec(false, false)};
    CHECK(edu(none, 2) == 0.0);
    const std::vector<PLRecord> all{rec(true, true), rec(true, true)};
    CHECK(edu(all, 2) == 1.0);
    CHECK_THROWS_AS(edu(all, 0), ParameterError);
    CHECK_THROWS_AS(pl_retention(all, 0), ParameterError);
}

TEST_CASE("edu equals pl accuracy times retention") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<PLRecord> records;
        const std::size_t n = 1 + rng.index(50);
        for (std::size_t i = 0; i < n; ++i) records.push_back(rec(rng.bernoulli(0.6), rng.bernoulli(0.7)));
        const double e = edu(records, n), r = pl_retention(records, n);
        CHECK(e >= 0.0);
        CHECK(e <= r);
        if (const auto acc = pl_accuracy(records)) CHECK(std::abs(e - *acc * r) < 1e-15);
    }
}

TEST_CASE("pl records threshold on confidence") {
    const std::vector<float> q{0.02f, 0.96f, 0.02f};
    const auto r = make_pl_record(7, 1, 3, q, 0.95, 1);
    CHECK(r.pl == 1);
    CHECK(r.passed);
    CHECK(r.correct());
    CHECK(r.confidence == doctest::Approx(0.96));
    CHECK_FALSE(make_pl_record(7, 1, 3, q, 0.97, 1).passed);
}

TEST_CASE("edu by domain") {
    const std::vector<PLRecord> records{rec(true, true, 0), rec(false, true, 0), rec(true, true, 1), rec(true, true, 1),
                                        rec(true, false, 1), rec(true, true, 1)};
    const auto by = edu_by_domain(records);
    CHECK(by.at(0) == doctest::Approx(0.5));
    CHECK(by.at(1) == doctest::Approx(0.75));
}

TEST_CASE("fdr with identical class means hits the sentinel") {
    const std::vector<std::size_t> y{0, 0, 1, 1};
    // class means: (0, 0) for both
    const std::vector<double> xs{1, 0, -1, 0, -1, 0, 1, 0};
    CHECK(fdr(xs, 4, 2, y).value() == kFdrZeroRatio);
}

TEST_CASE("fdr of separated clusters matches the scatter oracle") {
    Rng rng(2);
    std::vector<double> x;
    std::vector<std::size_t> y;
    for (std::size_t c = 0; c < 3; ++c)
        for (int i = 0; i < 20; ++i) {
            for (std::size_t k = 0; k < 4; ++k) x.push_back((k == c ? 10.0 : 0.0) + 0.1 * rng.normal());
            y.push_back(c);
        }
    const double oracle = fdr_oracle(x, 60, 4, y);
    CHECK(oracle > 5.0);
    CHECK(std::abs(fdr(x, 60, 4, y).value() - oracle) < 1e-6);
}

TEST_CASE("fdr is invariant to sample order and undefined for one class") {
    Rng rng(3);
    std::vector<double> x(30 * 5);
    for (auto& v : x) v = rng.normal();
    std::vector<std::size_t> y(30);
    for (std::size_t i = 0; i < 30; ++i) y[i] = i % 3;
    const double base = fdr(x, 30, 5, y).value();
    CHECK(std::abs(base - fdr_oracle(x, 30, 5, y)) < 1e-9);

    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<double> px;
    std::vector<std::size_t> py;
    for (auto p : perm) {
        px.insert(px.end(), x.begin() + static_cast<long>(p * 5), x.begin() + static_cast<long>(p * 5 + 5));
        py.push_back(y[p]);
    }
    CHECK(fdr(px, 30, 5, py).value() == doctest::Approx(base).epsilon(1e-12));

    const std::vector<std::size_t> one(30, 2);
    CHECK_FALSE(fdr(x, 30, 5, one).has_value());

    const std::vector<float> xf(x.begin(), x.end());
    CHECK(fdr(xf, 30, 5, y).value() == doctest::Approx(base).epsilon(1e-5));
}

TEST_CASE("top-1 accuracy examples") {
    const std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2};
    CHECK(top1_accuracy(labels, labels) == 1.0);
    // constant scores -> class 0 everywhere -> 1/C on balanced labels
    const std::vector<float> flat(6 * 3, 0.5f);
    CHECK(top1_accuracy(argmax_rows(flat, 6, 3), labels) == doctest::Approx(1.0 / 3.0));

    Rng rng(4);
    std::vector<float> scores(6 * 3);
    for (auto& s : scores) s = static_cast<float>(rng.normal());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        const auto* row = scores.data() + i * 3;
        correct += static_cast<std::size_t>(std::max_element(row, row + 3) - row) == labels[i];
    }
    CHECK(top1_accuracy(argmax_rows(scores, 6, 3), labels) == doctest::Approx(correct / 6.0));
}

TEST_CASE("report columns are fixed") {
    CHECK(report_columns() == std::vector<std::string>{"epoch", "lr", "L_s", "L_u", "L_SA", "L_orth", "L_con", "L_EML",
                                                       "L_ANL", "total", "pl_acc", "retention", "edu", "fdr",
                                                       "target_acc"});
    const auto csv = report_csv(sample_report(2));
    CHECK(csv.substr(0, csv.find('\n')) ==
          "epoch,lr,L_s,L_u,L_SA,L_orth,L_con,L_EML,L_ANL,total,pl_acc,retention,edu,fdr,target_acc");
}

TEST_CASE("a 20-epoch report has 21 rows") {
    const auto report = sample_report(20);
    const auto table = report_table(report);
    CHECK(table.rows.size() == 21);
    CHECK(table.rows.back()[0] == 0.0);
    CHECK(parse_report_csv(report_csv(report)).rows.size() == 21);
}

TEST_CASE("summary row averages and keeps the final target accuracy") {
    const auto report = sample_report(4);
    const auto s = report.summary();
    double edu_mean = 0.0, pl_mean = 0.0;
    for (const auto& e : report.epochs) edu_mean += e.edu / 4.0;
    for (std::size_t i = 2; i < 4; ++i) pl_mean += report.epochs[i].pl_acc / 2.0;
    CHECK(s.edu == doctest::Approx(edu_mean));
    CHECK(s.pl_acc == doctest::Approx(pl_mean));
    CHECK(s.target_acc == report.epochs.back().target_acc);
    // the sentinel epoch is skipped
    double fdr_mean = 0.0;
    for (std::size_t i = 1; i < 4; ++i) fdr_mean += report.epochs[i].fdr / 3.0;
    CHECK(s.fdr == doctest::Approx(fdr_mean));
}

TEST_CASE("json and csv round trip within 1e-9") {
    const auto report = sample_report(5);
    const auto back = parse_report_json(report_json(report));
    CHECK(back.target == report.target);
    CHECK(back.sources == report.sources);
    CHECK(back.seed == report.seed);
    CHECK(back.ablation == report.ablation);
    CHECK(same(back.prototype_cos_raw, report.prototype_cos_raw));
    REQUIRE(back.epochs.size() == 5);
    CHECK(back.epochs[3].edu_by_domain == report.epochs[3].edu_by_domain);

    const auto a = report_table(report);
    const auto from_json = report_table(back);
    const auto from_csv = parse_report_csv(report_csv(back));
    REQUIRE(from_csv.rows.size() == a.rows.size());
    for (std::size_t r = 0; r < a.rows.size(); ++r)
        for (std::size_t c = 0; c < a.columns.size(); ++c) {
            CAPTURE(a.columns[c]);
            CHECK(same(a.rows[r][c], from_json.rows[r][c]));
            CHECK(same(a.rows[r][c], from_csv.rows[r][c]));
        }
    CHECK(std::isnan(from_csv.value(0, "pl_acc")));
    CHECK(from_csv.value(0, "fdr") == kFdrZeroRatio);
}

TEST_CASE("report files on disk") {
    const auto dir = std::filesystem::temp_directory_path() / "semalign_test_report";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto report = sample_report(3);
    write_report(report, dir);
    CHECK(std::filesystem::exists(dir / "report.csv"));
    const auto back = read_report(dir);
    CHECK(report_json(back) == report_json(report));
    CHECK(report_json(read_report(dir / "report.json")) == report_json(report));
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(read_report(dir), IoError);
    // a regular file where a directory is needed
    const auto blocker = std::filesystem::temp_directory_path() / "semalign_test_blocker";
    { std::ofstream(blocker) << "x"; }
    CHECK_THROWS_AS(write_report(report, blocker / "run"), IoError);
    std::filesystem::remove(blocker);
    CHECK_THROWS_AS(parse_report_csv("a,b\n1,2\n"), FormatError);
}

TEST_CASE("aggregate and compare across runs") {
    auto a1 = sample_report(2), a2 = sample_report(2), b1 = sample_report(2);
    a1.epochs.back().target_acc = 0.4;
    a2.epochs.back().target_acc = 0.6;
    b1.epochs.back().target_acc = 0.7;
    const std::vector<RunReport> a{a1, a2}, b{b1};
    const auto stats = aggregate(a);
    const auto it = std::find_if(stats.begin(), stats.end(), [](const auto& s) { return s.column == "target_acc"; });
    REQUIRE(it != stats.end());
    CHECK(it->mean == doctest::Approx(0.5));
    CHECK(it->stddev == doctest::Approx(std::sqrt(0.02)));
    CHECK(it->count == 2);
    const auto deltas = compare(a, b);
    const auto d = std::find_if(deltas.begin(), deltas.end(), [](const auto& s) { return s.column == "target_acc"; });
    REQUIRE(d != deltas.end());
    CHECK(d->delta == doctest::Approx(0.2));
}
