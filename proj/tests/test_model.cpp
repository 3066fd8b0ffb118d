#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "semalign/errors.hpp"
#include "semalign/gradcheck.hpp"
#include "semalign/model.hpp"
#include "semalign/ops.hpp"

using namespace semalign;

namespace {

ExtractorConfig toy_config() {
    ExtractorConfig cfg;
    cfg.in_channels = 1;
    cfg.height = 8;
    cfg.width = 8;
    cfg.widths = {4, 4};
    cfg.dim = 6;
    return cfg;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, bool grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor<double>::from(std::move(shape), std::move(v), grad);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("zero input gives zero features") {
    Rng rng(1);
    const FeatureExtractor<double> f(ExtractorConfig{}, rng);
    const auto h = f.extract(Tensor<double>::zeros({3, 32, 32}));
    REQUIRE(h.shape() == Shape{1, 64});
    for (double v : h.data()) CHECK(v == 0.0);
}

TEST_CASE("extract is deterministic") {
    Rng rng(2);
    const FeatureExtractor<double> f(toy_config(), rng);
    const auto x = random_tensor({2, 1, 8, 8}, rng);
    const auto a = f.extract(x);
    const auto b = f.extract(x);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    for (double v : a.data()) CHECK(std::isfinite(v));
}

TEST_CASE("extract rejects mismatched input") {
    Rng rng(3);
    const FeatureExtractor<double> f(toy_config(), rng);
    CHECK_THROWS_AS(f.extract(Tensor<double>::zeros({1, 3, 8, 8})), DimensionError);
    CHECK_THROWS_AS(f.extract(Tensor<double>::zeros({1, 1, 16, 8})), DimensionError);
}

TEST_CASE("extractor config validation") {
    ExtractorConfig cfg;
    cfg.widths = {8, 8, 8, 8, 8, 8};  // 32 cannot be halved six times
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
    cfg = ExtractorConfig{};
    cfg.dim = 0;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("gradcheck through extract on an 8x8 single-channel toy") {
    Rng rng(4);
    const FeatureExtractor<double> f(toy_config(), rng);
    const auto x = random_tensor({2, 1, 8, 8}, rng);
    const auto probe = random_tensor({2, 6}, rng);
    const auto report = gradcheck([&] { return sum(mul(f.extract(x), probe)); }, f.parameters());
    CHECK(report.max_rel_error() < 1e-4);
}

TEST_CASE("vanishing sigma collapses train mode to eval mode") {
    Rng rng(5);
    StochasticClassifier<double> clf(4, 8, rng);
    for (auto& r : clf.rho().mutable_data()) r = -60.0;
    const auto h = random_tensor({3, 8}, rng);
    Rng draw(6);
    const auto train = clf.classify(h, ClassifierMode::train, &draw);
    const auto eval = clf.classify(h, ClassifierMode::eval, nullptr);
    CHECK(max_abs_diff(train, eval) < 1e-12);
}

TEST_CASE("features aligned with a class mean select that class") {
    Rng rng(7);
    StochasticClassifier<double> clf(3, 3, rng);
    auto mu = clf.mu();
    const std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::copy(eye.begin(), eye.end(), mu.mutable_data().begin());
    const auto logits = clf.classify(Tensor<double>::from({1, 3}, {2.0, 0.0, 0.0}), ClassifierMode::eval, nullptr);
    CHECK(logits[0] == doctest::Approx(10.0));
    CHECK(logits[1] == doctest::Approx(0.0));
    CHECK(logits[0] > logits[2]);
}

TEST_CASE("train mode draws differ") {
    Rng rng(8);
    const StochasticClassifier<double> clf(4, 8, rng, 10.0, -1.0);
    const auto h = random_tensor({2, 8}, rng);
    Rng draw(9);
    const auto first = clf.classify(h, ClassifierMode::train, &draw);
    for (int i = 0; i < 10; ++i) {
        const auto next = clf.classify(h, ClassifierMode::train, &draw);
        CHECK(max_abs_diff(first, next) > 0.0);
    }
}

TEST_CASE("eval mode is repeatable and needs no rng") {
    Rng rng(10);
    const StochasticClassifier<double> clf(5, 8, rng);
    const auto h = random_tensor({4, 8}, rng);
    const auto a = clf.classify(h, ClassifierMode::eval, nullptr);
    const auto b = clf.classify(h, ClassifierMode::eval, nullptr);
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK_THROWS_AS(clf.classify(h, ClassifierMode::train, nullptr), ParameterError);
}

TEST_CASE("cosine logits ignore positive rescaling of h") {
    Rng rng(11);
    const StochasticClassifier<double> clf(5, 8, rng);
    const auto h = random_tensor({6, 8}, rng);
    for (double lambda : {0.01, 0.5, 3.0, 250.0}) {
        const auto scaled = clf.classify(affine(h, lambda), ClassifierMode::eval, nullptr);
        const auto base = clf.classify(h, ClassifierMode::eval, nullptr);
        CHECK(max_abs_diff(scaled, base) < 1e-6);
    }
}

TEST_CASE("logits are bounded by the scale") {
    Rng rng(12);
    const StochasticClassifier<double> clf(5, 8, rng, 10.0, -1.0);
    const auto h = random_tensor({6, 8}, rng);
    Rng draw(13);
    const auto logits = clf.classify(h, ClassifierMode::train, &draw);
    for (double v : logits.data()) CHECK(std::abs(v) <= 10.0 + 1e-9);
}

TEST_CASE("train-mode gradients reach mu, rho and the extractor") {
    Rng rng(14);
    const FeatureExtractor<double> f(toy_config(), rng);
    const StochasticClassifier<double> clf(3, 6, rng, 10.0, -1.0);
    const auto x = random_tensor({2, 1, 8, 8}, rng);
    Rng draw(15);
    const auto logits = clf.classify(f.extract(x), ClassifierMode::train, &draw);
    sum(mul(logits, logits)).backward();
    for (const auto& p : clf.parameters()) CHECK(p.tensor.has_grad());
    for (const auto& p : f.parameters()) CHECK(p.tensor.has_grad());
}

TEST_CASE("classify_with_noise passes gradcheck") {
    Rng rng(16);
    StochasticClassifier<double> clf(3, 5, rng);
    for (auto& r : clf.rho().mutable_data()) r = -0.5 + 0.2 * rng.normal();
    auto h = random_tensor({2, 5}, rng, true);
    const auto noise = random_tensor({2, 3, 5}, rng);
    const auto probe = random_tensor({2, 3}, rng);
    auto params = clf.parameters();
    params.push_back({"h", h});
    const auto report = gradcheck([&] { return sum(mul(clf.classify_with_noise(h, noise), probe)); }, params);
    CHECK(report.max_rel_error() < 1e-4);
}

TEST_CASE("classifier rejects bad inputs") {
    Rng rng(17);
    CHECK_THROWS_AS(StochasticClassifier<double>(3, 4, rng, -1.0), ParameterError);
    const StochasticClassifier<double> clf(3, 4, rng);
    CHECK_THROWS_AS(clf.classify(Tensor<double>::zeros({2, 5}), ClassifierMode::eval, nullptr), DimensionError);
}

TEST_CASE("checkpoint round trip") {
    Rng rng(18);
    ExtractorConfig cfg;
    cfg.widths = {4};
    cfg.height = 8;
    cfg.width = 8;
    cfg.dim = 4;
    const FeatureExtractor<float> a(cfg, rng);
    const FeatureExtractor<float> b(cfg, rng);
    const auto dir = std::filesystem::temp_directory_path() / "semalign_test_ckpt";
    std::filesystem::remove_all(dir);
    save_checkpoint(a.parameters(), dir);
    load_checkpoint(b.parameters(), dir);
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
    }

    ExtractorConfig other = cfg;
    other.widths = {6};
    const FeatureExtractor<float> c(other, rng);
    CHECK_THROWS_AS(load_checkpoint(c.parameters(), dir), FormatError);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_checkpoint(a.parameters(), dir), IoError);
}
