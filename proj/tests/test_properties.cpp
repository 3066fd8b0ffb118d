// Randomized invariants that cut across modules.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "semalign/augment.hpp"
#include "semalign/dataio.hpp"
#include "semalign/metrics.hpp"
#include "semalign/model.hpp"
#include "semalign/objectives.hpp"
#include "semalign/ops.hpp"

using namespace semalign;

namespace {

Image random_image(Rng& rng, std::size_t c = 3, std::size_t h = 16, std::size_t w = 16) {
    Image x(c, h, w);
    for (auto& v : x.pixels) v = static_cast<float>(rng.uniform());
    return x;
}

bool in_unit_range(const Image& x) {
    return std::all_of(x.pixels.begin(), x.pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

Tensor<double> random_matrix(std::size_t m, std::size_t n, Rng& rng, double scale) {
    std::vector<double> v(m * n);
    for (auto& x : v) x = scale * rng.normal();
    return Tensor<double>::from({m, n}, v);
}

}  // namespace

TEST_CASE("softmax rows are simplex points") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + rng.index(6), n = 2 + rng.index(8);
        const double temperature = rng.uniform(0.05, 3.0);
        const auto q = softmax(random_matrix(m, n, rng, 20.0), 1, temperature);
        for (std::size_t r = 0; r < m; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                CHECK(q.at(r, c) >= 0.0);
                CHECK(q.at(r, c) <= 1.0);
                s += q.at(r, c);
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("pseudo-labels and mask follow the weak distribution") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t B = 1 + rng.index(8), C = 2 + rng.index(6);
        const double tau = rng.uniform(0.2, 1.0);
        const auto q_w = softmax(random_matrix(B, C, rng, 3.0), 1);
        const auto q_s = softmax(random_matrix(B, C, rng, 3.0), 1);
        const auto d = make_distributions(q_w, q_s, Tensor<double>(), tau, 0.07);
        REQUIRE(d.batch() == B);
        std::size_t passed = 0;
        for (std::size_t b = 0; b < B; ++b) {
            CHECK(d.pseudo_labels[b] < C);
            double mx = 0.0;
            for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, q_w.at(b, c));
            CHECK(q_w.at(b, d.pseudo_labels[b]) == mx);
            CHECK((d.mask[b] == 0.0 || d.mask[b] == 1.0));
            CHECK((d.mask[b] == 1.0) == (mx >= tau));
            passed += d.mask[b] == 1.0;
        }
        CHECK(d.passed() == passed);
    }
}

TEST_CASE("masked losses are exactly zero when no sample passes") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t B = 1 + rng.index(6), C = 3 + rng.index(4);
        const auto q_w = softmax(random_matrix(B, C, rng, 1.0), 1);
        const auto q_s = softmax(random_matrix(B, C, rng, 1.0), 1);
        const auto z = random_matrix(B, C, rng, 0.3);
        const auto d = make_distributions(q_w, q_s, z, 1.0, 0.07);
        REQUIRE(d.passed() == 0);
        CHECK(unsupervised_loss(d).item() == 0.0);
        CHECK(semantic_alignment_loss(d).item() == 0.0);
        CHECK(contrast_loss(z, d.pseudo_labels, std::span<const double>(d.mask)).item() == 0.0);
        CHECK(eml_loss(d).item() == 0.0);
        CHECK(anl_loss(d, 0.99).item() >= 0.0);
    }
}

TEST_CASE("every augmentation keeps shape and the unit range") {
    Rng rng(4);
    AugConfig cfg;
    cfg.p_fourier = 1.0;
    cfg.p_texture = 1.0;
    AmplitudeBank bank(8);
    for (int trial = 0; trial < 30; ++trial) {
        const auto x = random_image(rng);
        bank.push(random_image(rng));
        std::vector<Image> outputs{weak(x, rng),
                                   phase_only(x),
                                   amp_swap(x, bank.sample(rng)),
                                   texture_reduce(x, cfg),
                                   quantize(x, 2 + rng.index(14)),
                                   strong(x, bank, cfg, rng),
                                   strong(x, AmplitudeBank(4), cfg, rng)};
        for (std::size_t op = 0; op < kStrongOpCount; ++op) {
            outputs.push_back(apply_strong_op(x, static_cast<StrongOp>(op), rng.uniform(), rng.bernoulli(0.5) ? 1 : -1));
        }
        for (const auto& y : outputs) {
            CHECK(y.same_shape(x));
            CHECK(in_unit_range(y));
        }
    }
}

TEST_CASE("strong pipeline is a function of image, bank and rng state") {
    Rng rng(5);
    AugConfig cfg;
    cfg.p_fourier = 0.7;
    cfg.p_texture = 0.5;
    AmplitudeBank bank(6);
    for (int i = 0; i < 6; ++i) bank.push(random_image(rng));
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_image(rng);
        const std::uint64_t seed = rng.next();
        Rng a(seed), b(seed);
        CHECK(strong(x, bank, cfg, a).pixels == strong(x, bank, cfg, b).pixels);
        CHECK(a.next() == b.next());
    }
}

TEST_CASE("amplitude bank stays within capacity with non-negative spectra") {
    Rng rng(6);
    const std::size_t capacity = 1 + rng.index(5);
    AmplitudeBank bank(capacity);
    for (int i = 0; i < 20; ++i) {
        bank.push(random_image(rng, 1, 8, 8));
        CHECK(bank.size() <= capacity);
    }
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto& v = bank.at(i).values;
        CHECK(std::all_of(v.begin(), v.end(), [](double a) { return a >= 0.0; }));
    }
}

TEST_CASE("edu equals accuracy times retention and never exceeds retention") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.index(40), C = 2 + rng.index(5);
        const double tau = rng.uniform(0.3, 0.99);
        std::vector<PLRecord> records;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<float> q(C);
            float s = 0.0f;
            for (auto& v : q) s += (v = static_cast<float>(std::exp(2.0 * rng.normal())));
            for (auto& v : q) v /= s;
            records.push_back(make_pl_record(i, rng.index(3), 1, q, tau, rng.index(C)));
        }
        const double ret = pl_retention(records, n);
        const double e = edu(records, n);
        CHECK(e >= 0.0);
        CHECK(e <= ret);
        if (const auto acc = pl_accuracy(records)) {
            CHECK(e == doctest::Approx(*acc * ret).epsilon(1e-15));
        } else {
            CHECK(e == 0.0);
        }
    }
}

TEST_CASE("classifier argmax ignores positive rescaling of features") {
    Rng rng(8);
    StochasticClassifier<double> clf(5, 12, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const auto h = random_matrix(4, 12, rng, 1.0);
        const double lambda = std::exp(rng.uniform(-5.0, 5.0));
        std::vector<double> scaled(h.data().begin(), h.data().end());
        for (auto& v : scaled) v *= lambda;
        const auto a = clf.classify(h, ClassifierMode::eval, nullptr);
        const auto b = clf.classify(Tensor<double>::from({4, 12}, scaled), ClassifierMode::eval, nullptr);
        CHECK(argmax_rows(std::vector<float>(a.data().begin(), a.data().end()), 4, 5) ==
              argmax_rows(std::vector<float>(b.data().begin(), b.data().end()), 4, 5));
    }
}

TEST_CASE("splits partition every source domain") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        GenerateOptions o;
        o.classes = 3;
        o.domains = 4;
        o.per_class = 6;
        o.height = 16;
        o.width = 16;
        o.seed = seed;
        const auto ds = generate(o);
        for (const auto& d : ds.domains) {
            CHECK(std::all_of(d.images.begin(), d.images.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }));
            CHECK(std::all_of(d.labels.begin(), d.labels.end(), [&](auto y) { return y < ds.num_classes(); }));
        }
        const auto split = make_split(ds, {"photo", "sketch"}, 1 + seed % 3, seed);
        const auto pools = build_pools(ds, split);
        CHECK(pools.labeled.size() + pools.unlabeled.size() == 2 * 18);
        std::set<std::size_t> ids;
        for (const auto& r : pools.unlabeled) ids.insert(r.sample_id);
        CHECK(ids.size() == pools.unlabeled.size());
    }
}
