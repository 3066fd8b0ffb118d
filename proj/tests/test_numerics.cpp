#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "semalign/errors.hpp"
#include "semalign/fft.hpp"
#include "semalign/gradcheck.hpp"
#include "semalign/ops.hpp"
#include "semalign/rng.hpp"

using namespace semalign;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, bool grad = true, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor<double>::from(std::move(shape), std::move(v), grad);
}

// Naive O(N^2) 2-D DFT used as an independent reference.
std::vector<std::complex<double>> direct_dft(const std::vector<double>& x, std::size_t H, std::size_t W) {
    std::vector<std::complex<double>> out(H * W);
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            std::complex<double> acc = 0.0;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t c = 0; c < W; ++c) {
                    const double angle = -2.0 * std::numbers::pi *
                                         (static_cast<double>(u * y) / H + static_cast<double>(v * c) / W);
                    acc += x[y * W + c] * std::complex<double>(std::cos(angle), std::sin(angle));
                }
            out[u * W + v] = acc;
        }
    return out;
}

}  // namespace

TEST_CASE("tensor construction checks value count") {
    CHECK_THROWS_AS(Tensor<float>::from({2, 3}, {1, 2, 3}), DimensionError);
    const auto t = Tensor<float>::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(shape_str(t.shape()) == "[2x3]");
    CHECK(Tensor<float>::scalar(4.5f).item() == 4.5f);
    CHECK_THROWS_AS(t.item(), DimensionError);
}

TEST_CASE("backward populates every reachable requires_grad tensor") {
    Rng rng(1);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto c = random_tensor({3, 2}, rng, false);
    auto loss = sum(mul(matmul(a, b), c));
    loss.backward();
    REQUIRE(a.has_grad());
    REQUIRE(b.has_grad());
    CHECK_FALSE(c.has_grad());
    CHECK(a.grad().size() == a.numel());
    CHECK(b.grad().size() == b.numel());
}

TEST_CASE("no-grad guard records no history") {
    Rng rng(2);
    auto a = random_tensor({2, 2}, rng);
    Tensor<double> out;
    {
        NoGradGuard guard;
        out = sum(a);
    }
    CHECK_FALSE(out.requires_grad());
    CHECK(grad_mode_enabled());
}

TEST_CASE("matmul identity and annihilation") {
    auto eye = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto v = Tensor<double>::from({3, 1}, {2.5, -1.0, 7.0});
    const auto out = matmul(eye, v);
    CHECK(out[0] == 2.5);
    CHECK(out[1] == -1.0);
    CHECK(out[2] == 7.0);

    auto zeros = Tensor<double>::zeros({1, 4});
    auto any = Tensor<double>::from({4, 1}, {3, -2, 9, 1e6});
    CHECK(matmul(zeros, any).item() == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor<float>::zeros({2, 3});
    auto b = Tensor<float>::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient of sum matches central differences") {
    Rng rng(3);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    const auto report = gradcheck([&] { return sum(matmul(a, b)); }, {{"a", a}, {"b", b}}, 1e-5, 1e-6);
    CHECK(report.max_rel_error() < 1e-6);
}

TEST_CASE("softmax examples") {
    auto uniform = softmax(Tensor<double>::from({3}, {0, 0, 0}));
    for (double v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    auto peaked = softmax(Tensor<double>::from({3}, {200, 0, 0}));
    CHECK(peaked[0] == doctest::Approx(1.0));
    CHECK(peaked[1] < 1e-80);

    auto q = softmax(Tensor<double>::from({3}, {1, 2, 3}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(std::abs(q[0] - std::exp(1.0) / z) < 1e-7);
    CHECK(std::abs(q[1] - std::exp(2.0) / z) < 1e-7);
    CHECK(std::abs(q[2] - std::exp(3.0) / z) < 1e-7);
}

TEST_CASE("softmax rejects non-positive temperature") {
    auto x = Tensor<double>::from({2}, {1, 2});
    CHECK_THROWS_AS(softmax(x, -1, 0.0), ParameterError);
    CHECK_THROWS_AS(softmax(x, -1, -0.5), ParameterError);
}

TEST_CASE("softmax temperature and axis") {
    auto x = Tensor<double>::from({2, 2}, {1, 3, 2, 0});
    auto cols = softmax(x, 0, 2.0);
    // column 0: exp(0.5), exp(1); column 1: exp(1.5), exp(0)
    CHECK(cols.at(0, 0) == doctest::Approx(std::exp(0.5) / (std::exp(0.5) + std::exp(1.0))));
    CHECK(cols.at(0, 1) + cols.at(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("cross entropy examples") {
    auto onehot = Tensor<double>::from({3}, {1, 0, 0});
    CHECK(cross_entropy(onehot, Tensor<double>::from({3}, {1, 0, 0})).item() == doctest::Approx(0.0));
    CHECK(cross_entropy(Tensor<double>::from({2}, {1, 0}), Tensor<double>::from({2}, {0.5, 0.5})).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const double soft = -0.7 * std::log(0.5) - 0.3 * std::log(0.5);
    CHECK(cross_entropy(Tensor<double>::from({2}, {0.7, 0.3}), Tensor<double>::from({2}, {0.5, 0.5})).item() ==
          doctest::Approx(soft).epsilon(1e-12));
    CHECK(soft == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("cross entropy clamps log of zero") {
    const double v =
        cross_entropy(Tensor<double>::from({2}, {1, 0}), Tensor<double>::from({2}, {0, 1})).item();
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(-std::log(kLogEps)));
}

TEST_CASE("cross entropy length mismatch") {
    CHECK_THROWS_AS(cross_entropy(Tensor<double>::from({2}, {1, 0}), Tensor<double>::from({3}, {1, 0, 0})),
                    DimensionError);
}

TEST_CASE("fft2 of a constant image is DC only") {
    const double c = 0.3;
    std::vector<double> x(8 * 16, c);
    const auto spec = fft2(x, 8, 16);
    CHECK(spec.amplitude(0) == doctest::Approx(8 * 16 * c));
    for (std::size_t i = 1; i < spec.size(); ++i) CHECK(spec.amplitude(i) < 1e-12);
}

TEST_CASE("fft2 round trip and Parseval on a random image") {
    Rng rng(4);
    const std::size_t H = 32, W = 32;
    std::vector<double> x(H * W);
    for (auto& v : x) v = rng.uniform();
    const auto spec = fft2(x, H, W);
    const auto back = ifft2_real(spec);
    double err = 0.0, energy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        err = std::max(err, std::abs(back[i] - x[i]));
        energy += x[i] * x[i];
    }
    CHECK(err < 1e-5);
    const double parseval = spec.energy() / static_cast<double>(H * W);
    CHECK(std::abs(parseval - energy) / energy < 1e-4);
}

TEST_CASE("fft2 matches a direct DFT at 8x8") {
    Rng rng(5);
    std::vector<double> x(64);
    for (auto& v : x) v = rng.normal();
    const auto fast = fft2(x, 8, 8);
    const auto slow = direct_dft(x, 8, 8);
    for (std::size_t i = 0; i < 64; ++i) {
        CHECK(std::abs(fast.at(i) - slow[i]) < 1e-10);
    }
}

TEST_CASE("single-frequency cosine puts its energy in one conjugate pair") {
    const std::size_t H = 8, W = 8, u0 = 1, v0 = 2;
    std::vector<double> x(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t c = 0; c < W; ++c)
            x[y * W + c] = std::cos(2.0 * std::numbers::pi * (static_cast<double>(u0 * y) / H +
                                                              static_cast<double>(v0 * c) / W));
    const auto spec = fft2(x, H, W);
    const auto oracle = direct_dft(x, H, W);
    const std::size_t bin = u0 * W + v0, pair = conjugate_bin(u0, v0, H, W);
    CHECK(pair == (H - u0) * W + (W - v0));
    double inside = 0.0, total = 0.0;
    for (std::size_t i = 0; i < H * W; ++i) {
        const double e = std::norm(oracle[i]);
        total += e;
        if (i == bin || i == pair) inside += e;
        CHECK(std::abs(spec.at(i) - oracle[i]) < 1e-10);
    }
    CHECK(inside / total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spec.amplitude(bin) == doctest::Approx(H * W / 2.0));
}

TEST_CASE("fft rejects non power-of-two extents") {
    std::vector<double> x(6 * 8, 0.0);
    CHECK_THROWS_AS(fft2(x, 6, 8), UnsupportedSizeError);
    std::vector<std::complex<double>> line(12);
    CHECK_THROWS_AS(fft1d(line, false), UnsupportedSizeError);
}

TEST_CASE("fft2 tensor overload agrees with the span overload") {
    Rng rng(6);
    std::vector<float> v(16 * 8);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    const auto t = Tensor<float>::from({16, 8}, v);
    const std::vector<double> d(v.begin(), v.end());
    const auto a = fft2(t);
    const auto b = fft2(d, 16, 8);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.at(i) - b.at(i)) < 1e-12);
}

TEST_CASE("gradcheck of a quadratic is exact") {
    Rng rng(7);
    auto theta = random_tensor({5}, rng);
    const auto report = gradcheck([&] { return affine(sum(mul(theta, theta)), 0.5); }, {{"theta", theta}});
    CHECK(report.max_rel_error() < 1e-9);
    // analytic gradient equals theta
    theta.zero_grad();
    affine(sum(mul(theta, theta)), 0.5).backward();
    for (std::size_t i = 0; i < 5; ++i) CHECK(theta.grad()[i] == doctest::Approx(theta[i]));
}

TEST_CASE("gradcheck on a constant loss reports zero") {
    Rng rng(8);
    auto theta = random_tensor({4}, rng);
    const auto constant = Tensor<double>::scalar(3.0);
    const auto report = gradcheck([&] { return add(constant, affine(sum(theta), 0.0)); }, {{"theta", theta}});
    REQUIRE(report.blocks.size() == 1);
    CHECK(report.blocks[0].max_abs_analytic == 0.0);
    CHECK(report.blocks[0].max_abs_numeric == 0.0);
    CHECK(report.passed());
}

TEST_CASE("every differentiable op passes gradcheck on random shapes") {
    Rng rng(9);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto bias = random_tensor({4}, rng);
    auto p = softmax(random_tensor({3, 4}, rng, false));
    auto pos = Tensor<double>::from({3, 4}, std::vector<double>(12, 0.0), true);
    for (auto& v : pos.mutable_data()) v = 0.2 + rng.uniform();
    const std::vector<std::size_t> idx{1, 3, 0};

    struct Case {
        const char* name;
        std::function<Tensor<double>()> f;
        ParamList<double> params;
    };
    const std::vector<Case> cases{
        {"add", [&] { return sum(mul(add(a, b), b)); }, {{"a", a}, {"b", b}}},
        {"sub", [&] { return sum(mul(sub(a, b), a)); }, {{"a", a}, {"b", b}}},
        {"affine", [&] { return sum(mul(affine(a, 1.7, -0.3), a)); }, {{"a", a}}},
        {"div_scalar", [&] { return sum(mul(div_scalar(a, 3.0), a)); }, {{"a", a}}},
        {"add_bias", [&] { return sum(mul(add_bias(a, bias), a)); }, {{"a", a}, {"bias", bias}}},
        {"mean", [&] { return mean(mul(a, b)); }, {{"a", a}, {"b", b}}},
        {"row_sum", [&] { return sum(mul(row_sum(mul(a, a)), row_sum(b))); }, {{"a", a}, {"b", b}}},
        {"relu", [&] { return sum(mul(relu(a), b)); }, {{"a", a}, {"b", b}}},
        {"softplus", [&] { return sum(mul(softplus(a), b)); }, {{"a", a}, {"b", b}}},
        {"exp", [&] { return sum(mul(exp(a), b)); }, {{"a", a}, {"b", b}}},
        {"log_clamped", [&] { return sum(mul(log_clamped(pos), b)); }, {{"pos", pos}, {"b", b}}},
        {"softmax", [&] { return sum(mul(softmax(a, 1, 0.7), b)); }, {{"a", a}, {"b", b}}},
        {"softmax axis 0", [&] { return sum(mul(softmax(a, 0), b)); }, {{"a", a}, {"b", b}}},
        {"cross_entropy", [&] { return sum(cross_entropy(softmax(b), softmax(a))); }, {{"a", a}, {"b", b}}},
        {"l2_normalize_rows", [&] { return sum(mul(l2_normalize_rows(a), b)); }, {{"a", a}, {"b", b}}},
        {"matmul/transpose", [&] { return sum(mul(matmul(a, w), matmul(b, w))); }, {{"a", a}, {"w", w}}},
        {"transpose", [&] { return sum(mul(transpose(a), transpose(mul(a, b)))); }, {{"a", a}, {"b", b}}},
        {"reshape", [&] { return sum(mul(reshape(a, {4, 3}), reshape(b, {4, 3}))); }, {{"a", a}, {"b", b}}},
        {"concat_rows", [&] { return sum(mul(concat_rows<double>({a, b}), concat_rows<double>({b, a}))); }, {{"a", a}, {"b", b}}},
        {"slice_rows", [&] { return sum(mul(slice_rows(a, 1, 3), slice_rows(b, 0, 2))); }, {{"a", a}, {"b", b}}},
        {"pick", [&] { return sum(mul(pick(a, idx), pick(b, idx))); }, {{"a", a}, {"b", b}}},
    };
    (void)p;
    for (const auto& c : cases) {
        CAPTURE(c.name);
        const auto report = gradcheck(c.f, c.params);
        CHECK(report.max_rel_error() < 1e-4);
    }
}

TEST_CASE("conv2d and max_pool2 pass gradcheck") {
    Rng rng(10);
    auto x = random_tensor({2, 2, 6, 6}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng, true, 0.5);
    auto bias = random_tensor({3}, rng);
    auto probe = random_tensor({2, 3, 3, 3}, rng, false);
    const auto report = gradcheck([&] { return sum(mul(max_pool2(conv2d(x, w, bias, 1)), probe)); },
                                  {{"x", x}, {"w", w}, {"bias", bias}});
    CHECK(report.max_rel_error() < 1e-4);
}

TEST_CASE("conv2d matches a direct loop") {
    Rng rng(11);
    auto x = random_tensor({1, 2, 4, 4}, rng, false);
    auto w = random_tensor({2, 2, 3, 3}, rng, false);
    auto bias = Tensor<double>::from({2}, {0.5, -1.0});
    const auto y = conv2d(x, w, bias, 1);
    for (std::size_t o = 0; o < 2; ++o)
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) {
                double acc = bias[o];
                for (std::size_t i = 0; i < 2; ++i)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = r + dy, xx = c + dx;
                            if (yy < 0 || yy >= 4 || xx < 0 || xx >= 4) continue;
                            acc += x[(i * 4 + yy) * 4 + xx] * w[((o * 2 + i) * 3 + (dy + 1)) * 3 + (dx + 1)];
                        }
                CHECK(y[(o * 4 + r) * 4 + c] == doctest::Approx(acc).epsilon(1e-12));
            }
}
