#include <functional>

#include "semalign/gradcheck.hpp"
#include "semalign/model.hpp"
#include "semalign/objectives.hpp"
#include "semalign/ops.hpp"
#include "semalign/prototypes.hpp"
#include "semalign/rng.hpp"

namespace semalign {

namespace {

constexpr std::size_t kClasses = 5;
constexpr std::size_t kDim = 16;
constexpr std::size_t kBatch = 4;
constexpr double kTau = 0.95;
constexpr double kTauAnl = 0.99;
constexpr double kTauSem = 0.07;
constexpr double kStep = 1e-5;

Tensor<double> gaussian(Shape shape, double scale, Rng& rng, bool requires_grad) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

struct Toy {
    StochasticClassifier<double> classifier;
    PrototypeSet<double> protos;
    Tensor<double> h_l, h_w, h_s;
    Tensor<double> noise_l, noise_w, noise_s;
    std::vector<std::size_t> labels;
    ParamList<double> params;
    // The semantic target is a stop-gradient input; finite differences must
    // see it as a constant too.
    Tensor<double> q_sem;

    explicit Toy(std::uint64_t seed) {
        Rng rng(seed);
        std::vector<std::string> names;
        for (std::size_t c = 0; c < kClasses; ++c) names.push_back("class" + std::to_string(c));
        protos = build_prototypes<double>(synth_embeddings(names, kDim, 4, seed), rng, 0.9);
        classifier = StochasticClassifier<double>(kClasses, kDim, rng);
        // rho away from the init value so the softplus path carries weight.
        for (auto& r : classifier.rho().mutable_data()) r = -1.0 + 0.3 * rng.normal();

        h_l = gaussian({kBatch, kDim}, 1.0, rng, true);
        // Three weak rows point at a class mean so they pass the threshold;
        // the last one is diffuse and does not.
        std::vector<double> w(kBatch * kDim);
        for (std::size_t b = 0; b < kBatch; ++b)
            for (std::size_t k = 0; k < kDim; ++k) {
                const double aligned = b + 1 < kBatch ? 4.0 * classifier.mu().at(b % kClasses, k) : 0.0;
                w[b * kDim + k] = aligned + 0.05 * rng.normal();
            }
        h_w = Tensor<double>::from({kBatch, kDim}, w, true);
        for (auto& x : w) x += 0.3 * rng.normal();
        h_s = Tensor<double>::from({kBatch, kDim}, w, true);

        noise_l = gaussian({kBatch, kClasses, kDim}, 1.0, rng, false);
        noise_w = gaussian({kBatch, kClasses, kDim}, 1.0, rng, false);
        noise_s = gaussian({kBatch, kClasses, kDim}, 1.0, rng, false);
        for (std::size_t b = 0; b < kBatch; ++b) labels.push_back(rng.index(kClasses));

        params = {{"h_l", h_l}, {"h_w", h_w}, {"h_s", h_s}};
        for (auto& p : classifier.parameters()) params.push_back(p);
        for (auto& p : protos.refiner.parameters()) params.push_back(p);
        NoGradGuard guard;
        q_sem = forward().dist.q_sem;
    }

    struct Forward {
        Tensor<double> q_l, k_star;
        BatchDistributions<double> dist;
    };

    Forward forward() const {
        Forward f;
        f.q_l = softmax(classifier.classify_with_noise(h_l, noise_l), 1);
        const auto q_w = softmax(classifier.classify_with_noise(h_w, noise_w), 1);
        const auto q_s = softmax(classifier.classify_with_noise(h_s, noise_s), 1);
        f.k_star = protos.refine();
        const auto z = matmul(l2_normalize_rows(h_w), transpose(f.k_star));
        f.dist = make_distributions(q_w, q_s, z, kTau, kTauSem);
        if (q_sem.defined()) f.dist.q_sem = q_sem;
        return f;
    }

    LossBreakdown<double> parts(const Forward& f) const {
        LossBreakdown<double> p;
        p.supervised = supervised_loss<double>(labels, f.q_l);
        p.unsupervised = unsupervised_loss(f.dist);
        p.alignment = semantic_alignment_loss(f.dist);
        p.orthogonality = orthogonality_loss(f.k_star);
        p.contrast = contrast_loss(f.dist.z, f.dist.pseudo_labels, std::span<const double>(f.dist.mask));
        p.eml = eml_loss(f.dist);
        p.anl = anl_loss(f.dist, kTauAnl);
        return p;
    }
};

}  // namespace

std::vector<NamedGradcheck> loss_gradchecks(std::uint64_t seed, double tolerance) {
    const Toy toy(seed);
    using Pick = std::function<Tensor<double>(const LossBreakdown<double>&)>;
    const std::pair<const char*, Pick> terms[] = {
        {"L_s", [](const auto& p) { return p.supervised; }},
        {"L_u", [](const auto& p) { return p.unsupervised; }},
        {"L_SA", [](const auto& p) { return p.alignment; }},
        {"L_orth", [](const auto& p) { return p.orthogonality; }},
        {"L_con", [](const auto& p) { return p.contrast; }},
        {"L_EML", [](const auto& p) { return p.eml; }},
        {"L_ANL", [](const auto& p) { return p.anl; }},
        {"total", [](const auto& p) { return total_loss(p); }},
    };
    std::vector<NamedGradcheck> out;
    for (const auto& [name, pick] : terms) {
        auto builder = [&toy, pick = pick] { return pick(toy.parts(toy.forward())); };
        out.push_back({name, gradcheck(builder, toy.params, kStep, tolerance)});
    }

    // End to end: images through a small conv extractor into every term.
    Rng rng(seed ^ 0x5eedULL);
    ExtractorConfig ext;
    ext.height = 8;
    ext.width = 8;
    ext.widths = {4};
    ext.dim = kDim;
    const FeatureExtractor<double> extractor(ext, rng);
    const auto images = gaussian({3 * kBatch, 3, 8, 8}, 0.5, rng, false);
    std::vector<std::size_t> labels(kBatch);
    for (auto& y : labels) y = rng.index(kClasses);
    const auto noise = gaussian({3 * kBatch, kClasses, kDim}, 1.0, rng, false);
    ParamList<double> params = extractor.parameters();
    for (auto& p : toy.classifier.parameters()) params.push_back(p);
    for (auto& p : toy.protos.refiner.parameters()) params.push_back(p);
    Tensor<double> frozen_q_sem;
    auto end_to_end = [&] {
        const auto h = extractor.extract(images);
        const auto q = softmax(toy.classifier.classify_with_noise(h, noise), 1);
        const auto k_star = toy.protos.refine();
        const auto h_w = slice_rows(h, kBatch, 2 * kBatch);
        const auto z = matmul(l2_normalize_rows(h_w), transpose(k_star));
        // Low threshold so the diffuse toy outputs still produce masked terms.
        auto dist = make_distributions(slice_rows(q, kBatch, 2 * kBatch), slice_rows(q, 2 * kBatch, 3 * kBatch),
                                             z, 0.2, kTauSem);
        if (frozen_q_sem.defined()) {
            dist.q_sem = frozen_q_sem;
        } else {
            frozen_q_sem = dist.q_sem.detach();
        }
        LossBreakdown<double> p;
        p.supervised = supervised_loss<double>(labels, slice_rows(q, 0, kBatch));
        p.unsupervised = unsupervised_loss(dist);
        p.alignment = semantic_alignment_loss(dist);
        p.orthogonality = orthogonality_loss(k_star);
        p.contrast = contrast_loss(z, dist.pseudo_labels, std::span<const double>(dist.mask));
        p.eml = eml_loss(dist);
        p.anl = anl_loss(dist, kTauAnl);
        return total_loss(p);
    };
    {
        NoGradGuard guard;
        end_to_end();
    }
    out.push_back({"total (conv extractor)", gradcheck(end_to_end, params, kStep, tolerance)});
    return out;
}

}  // namespace semalign
