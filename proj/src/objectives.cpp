#include "semalign/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semalign/errors.hpp"
#include "semalign/ops.hpp"

namespace semalign {

namespace {

template <typename T>
Tensor<T> masked_mean(const Tensor<T>& per_sample, std::span<const T> mask) {
    const std::size_t B = per_sample.numel();
    if (B == 0) return Tensor<T>::scalar(T(0));
    auto m = Tensor<T>::from({B}, std::vector<T>(mask.begin(), mask.end()));
    return div_scalar(sum(mul(per_sample, m)), static_cast<T>(B));
}

template <typename T>
Tensor<T> one_hot(std::span<const std::size_t> labels, std::size_t classes) {
    std::vector<T> v(labels.size() * classes, T(0));
    for (std::size_t b = 0; b < labels.size(); ++b) v[b * classes + labels[b]] = T(1);
    return Tensor<T>::from({labels.size(), classes}, std::move(v));
}

}  // namespace

template <typename T>
std::size_t BatchDistributions<T>::passed() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), T(1)));
}

template <typename T>
BatchDistributions<T> make_distributions(const Tensor<T>& q_weak, const Tensor<T>& q_strong, const Tensor<T>& z,
                                         T tau, T tau_sem) {
    if (q_weak.rank() != 2 || q_weak.shape() != q_strong.shape()) {
        throw DimensionError("make_distributions: " + shape_str(q_weak.shape()) + " vs " +
                             shape_str(q_strong.shape()));
    }
    BatchDistributions<T> d;
    d.q_weak = q_weak;
    d.q_strong = q_strong;
    const std::size_t B = q_weak.dim(0), C = q_weak.dim(1);
    d.pseudo_labels.resize(B);
    d.mask.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
        const auto row = q_weak.data().subspan(b * C, C);
        const auto it = std::max_element(row.begin(), row.end());
        d.pseudo_labels[b] = static_cast<std::size_t>(it - row.begin());
        d.mask[b] = *it >= tau ? T(1) : T(0);
    }
    if (z.defined()) {
        if (z.shape() != q_weak.shape()) {
            throw DimensionError("make_distributions: z " + shape_str(z.shape()) + " vs " +
                                 shape_str(q_weak.shape()));
        }
        d.z = z;
        d.q_sem = softmax(z.detach(), -1, tau_sem);
    }
    return d;
}

template <typename T>
LossBreakdown<T> LossBreakdown<T>::zeros() {
    auto z = [] { return Tensor<T>::scalar(T(0)); };
    return {z(), z(), z(), z(), z(), z(), z()};
}

template <typename T>
LossValues LossValues::from(const LossBreakdown<T>& p, const Tensor<T>& total) {
    LossValues v;
    v.supervised = p.supervised.item();
    v.unsupervised = p.unsupervised.item();
    v.alignment = p.alignment.item();
    v.orthogonality = p.orthogonality.item();
    v.contrast = p.contrast.item();
    v.eml = p.eml.item();
    v.anl = p.anl.item();
    v.total = total.item();
    return v;
}

LossValues& LossValues::operator+=(const LossValues& o) {
    supervised += o.supervised;
    unsupervised += o.unsupervised;
    alignment += o.alignment;
    orthogonality += o.orthogonality;
    contrast += o.contrast;
    eml += o.eml;
    anl += o.anl;
    total += o.total;
    return *this;
}

LossValues LossValues::scaled(double s) const {
    LossValues v = *this;
    v.supervised *= s;
    v.unsupervised *= s;
    v.alignment *= s;
    v.orthogonality *= s;
    v.contrast *= s;
    v.eml *= s;
    v.anl *= s;
    v.total *= s;
    return v;
}

template <typename T>
Tensor<T> supervised_loss(std::span<const std::size_t> labels, const Tensor<T>& q) {
    if (q.rank() != 2 || q.dim(0) != labels.size()) {
        throw DimensionError("supervised_loss: " + std::to_string(labels.size()) + " labels for " +
                             shape_str(q.shape()));
    }
    if (labels.empty()) {
        throw InputError("supervised_loss: empty labeled batch");
    }
    const std::size_t C = q.dim(1);
    for (auto y : labels) {
        if (y >= C) {
            throw InputError("supervised_loss: label " + std::to_string(y) + " out of range [0, " +
                             std::to_string(C) + ")");
        }
    }
    return mean(cross_entropy(one_hot<T>(labels, C), q));
}

template <typename T>
Tensor<T> unsupervised_loss(const BatchDistributions<T>& d) {
    const auto target = one_hot<T>(d.pseudo_labels, d.classes());
    return masked_mean(cross_entropy(target, d.q_strong), std::span<const T>(d.mask));
}

template <typename T>
Tensor<T> semantic_alignment_loss(const BatchDistributions<T>& d) {
    if (!d.q_sem.defined()) {
        throw InputError("semantic_alignment_loss: distributions carry no semantic target");
    }
    return masked_mean(cross_entropy(d.q_sem.detach(), d.q_weak), std::span<const T>(d.mask));
}

template <typename T>
Tensor<T> contrast_loss(const Tensor<T>& z, std::span<const std::size_t> pred, std::span<const T> mask) {
    if (z.rank() != 2 || z.dim(0) != pred.size() || mask.size() != pred.size()) {
        throw DimensionError("contrast_loss: z " + shape_str(z.shape()) + " with " +
                             std::to_string(pred.size()) + " predictions");
    }
    const std::size_t B = z.dim(0), C = z.dim(1);
    if (C < 2) {
        return Tensor<T>::scalar(T(0));
    }
    std::vector<T> coef(B * C, T(1) / static_cast<T>(C - 1));
    for (std::size_t b = 0; b < B; ++b) coef[b * C + pred[b]] = T(-1);
    auto per_sample = affine(row_sum(mul(z, Tensor<T>::from({B, C}, std::move(coef)))), T(1), T(1));
    return masked_mean(per_sample, mask);
}

template <typename T>
Tensor<T> eml_loss(const BatchDistributions<T>& d) {
    const Tensor<T>& q = d.q_strong;
    const std::size_t B = q.dim(0), C = q.dim(1);
    if (C < 2) return Tensor<T>::scalar(T(0));
    const T eps = T(kLogEps);
    const T inv = T(1) / static_cast<T>(C - 1);
    const std::vector<std::size_t> pl = d.pseudo_labels;
    std::vector<T> per(B, T(0));
    std::vector<T> denom(B);
    for (std::size_t b = 0; b < B; ++b) {
        const T* row = q.data().data() + b * C;
        denom[b] = T(1) - row[pl[b]] + eps;
        T acc = T(0);
        for (std::size_t j = 0; j < C; ++j) {
            if (j == pl[b]) continue;
            acc += std::log(std::max(row[j] / denom[b], eps));
        }
        per[b] = -inv * acc;
    }
    auto per_sample = make_op<T>({B}, std::move(per), {q}, [pl, denom, B, C, eps, inv](TensorNode<T>& self) {
        auto& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t b = 0; b < B; ++b) {
            const T gb = self.grad[b];
            if (gb == T(0)) continue;
            const T* row = in.value.data() + b * C;
            std::size_t active = 0;
            for (std::size_t j = 0; j < C; ++j) {
                if (j == pl[b] || row[j] / denom[b] <= eps) continue;
                ++active;
                g[b * C + j] -= gb * inv / row[j];
            }
            // log q~_j = log s_j - log(1 - s_pl + eps)
            g[b * C + pl[b]] -= gb * inv * static_cast<T>(active) / denom[b];
        }
    });
    return masked_mean(per_sample, std::span<const T>(d.mask));
}

std::vector<std::size_t> anl_negative_set(std::span<const double> row, double tau_anl) {
    if (!(tau_anl > 0.0 && tau_anl <= 1.0)) {
        throw ParameterError("anl: tau_anl must lie in (0, 1]");
    }
    std::vector<std::size_t> order(row.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    double cumulative = 0.0;
    std::size_t k = row.size();
    for (std::size_t i = 0; i < order.size(); ++i) {
        cumulative += row[order[i]];
        if (cumulative >= tau_anl - 1e-9) {
            k = i + 1;
            break;
        }
    }
    return {order.begin() + static_cast<std::ptrdiff_t>(k), order.end()};
}

template <typename T>
Tensor<T> anl_loss(const BatchDistributions<T>& d, T tau_anl) {
    const Tensor<T>& qw = d.q_weak;
    const std::size_t B = qw.dim(0), C = qw.dim(1);
    if (B == 0) return Tensor<T>::scalar(T(0));
    std::vector<T> coef(B * C, T(0));
    std::vector<double> row(C);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) row[c] = static_cast<double>(qw[b * C + c]);
        const auto negatives = anl_negative_set(row, static_cast<double>(tau_anl));
        for (auto j : negatives) coef[b * C + j] = T(-1) / static_cast<T>(negatives.size());
    }
    auto log_rest = log_clamped(affine(d.q_strong, T(-1), T(1)));
    return mean(row_sum(mul(log_rest, Tensor<T>::from({B, C}, std::move(coef)))));
}

template <typename T>
Tensor<T> total_loss(const LossBreakdown<T>& p) {
    const std::pair<const char*, const Tensor<T>*> terms[] = {
        {"L_s", &p.supervised},  {"L_u", &p.unsupervised}, {"L_SA", &p.alignment},
        {"L_orth", &p.orthogonality}, {"L_con", &p.contrast}, {"L_EML", &p.eml},
        {"L_ANL", &p.anl}};
    for (const auto& [name, t] : terms) {
        if (!t->defined() || !std::isfinite(static_cast<double>(t->item()))) {
            throw NonFiniteLossError(std::string("non-finite loss term ") + name);
        }
    }
    Tensor<T> total = p.supervised;
    for (std::size_t i = 1; i < std::size(terms); ++i) total = add(total, *terms[i].second);
    return total;
}

#define SEMALIGN_INSTANTIATE_OBJECTIVES(T)                                                      \
    template struct BatchDistributions<T>;                                                      \
    template struct LossBreakdown<T>;                                                           \
    template BatchDistributions<T> make_distributions(const Tensor<T>&, const Tensor<T>&,       \
                                                      const Tensor<T>&, T, T);                  \
    template LossValues LossValues::from(const LossBreakdown<T>&, const Tensor<T>&);           \
    template Tensor<T> supervised_loss(std::span<const std::size_t>, const Tensor<T>&);         \
    template Tensor<T> unsupervised_loss(const BatchDistributions<T>&);                         \
    template Tensor<T> semantic_alignment_loss(const BatchDistributions<T>&);                   \
    template Tensor<T> contrast_loss(const Tensor<T>&, std::span<const std::size_t>,            \
                                     std::span<const T>);                                       \
    template Tensor<T> eml_loss(const BatchDistributions<T>&);                                  \
    template Tensor<T> anl_loss(const BatchDistributions<T>&, T);                               \
    template Tensor<T> total_loss(const LossBreakdown<T>&);

SEMALIGN_INSTANTIATE_OBJECTIVES(float)
SEMALIGN_INSTANTIATE_OBJECTIVES(double)

}  // namespace semalign
