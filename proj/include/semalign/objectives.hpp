#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "semalign/tensor.hpp"

namespace semalign {

/// Per-batch distributions over the unlabeled samples.
template <typename T>
struct BatchDistributions {
    Tensor<T> q_weak;    // B_u x C, classifier softmax on weak views
    Tensor<T> q_strong;  // B_u x C, classifier softmax on strong views
    Tensor<T> q_sem;     // B_u x C, softmax(z / tau_sem), detached
    Tensor<T> z;         // B_u x C, cosine similarity to refined prototypes
    std::vector<std::size_t> pseudo_labels;  // argmax of q_weak
    std::vector<T> mask;                     // 1 where max(q_weak) >= tau

    std::size_t batch() const { return pseudo_labels.size(); }
    std::size_t classes() const { return q_weak.dim(1); }
    std::size_t passed() const;
};

/// Derives pseudo-labels, the confidence mask and the detached semantic
/// target. `z` may be undefined when no prototype terms are in use.
template <typename T>
BatchDistributions<T> make_distributions(const Tensor<T>& q_weak, const Tensor<T>& q_strong,
                                         const Tensor<T>& z, T tau, T tau_sem);

template <typename T>
struct LossBreakdown {
    Tensor<T> supervised, unsupervised, alignment, orthogonality, contrast, eml, anl;

    static LossBreakdown zeros();
};

/// Plain-number view of a LossBreakdown, for logging and reports.
struct LossValues {
    double supervised = 0, unsupervised = 0, alignment = 0, orthogonality = 0, contrast = 0,
           eml = 0, anl = 0, total = 0;

    template <typename T>
    static LossValues from(const LossBreakdown<T>& parts, const Tensor<T>& total);
    LossValues& operator+=(const LossValues& o);
    LossValues scaled(double s) const;
};

/// Mean of H(onehot(y_b), Q_b) over the labeled batch.
template <typename T>
Tensor<T> supervised_loss(std::span<const std::size_t> labels, const Tensor<T>& q_weak_labeled);

/// (1/B) sum_b mask_b H(onehot(pl_b), Q^s_b).
template <typename T>
Tensor<T> unsupervised_loss(const BatchDistributions<T>& d);

/// (1/B) sum_b mask_b H(Q^sem_b, Q^w_b); the target carries no gradient.
template <typename T>
Tensor<T> semantic_alignment_loss(const BatchDistributions<T>& d);

/// Masked mean of 1 - z[pred] + mean_{c != pred} z[c].
template <typename T>
Tensor<T> contrast_loss(const Tensor<T>& z, std::span<const std::size_t> pred,
                        std::span<const T> mask);

/// Cross-entropy between a uniform distribution over the non-pseudo-label
/// classes and the renormalized strong-view probabilities of those classes;
/// masked mean over the batch.
template <typename T>
Tensor<T> eml_loss(const BatchDistributions<T>& d);

/// Bottom-ranked classes of one weak-view distribution: sort descending, keep
/// the smallest prefix whose mass reaches tau_anl, return the rest (in rank
/// order). The cumulative sum is taken in double with 1e-9 slack.
std::vector<std::size_t> anl_negative_set(std::span<const double> q_weak_row, double tau_anl);

/// Negative learning on every unlabeled sample (mask is not consulted):
/// -(1/|N_b|) sum_{j in N_b} log(1 - Q^s_bj), batch mean.
template <typename T>
Tensor<T> anl_loss(const BatchDistributions<T>& d, T tau_anl);

/// Unit-weight sum of all parts. Throws NonFiniteLossError naming the first
/// non-finite term.
template <typename T>
Tensor<T> total_loss(const LossBreakdown<T>& parts);

}  // namespace semalign
