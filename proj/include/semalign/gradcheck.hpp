#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "semalign/tensor.hpp"

namespace semalign {

struct GradcheckBlock {
    std::string name;
    std::size_t size = 0;
    double max_rel_error = 0.0;
    double max_abs_analytic = 0.0;
    double max_abs_numeric = 0.0;
};

struct GradcheckReport {
    double tolerance = 0.0;
    std::vector<GradcheckBlock> blocks;

    double max_rel_error() const;
    bool passed() const { return max_rel_error() < tolerance; }
};

/// Compares analytic gradients of `loss_builder()` against the five-point
/// stencil (8 (L(p+h) - L(p-h)) - (L(p+2h) - L(p-2h))) / 12h, one parameter
/// entry at a time.
///
/// The builder must be a deterministic function of the parameter values.
/// Per-entry error is |a - n| / max(|a|, |n|, 1e-3 * block scale, 1e-10),
/// where block scale is the largest gradient magnitude in the block; entries
/// that are tiny relative to their block are judged on that block scale.
GradcheckReport gradcheck(const std::function<Tensor<double>()>& loss_builder,
                          const ParamList<double>& params, double step = 1e-5,
                          double tolerance = 1e-4);

struct NamedGradcheck {
    std::string term;
    GradcheckReport report;
};

/// Gradient checks of every loss term (L_s, L_u, L_SA, L_orth, L_con, L_EML,
/// L_ANL), the total, and the total through a small conv extractor, on a
/// seeded toy batch with C = 5, d = 16, B = 4 in double precision.
std::vector<NamedGradcheck> loss_gradchecks(std::uint64_t seed, double tolerance = 1e-4);

}  // namespace semalign
