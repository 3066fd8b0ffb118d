#include "semalign/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace semalign {

double GradcheckReport::max_rel_error() const {
    double worst = 0.0;
    for (const auto& b : blocks) worst = std::max(worst, b.max_rel_error);
    return worst;
}

GradcheckReport gradcheck(const std::function<Tensor<double>()>& loss_builder,
                          const ParamList<double>& params, double step, double tolerance) {
    GradcheckReport report;
    report.tolerance = tolerance;

    for (const auto& p : params) {
        Tensor<double> t = p.tensor;
        t.zero_grad();
    }
    loss_builder().backward();

    for (const auto& p : params) {
        Tensor<double> t = p.tensor;
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) {
            std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        }
        std::vector<double> numeric(t.numel());
        {
            NoGradGuard no_grad;
            auto values = t.mutable_data();
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double saved = values[i];
                auto at = [&](double offset) {
                    values[i] = saved + offset;
                    return loss_builder().item();
                };
                const double f1 = at(step), b1 = at(-step), f2 = at(2 * step), b2 = at(-2 * step);
                values[i] = saved;
                numeric[i] = (8.0 * (f1 - b1) - (f2 - b2)) / (12.0 * step);
            }
        }
        GradcheckBlock block;
        block.name = p.name;
        block.size = t.numel();
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            block.max_abs_analytic = std::max(block.max_abs_analytic, std::abs(analytic[i]));
            block.max_abs_numeric = std::max(block.max_abs_numeric, std::abs(numeric[i]));
        }
        const double scale = std::max(block.max_abs_analytic, block.max_abs_numeric);
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]),
                                           1e-3 * scale, 1e-10});
            block.max_rel_error =
                std::max(block.max_rel_error, std::abs(analytic[i] - numeric[i]) / denom);
        }
        report.blocks.push_back(block);
        t.zero_grad();
    }
    return report;
}

}  // namespace semalign
