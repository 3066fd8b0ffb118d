#pragma once

#include <filesystem>
#include <vector>

#include "semalign/rng.hpp"
#include "semalign/tensor.hpp"

namespace semalign {

struct ExtractorConfig {
    std::size_t in_channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::vector<std::size_t> widths{16, 32, 64};  // one 3x3 conv + relu + 2x pool per entry
    std::size_t dim = 64;

    void validate() const;
    std::size_t flat_features() const;
};

/// Conv stack followed by a linear projection to the prototype dimension.
template <typename T>
class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(ExtractorConfig config, Rng& rng);

    /// x: N x C x H x W (or a single C x H x W image) -> N x dim features.
    Tensor<T> extract(const Tensor<T>& x) const;

    const ExtractorConfig& config() const { return config_; }
    ParamList<T> parameters() const;

private:
    ExtractorConfig config_;
    std::vector<Tensor<T>> conv_w_, conv_b_;
    Tensor<T> proj_w_, proj_b_;
};

enum class ClassifierMode { train, eval };

/// Cosine classifier with Gaussian weights: W = mu + softplus(rho) * eps,
/// logits = scale * cos(W_c, h). Eval mode uses W = mu and draws nothing.
template <typename T>
class StochasticClassifier {
public:
    StochasticClassifier() = default;
    StochasticClassifier(std::size_t num_classes, std::size_t dim, Rng& rng, T scale = T(10),
                         T rho_init = T(-4));

    /// h: B x d. In train mode one weight draw is taken per sample (per call).
    Tensor<T> classify(const Tensor<T>& h, ClassifierMode mode, Rng* rng) const;
    /// Explicit noise B x C x d (train path), mainly for gradient checks.
    Tensor<T> classify_with_noise(const Tensor<T>& h, const Tensor<T>& noise) const;

    std::size_t num_classes() const { return classes_; }
    std::size_t dim() const { return dim_; }
    T scale() const { return scale_; }
    Tensor<T>& mu() { return mu_; }
    Tensor<T>& rho() { return rho_; }
    ParamList<T> parameters() const;

private:
    std::size_t classes_ = 0;
    std::size_t dim_ = 0;
    T scale_ = T(10);
    Tensor<T> mu_, rho_;
};

/// Named blocks written as <dir>/manifest.json plus one little-endian f32
/// blob per block.
void save_checkpoint(const ParamList<float>& params, const std::filesystem::path& dir);
/// Copies stored values into the matching tensors; names and shapes must agree.
void load_checkpoint(const ParamList<float>& params, const std::filesystem::path& dir);

}  // namespace semalign
