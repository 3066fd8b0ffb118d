#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "semalign/rng.hpp"
#include "semalign/tensor.hpp"

namespace semalign {

/// Per-class text-embedding templates as produced by an external encoder
/// (or by synth_embeddings).
struct ClassTemplates {
    std::string name;
    std::vector<std::vector<double>> templates;  // n_templates x dim
};

struct EmbeddingFile {
    std::size_t dim = 0;
    std::vector<ClassTemplates> classes;

    /// Throws FormatError when a class has no templates or a vector has the wrong length.
    void validate() const;
};

/// JSON: {"dim": int, "classes": [{"name": str, "templates": [[float, ...], ...]}]}
EmbeddingFile read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const EmbeddingFile& file, const std::filesystem::path& path);
EmbeddingFile parse_embedding_json(const std::string& text);
std::string embedding_json(const EmbeddingFile& file);

/// Seeded stand-in for a text encoder: each class gets a base direction keyed
/// by a stable hash of its name, and each template is a unit vector scattered
/// around it. Distinct classes are near-orthogonal in expectation.
EmbeddingFile synth_embeddings(const std::vector<std::string>& class_names, std::size_t dim,
                               std::size_t n_templates, std::uint64_t seed);

/// Two-layer fully connected auto-encoder d -> d/2 -> d blended with its
/// input: K* = normalize((1 - alpha) * AE(K) + alpha * K).
template <typename T>
class ResidualRefiner {
public:
    ResidualRefiner() = default;
    ResidualRefiner(std::size_t dim, T alpha, Rng& rng);

    Tensor<T> encode_decode(const Tensor<T>& k) const;
    Tensor<T> refine(const Tensor<T>& k) const;

    T alpha() const { return alpha_; }
    std::size_t dim() const { return dim_; }
    std::size_t hidden() const { return hidden_; }
    ParamList<T> parameters() const;

private:
    std::size_t dim_ = 0;
    std::size_t hidden_ = 0;
    T alpha_ = T(0.9);
    Tensor<T> enc_w_, enc_b_, dec_w_, dec_b_;
};

template <typename T>
struct PrototypeSet {
    std::vector<std::string> class_names;
    std::size_t dim = 0;
    Tensor<T> raw;  // C x d, unit rows, never requires grad
    ResidualRefiner<T> refiner;

    std::size_t num_classes() const { return class_names.size(); }
    /// K*, recomputed from the current refiner weights.
    Tensor<T> refine() const { return refiner.refine(raw); }
};

/// K_c = normalize(mean of class c's templates), class order as in the file.
template <typename T>
PrototypeSet<T> build_prototypes(const EmbeddingFile& file, Rng& init_rng, T alpha = T(0.9));

/// ||K* K*^T - I||_F^2 / (C^2 - C).
template <typename T>
Tensor<T> orthogonality_loss(const Tensor<T>& k_star);

/// Mean |cos| over ordered pairs i != j of the rows of a C x d matrix.
double mean_offdiag_abs_cos(std::span<const double> rows, std::size_t num_rows, std::size_t dim);

template <typename T>
double mean_offdiag_abs_cos(const Tensor<T>& k) {
    std::vector<double> v(k.data().begin(), k.data().end());
    return mean_offdiag_abs_cos(v, k.dim(0), k.dim(1));
}

}  // namespace semalign
