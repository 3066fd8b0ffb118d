#include "semalign/prototypes.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "semalign/errors.hpp"
#include "semalign/log.hpp"
#include "semalign/ops.hpp"

namespace semalign {

using nlohmann::json;

void EmbeddingFile::validate() const {
    if (dim < 2) {
        throw FormatError("embedding file: dim must be >= 2, got " + std::to_string(dim));
    }
    if (classes.size() < 2) {
        throw FormatError("embedding file: need at least 2 classes");
    }
    for (const auto& cls : classes) {
        if (cls.templates.empty()) {
            throw FormatError("embedding file: class '" + cls.name + "' has no templates");
        }
        for (const auto& t : cls.templates) {
            if (t.size() != dim) {
                throw FormatError("embedding file: class '" + cls.name + "' has a vector of length " +
                                  std::to_string(t.size()) + ", expected " + std::to_string(dim));
            }
        }
    }
}

EmbeddingFile parse_embedding_json(const std::string& text) {
    EmbeddingFile file;
    try {
        const json doc = json::parse(text);
        file.dim = doc.at("dim").get<std::size_t>();
        for (const auto& c : doc.at("classes")) {
            ClassTemplates cls;
            cls.name = c.at("name").get<std::string>();
            cls.templates = c.at("templates").get<std::vector<std::vector<double>>>();
            file.classes.push_back(std::move(cls));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("embedding file: ") + e.what());
    }
    file.validate();
    return file;
}

std::string embedding_json(const EmbeddingFile& file) {
    json doc;
    doc["dim"] = file.dim;
    doc["classes"] = json::array();
    for (const auto& cls : file.classes) {
        doc["classes"].push_back({{"name", cls.name}, {"templates", cls.templates}});
    }
    return doc.dump();
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open embedding file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_embedding_json(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_embedding_file(const EmbeddingFile& file, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write embedding file " + path.string());
    }
    out << embedding_json(file) << '\n';
}

namespace {

std::vector<double> gaussian_unit(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double ss = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        ss += x * x;
    }
    const double n = std::sqrt(ss);
    for (auto& x : v) x /= n;
    return v;
}

}  // namespace

EmbeddingFile synth_embeddings(const std::vector<std::string>& class_names, std::size_t dim,
                               std::size_t n_templates, std::uint64_t seed) {
    std::set<std::string> seen;
    for (const auto& n : class_names) {
        if (!seen.insert(n).second) {
            throw InputError("synth_embeddings: duplicate class name '" + n + "'");
        }
    }
    if (n_templates == 0) {
        throw InputError("synth_embeddings: n_templates must be >= 1");
    }
    constexpr double kTemplateSpread = 0.5;
    EmbeddingFile file;
    file.dim = dim;
    for (const auto& name : class_names) {
        const std::uint64_t key = stable_hash(name) ^ mix_seed(seed);
        Rng base_rng(key);
        const auto base = gaussian_unit(base_rng, dim);
        ClassTemplates cls;
        cls.name = name;
        for (std::size_t t = 0; t < n_templates; ++t) {
            Rng trng(mix_seed(key + t + 1));
            auto noise = gaussian_unit(trng, dim);
            std::vector<double> v(dim);
            double ss = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                v[i] = n_templates == 1 ? base[i] : base[i] + kTemplateSpread * noise[i];
                ss += v[i] * v[i];
            }
            const double n = std::sqrt(ss);
            for (auto& x : v) x /= n;
            cls.templates.push_back(std::move(v));
        }
        file.classes.push_back(std::move(cls));
    }
    return file;
}

template <typename T>
ResidualRefiner<T>::ResidualRefiner(std::size_t dim, T alpha, Rng& rng)
    : dim_(dim), hidden_(std::max<std::size_t>(1, dim / 2)), alpha_(alpha) {
    if (alpha < T(0) || alpha > T(1)) {
        throw ParameterError("refiner: alpha must lie in [0, 1]");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    auto init = [&](Shape shape) {
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
        return Tensor<T>::from(std::move(shape), std::move(v), true);
    };
    enc_w_ = init({dim_, hidden_});
    enc_b_ = Tensor<T>::zeros({hidden_}, true);
    dec_w_ = init({hidden_, dim_});
    dec_b_ = Tensor<T>::zeros({dim_}, true);
}

template <typename T>
Tensor<T> ResidualRefiner<T>::encode_decode(const Tensor<T>& k) const {
    auto hidden = relu(add_bias(matmul(k, enc_w_), enc_b_));
    return add_bias(matmul(hidden, dec_w_), dec_b_);
}

template <typename T>
Tensor<T> ResidualRefiner<T>::refine(const Tensor<T>& k) const {
    auto blended = add(affine(encode_decode(k), T(1) - alpha_), affine(k, alpha_));
    return l2_normalize_rows(blended);
}

template <typename T>
ParamList<T> ResidualRefiner<T>::parameters() const {
    return {{"rfr.enc_w", enc_w_}, {"rfr.enc_b", enc_b_}, {"rfr.dec_w", dec_w_},
            {"rfr.dec_b", dec_b_}};
}

template <typename T>
PrototypeSet<T> build_prototypes(const EmbeddingFile& file, Rng& init_rng, T alpha) {
    file.validate();
    PrototypeSet<T> set;
    set.dim = file.dim;
    const std::size_t C = file.classes.size(), d = file.dim;
    std::vector<T> k(C * d);
    for (std::size_t c = 0; c < C; ++c) {
        const auto& cls = file.classes[c];
        set.class_names.push_back(cls.name);
        std::vector<double> m(d, 0.0);
        for (const auto& t : cls.templates)
            for (std::size_t i = 0; i < d; ++i) m[i] += t[i];
        double ss = 0.0;
        for (auto& x : m) {
            x /= static_cast<double>(cls.templates.size());
            ss += x * x;
        }
        const double n = std::sqrt(ss);
        if (!(n > 1e-12)) {
            throw DegenerateClassError("class '" + cls.name + "' has a zero mean embedding");
        }
        for (std::size_t i = 0; i < d; ++i) k[c * d + i] = static_cast<T>(m[i] / n);
    }
    set.raw = Tensor<T>::from({C, d}, std::move(k), false);
    set.refiner = ResidualRefiner<T>(d, alpha, init_rng);
    return set;
}

template <typename T>
Tensor<T> orthogonality_loss(const Tensor<T>& k_star) {
    const std::size_t C = k_star.dim(0);
    if (C < 2) {
        log::warning("orthogonality_loss: fewer than 2 prototypes, returning 0");
        return Tensor<T>::scalar(T(0));
    }
    std::vector<T> eye(C * C, T(0));
    for (std::size_t i = 0; i < C; ++i) eye[i * C + i] = T(1);
    auto gram = matmul(k_star, transpose(k_star));
    auto diff = sub(gram, Tensor<T>::from({C, C}, std::move(eye)));
    return affine(sum(mul(diff, diff)), T(1) / static_cast<T>(C * C - C));
}

double mean_offdiag_abs_cos(std::span<const double> rows, std::size_t num_rows, std::size_t dim) {
    if (num_rows < 2) return 0.0;
    std::vector<double> norms(num_rows);
    for (std::size_t r = 0; r < num_rows; ++r) {
        double ss = 0.0;
        for (std::size_t i = 0; i < dim; ++i) ss += rows[r * dim + i] * rows[r * dim + i];
        norms[r] = std::sqrt(ss);
    }
    double total = 0.0;
    for (std::size_t a = 0; a < num_rows; ++a)
        for (std::size_t b = 0; b < num_rows; ++b) {
            if (a == b) continue;
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += rows[a * dim + i] * rows[b * dim + i];
            total += std::abs(dot) / (norms[a] * norms[b]);
        }
    return total / static_cast<double>(num_rows * (num_rows - 1));
}

template class ResidualRefiner<float>;
template class ResidualRefiner<double>;
template PrototypeSet<float> build_prototypes(const EmbeddingFile&, Rng&, float);
template PrototypeSet<double> build_prototypes(const EmbeddingFile&, Rng&, double);
template Tensor<float> orthogonality_loss(const Tensor<float>&);
template Tensor<double> orthogonality_loss(const Tensor<double>&);

}  // namespace semalign
