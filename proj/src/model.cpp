#include "semalign/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "semalign/errors.hpp"
#include "semalign/ops.hpp"

namespace semalign {

void ExtractorConfig::validate() const {
    if (in_channels == 0 || widths.empty() || dim == 0) {
        throw ParameterError("extractor config: channels, widths and dim must be non-empty");
    }
    const std::size_t div = std::size_t(1) << widths.size();
    if (height % div != 0 || width % div != 0) {
        throw ParameterError("extractor config: " + std::to_string(height) + "x" +
                             std::to_string(width) + " is not divisible by " + std::to_string(div));
    }
}

std::size_t ExtractorConfig::flat_features() const {
    const std::size_t div = std::size_t(1) << widths.size();
    return widths.back() * (height / div) * (width / div);
}

namespace {

template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
FeatureExtractor<T>::FeatureExtractor(ExtractorConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    std::size_t in = config_.in_channels;
    for (std::size_t out : config_.widths) {
        const double fan_in = static_cast<double>(in * 9);
        conv_w_.push_back(uniform_param<T>({out, in, 3, 3}, std::sqrt(6.0 / fan_in), rng));
        conv_b_.push_back(Tensor<T>::zeros({out}, true));
        in = out;
    }
    const std::size_t flat = config_.flat_features();
    proj_w_ = uniform_param<T>({flat, config_.dim}, std::sqrt(3.0 / static_cast<double>(flat)), rng);
    proj_b_ = Tensor<T>::zeros({config_.dim}, true);
}

template <typename T>
Tensor<T> FeatureExtractor<T>::extract(const Tensor<T>& x) const {
    Tensor<T> h = x;
    if (x.rank() == 3) {
        h = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    }
    if (h.rank() != 4 || h.dim(1) != config_.in_channels || h.dim(2) != config_.height ||
        h.dim(3) != config_.width) {
        throw DimensionError("extract: input " + shape_str(x.shape()) + " does not match " +
                             shape_str({config_.in_channels, config_.height, config_.width}));
    }
    const std::size_t n = h.dim(0);
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        h = max_pool2(relu(conv2d(h, conv_w_[i], conv_b_[i], 1)));
    }
    h = reshape(h, {n, config_.flat_features()});
    return add_bias(matmul(h, proj_w_), proj_b_);
}

template <typename T>
ParamList<T> FeatureExtractor<T>::parameters() const {
    ParamList<T> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        out.push_back({"extractor.conv" + std::to_string(i) + ".w", conv_w_[i]});
        out.push_back({"extractor.conv" + std::to_string(i) + ".b", conv_b_[i]});
    }
    out.push_back({"extractor.proj.w", proj_w_});
    out.push_back({"extractor.proj.b", proj_b_});
    return out;
}

template <typename T>
StochasticClassifier<T>::StochasticClassifier(std::size_t num_classes, std::size_t dim, Rng& rng,
                                              T scale, T rho_init)
    : classes_(num_classes), dim_(dim), scale_(scale) {
    if (!(scale > T(0))) {
        throw ParameterError("classifier scale must be positive");
    }
    mu_ = uniform_param<T>({num_classes, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    rho_ = Tensor<T>::full({num_classes, dim}, rho_init, true);
}

namespace {

// logits[b, c] = s * <W_bc / |W_bc|, hn_b> / |hn_b| with W_bc = mu_c + softplus(rho_c) * eps_bc.
// An undefined noise tensor means W = mu for every sample.
template <typename T>
Tensor<T> cosine_logits(const Tensor<T>& h, const Tensor<T>& mu, const Tensor<T>& rho,
                        const Tensor<T>& noise, T scale) {
    const std::size_t B = h.dim(0), d = h.dim(1), C = mu.dim(0);
    if (mu.dim(1) != d) {
        throw DimensionError("classify: features " + shape_str(h.shape()) + " vs weights " +
                             shape_str(mu.shape()));
    }
    const bool stochastic = noise.defined();
    if (stochastic && noise.shape() != Shape{B, C, d}) {
        throw DimensionError("classify: noise " + shape_str(noise.shape()) + ", expected " +
                             shape_str({B, C, d}));
    }
    constexpr T eps = T(1e-12);
    std::vector<T> sigma(C * d), dsigma(C * d);
    for (std::size_t i = 0; i < C * d; ++i) {
        const T r = rho[i];
        sigma[i] = r > T(0) ? r + std::log1p(std::exp(-r)) : std::log1p(std::exp(r));
        dsigma[i] = r >= T(0) ? T(1) / (T(1) + std::exp(-r)) : std::exp(r) / (T(1) + std::exp(r));
    }
    std::vector<T> hnorm(B);
    for (std::size_t b = 0; b < B; ++b) {
        T ss = T(0);
        for (std::size_t i = 0; i < d; ++i) ss += h[b * d + i] * h[b * d + i];
        hnorm[b] = std::sqrt(ss + eps);
    }
    // Unit weight rows per (b, c); for eval only C of them.
    const std::size_t rows = stochastic ? B * C : C;
    std::vector<T> wn(rows * d), wnorm(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t c = r % C;
        T ss = T(0);
        for (std::size_t i = 0; i < d; ++i) {
            T w = mu[c * d + i];
            if (stochastic) w += sigma[c * d + i] * noise[r * d + i];
            wn[r * d + i] = w;
            ss += w * w;
        }
        wnorm[r] = std::sqrt(ss + eps);
        for (std::size_t i = 0; i < d; ++i) wn[r * d + i] /= wnorm[r];
    }
    std::vector<T> out(B * C);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* w = wn.data() + (stochastic ? b * C + c : c) * d;
            T dot = T(0);
            for (std::size_t i = 0; i < d; ++i) dot += w[i] * h[b * d + i];
            out[b * C + c] = scale * dot / hnorm[b];
        }
    std::vector<Tensor<T>> inputs{h, mu, rho};
    return make_op<T>(
        {B, C}, out, inputs,
        [=](TensorNode<T>& self) {
            auto& hin = *self.inputs[0];
            auto& muin = *self.inputs[1];
            auto& rhoin = *self.inputs[2];
            std::vector<T> dw(d);
            for (std::size_t b = 0; b < B; ++b) {
                const T* hb = hin.value.data() + b * d;
                for (std::size_t c = 0; c < C; ++c) {
                    const T g = self.grad[b * C + c];
                    if (g == T(0)) continue;
                    const std::size_t r = stochastic ? b * C + c : c;
                    const T* w = wn.data() + r * d;
                    const T cosv = out[b * C + c] / scale;
                    // d/dh: s * (w - hn * cos) / |h|
                    if (hin.requires_grad) {
                        auto& gh = hin.grad_buffer();
                        for (std::size_t i = 0; i < d; ++i)
                            gh[b * d + i] +=
                                g * scale * (w[i] - hb[i] / hnorm[b] * cosv) / hnorm[b];
                    }
                    // d/dW: s * (hn - wn * cos) / |W|
                    for (std::size_t i = 0; i < d; ++i)
                        dw[i] = g * scale * (hb[i] / hnorm[b] - w[i] * cosv) / wnorm[r];
                    if (muin.requires_grad) {
                        auto& gm = muin.grad_buffer();
                        for (std::size_t i = 0; i < d; ++i) gm[c * d + i] += dw[i];
                    }
                    if (stochastic && rhoin.requires_grad) {
                        auto& gr = rhoin.grad_buffer();
                        const T* e = noise.data().data() + r * d;
                        for (std::size_t i = 0; i < d; ++i)
                            gr[c * d + i] += dw[i] * e[i] * dsigma[c * d + i];
                    }
                }
            }
        });
}

}  // namespace

template <typename T>
Tensor<T> StochasticClassifier<T>::classify(const Tensor<T>& h, ClassifierMode mode, Rng* rng) const {
    if (h.rank() != 2 || h.dim(1) != dim_) {
        throw DimensionError("classify: expected B x " + std::to_string(dim_) + ", got " +
                             shape_str(h.shape()));
    }
    if (mode == ClassifierMode::eval) {
        return cosine_logits(h, mu_, rho_, Tensor<T>(), scale_);
    }
    if (rng == nullptr) {
        throw ParameterError("classify: train mode needs an rng");
    }
    const std::size_t B = h.dim(0);
    std::vector<T> eps(B * classes_ * dim_);
    for (auto& e : eps) e = static_cast<T>(rng->normal());
    return cosine_logits(h, mu_, rho_, Tensor<T>::from({B, classes_, dim_}, std::move(eps)),
                         scale_);
}

template <typename T>
Tensor<T> StochasticClassifier<T>::classify_with_noise(const Tensor<T>& h,
                                                       const Tensor<T>& noise) const {
    return cosine_logits(h, mu_, rho_, noise, scale_);
}

template <typename T>
ParamList<T> StochasticClassifier<T>::parameters() const {
    return {{"classifier.mu", mu_}, {"classifier.rho", rho_}};
}

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;
template class StochasticClassifier<float>;
template class StochasticClassifier<double>;

// --- checkpoints -----------------------------------------------------------

namespace {

std::string blob_name(const std::string& name) { return name + ".f32"; }

void write_f32le(std::ofstream& out, std::span<const float> values) {
    for (float v : values) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                  static_cast<unsigned char>(bits >> 16),
                                  static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(bytes), 4);
    }
}

}  // namespace

void save_checkpoint(const ParamList<float>& params, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    nlohmann::json manifest;
    manifest["format"] = "semalign-checkpoint";
    manifest["dtype"] = "f32le";
    manifest["blocks"] = nlohmann::json::array();
    for (const auto& p : params) {
        const auto path = dir / blob_name(p.name);
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        write_f32le(out, p.tensor.data());
        manifest["blocks"].push_back(
            {{"name", p.name}, {"shape", p.tensor.shape()}, {"file", blob_name(p.name)}});
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

void load_checkpoint(const ParamList<float>& params, const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError((dir / "manifest.json").string() + ": " + e.what());
    }
    for (const auto& p : params) {
        const nlohmann::json* block = nullptr;
        for (const auto& b : manifest.at("blocks")) {
            if (b.at("name") == p.name) block = &b;
        }
        if (block == nullptr) {
            throw FormatError("checkpoint " + dir.string() + " has no block '" + p.name + "'");
        }
        if (block->at("shape").get<Shape>() != p.tensor.shape()) {
            throw FormatError("checkpoint block '" + p.name + "' has shape " +
                              shape_str(block->at("shape").get<Shape>()) + ", expected " +
                              shape_str(p.tensor.shape()));
        }
        const auto path = dir / block->at("file").get<std::string>();
        std::ifstream blob(path, std::ios::binary);
        if (!blob) throw IoError("cannot open " + path.string());
        Tensor<float> t = p.tensor;
        auto values = t.mutable_data();
        for (auto& v : values) {
            unsigned char bytes[4];
            if (!blob.read(reinterpret_cast<char*>(bytes), 4)) {
                throw FormatError(path.string() + ": truncated blob");
            }
            const std::uint32_t bits = bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) |
                                       (static_cast<std::uint32_t>(bytes[3]) << 24);
            v = std::bit_cast<float>(bits);
        }
    }
}

}  // namespace semalign
