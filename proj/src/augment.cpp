#include "semalign/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "semalign/errors.hpp"
#include "semalign/fft.hpp"
#include "semalign/log.hpp"

namespace semalign {

void AugConfig::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ParameterError(std::string("aug config: ") + name + " must be in [0, 1]");
        }
    };
    prob(p_fourier, "p_fourier");
    prob(p_texture, "p_texture");
    prob(cutout_fraction, "cutout_fraction");
    if (quant_levels < 2) {
        throw ParameterError("aug config: quant_levels must be >= 2");
    }
    if (bank_capacity == 0) {
        throw ParameterError("aug config: bank_capacity must be >= 1");
    }
}

void clamp_unit(Image& x) {
    for (auto& v : x.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

// --- weak ------------------------------------------------------------------

WeakParams draw_weak_params(Rng& rng, std::size_t height, std::size_t width) {
    WeakParams p;
    p.flip = rng.bernoulli(0.5);
    const int max_x = static_cast<int>(std::lround(0.125 * static_cast<double>(width)));
    const int max_y = static_cast<int>(std::lround(0.125 * static_cast<double>(height)));
    p.shift_x = rng.integer(-max_x, max_x);
    p.shift_y = rng.integer(-max_y, max_y);
    return p;
}

Image flip_horizontal(const Image& x) {
    Image out(x.channels, x.height, x.width);
    for (std::size_t c = 0; c < x.channels; ++c)
        for (std::size_t y = 0; y < x.height; ++y)
            for (std::size_t i = 0; i < x.width; ++i) out.at(c, y, i) = x.at(c, y, x.width - 1 - i);
    return out;
}

Image translate(const Image& x, int dx, int dy) {
    Image out(x.channels, x.height, x.width, 0.0f);
    const long H = static_cast<long>(x.height), W = static_cast<long>(x.width);
    for (std::size_t c = 0; c < x.channels; ++c)
        for (long y = 0; y < H; ++y)
            for (long i = 0; i < W; ++i) {
                const long sy = y - dy, sx = i - dx;
                if (sy >= 0 && sy < H && sx >= 0 && sx < W) out.at(c, y, i) = x.at(c, sy, sx);
            }
    return out;
}

Image apply_weak(const Image& x, const WeakParams& params) {
    Image out = params.flip ? flip_horizontal(x) : x;
    if (params.shift_x != 0 || params.shift_y != 0) {
        out = translate(out, params.shift_x, params.shift_y);
    }
    return out;
}

Image weak(const Image& x, Rng& rng) { return apply_weak(x, draw_weak_params(rng, x.height, x.width)); }

// --- Fourier ---------------------------------------------------------------

namespace {

ComplexPlane channel_spectrum(std::span<const float> channel, std::size_t H, std::size_t W) {
    std::vector<double> v(channel.begin(), channel.end());
    return fft2(v, H, W);
}

/// Rebuilds a Hermitian spectrum from per-bin target amplitudes and the phase
/// of `source`, so the inverse transform is real. Conjugate partners share one
/// phasor (and the mean of their two amplitudes); self-conjugate bins keep the
/// sign of their real part.
ComplexPlane hermitian_from_phase(const ComplexPlane& source, std::span<const double> amplitude) {
    const std::size_t H = source.height, W = source.width;
    double peak = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i) peak = std::max(peak, source.amplitude(i));
    const double tiny = 1e-12 * std::max(peak, 1e-300);
    ComplexPlane out(H, W);
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            const std::size_t i = u * W + v;
            const std::size_t j = conjugate_bin(u, v, H, W);
            if (j < i) continue;
            const double a = 0.5 * (amplitude[i] + amplitude[j]);
            if (i == j) {
                out.set(i, {source.real[i] < 0.0 ? -a : a, 0.0});
                continue;
            }
            const double m = source.amplitude(i);
            const std::complex<double> phasor =
                m > tiny ? source.at(i) / m : std::complex<double>(1.0, 0.0);
            out.set(i, a * phasor);
            out.set(j, a * std::conj(phasor));
        }
    return out;
}

}  // namespace

AmplitudeSpectrum amplitude_spectrum(const Image& x) {
    AmplitudeSpectrum s{x.channels, x.height, x.width, {}};
    s.values.reserve(x.pixels.size());
    for (std::size_t c = 0; c < x.channels; ++c) {
        const auto spec = channel_spectrum(x.channel(c), x.height, x.width);
        const auto amp = spec.amplitudes();
        s.values.insert(s.values.end(), amp.begin(), amp.end());
    }
    return s;
}

std::optional<std::vector<double>> phase_only_channel(std::span<const float> channel,
                                                      std::size_t height, std::size_t width) {
    const auto [lo, hi] = std::minmax_element(channel.begin(), channel.end());
    if (*hi - *lo <= 0.0f) {
        return std::nullopt;
    }
    const auto spec = channel_spectrum(channel, height, width);
    const std::vector<double> ones(spec.size(), 1.0);
    return ifft2_real(hermitian_from_phase(spec, ones));
}

Image phase_only(const Image& x) {
    Image out(x.channels, x.height, x.width);
    for (std::size_t c = 0; c < x.channels; ++c) {
        auto dst = out.channel(c);
        const auto rebuilt = phase_only_channel(x.channel(c), x.height, x.width);
        if (!rebuilt) {
            log::debug("phase_only: constant channel has no phase structure, using mid-gray");
            std::fill(dst.begin(), dst.end(), 0.5f);
            continue;
        }
        const auto [lo, hi] = std::minmax_element(rebuilt->begin(), rebuilt->end());
        const double range = *hi - *lo;
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = range > 1e-15 ? static_cast<float>(((*rebuilt)[i] - *lo) / range) : 0.5f;
        }
    }
    return out;
}

Image amp_swap(const Image& x, const AmplitudeSpectrum& donor, bool clamp) {
    if (donor.channels != x.channels || donor.height != x.height || donor.width != x.width) {
        throw InputError("amp_swap: donor amplitude shape does not match the image");
    }
    if (std::any_of(donor.values.begin(), donor.values.end(), [](double a) { return a < 0.0; })) {
        throw InputError("amp_swap: donor amplitude has negative entries");
    }
    Image out(x.channels, x.height, x.width);
    const std::size_t plane = x.plane();
    for (std::size_t c = 0; c < x.channels; ++c) {
        const auto spec = channel_spectrum(x.channel(c), x.height, x.width);
        const std::span<const double> amp(donor.values.data() + c * plane, plane);
        const auto rebuilt = ifft2_real(hermitian_from_phase(spec, amp));
        auto dst = out.channel(c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(rebuilt[i]);
    }
    if (clamp) clamp_unit(out);
    return out;
}

// --- texture reduction -----------------------------------------------------

Image quantize(const Image& x, std::size_t levels) {
    if (levels < 2) throw ParameterError("quantize: levels must be >= 2");
    Image out = x;
    const float steps = static_cast<float>(levels - 1);
    for (auto& v : out.pixels) v = std::round(std::clamp(v, 0.0f, 1.0f) * steps) / steps;
    return out;
}

std::vector<std::uint8_t> edge_mask(const Image& x, double threshold) {
    const long H = static_cast<long>(x.height), W = static_cast<long>(x.width);
    std::vector<double> gray(x.plane(), 0.0);
    for (std::size_t c = 0; c < x.channels; ++c) {
        const auto ch = x.channel(c);
        for (std::size_t i = 0; i < gray.size(); ++i) gray[i] += ch[i];
    }
    for (auto& g : gray) g /= static_cast<double>(x.channels);
    auto px = [&](long y, long i) {
        y = std::clamp(y, 0L, H - 1);
        i = std::clamp(i, 0L, W - 1);
        return gray[y * W + i];
    };
    std::vector<std::uint8_t> mask(x.plane(), 0);
    for (long y = 0; y < H; ++y)
        for (long i = 0; i < W; ++i) {
            const double gx = (px(y - 1, i + 1) + 2 * px(y, i + 1) + px(y + 1, i + 1)) -
                              (px(y - 1, i - 1) + 2 * px(y, i - 1) + px(y + 1, i - 1));
            const double gy = (px(y + 1, i - 1) + 2 * px(y + 1, i) + px(y + 1, i + 1)) -
                              (px(y - 1, i - 1) + 2 * px(y - 1, i) + px(y - 1, i + 1));
            mask[y * W + i] = std::hypot(gx, gy) > threshold ? 1 : 0;
        }
    return mask;
}

Image texture_reduce(const Image& x, const AugConfig& cfg) {
    const Image q = quantize(x, cfg.quant_levels);
    const auto mask = edge_mask(q, cfg.edge_threshold);
    Image out = q;
    const long H = static_cast<long>(x.height), W = static_cast<long>(x.width);
    for (std::size_t c = 0; c < x.channels; ++c)
        for (long y = 0; y < H; ++y)
            for (long i = 0; i < W; ++i) {
                if (mask[y * W + i]) continue;
                float acc = 0.0f;
                int count = 0;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        const long sy = y + dy, sx = i + dx;
                        if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                        acc += q.at(c, sy, sx);
                        ++count;
                    }
                out.at(c, y, i) = acc / static_cast<float>(count);
            }
    return out;
}

// --- bank ------------------------------------------------------------------

AmplitudeBank::AmplitudeBank(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ParameterError("amplitude bank capacity must be >= 1");
}

void AmplitudeBank::push(const Image& x) { push(amplitude_spectrum(x)); }

void AmplitudeBank::push(AmplitudeSpectrum spectrum) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(spectrum));
}

const AmplitudeSpectrum& AmplitudeBank::sample(Rng& rng) const {
    if (items_.empty()) throw EmptyBankError("amplitude bank is empty");
    return items_[rng.index(items_.size())];
}

// --- strong ----------------------------------------------------------------

namespace {

float bilinear(const Image& x, std::size_t c, double sy, double sx) {
    const double fy = std::floor(sy), fx = std::floor(sx);
    const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
    const double wy = sy - fy, wx = sx - fx;
    auto px = [&](long y, long i) -> double {
        if (y < 0 || i < 0 || y >= static_cast<long>(x.height) || i >= static_cast<long>(x.width)) {
            return 0.0;
        }
        return x.at(c, y, i);
    };
    return static_cast<float>((1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
                              wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1)));
}

/// Inverse-maps every output pixel through the 2x2 matrix `m` about the center.
Image warp(const Image& x, double m00, double m01, double m10, double m11) {
    Image out(x.channels, x.height, x.width);
    const double cy = (static_cast<double>(x.height) - 1) / 2, cx = (static_cast<double>(x.width) - 1) / 2;
    for (std::size_t c = 0; c < x.channels; ++c)
        for (std::size_t y = 0; y < x.height; ++y)
            for (std::size_t i = 0; i < x.width; ++i) {
                const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(i) - cx;
                out.at(c, y, i) = bilinear(x, c, cy + m10 * dx + m11 * dy, cx + m00 * dx + m01 * dy);
            }
    return out;
}

}  // namespace

Image apply_strong_op(const Image& x, StrongOp op, double m, double sign) {
    Image out = x;
    switch (op) {
        case StrongOp::brightness: {
            const float f = static_cast<float>(1.0 + sign * 0.5 * m);
            for (auto& v : out.pixels) v *= f;
            break;
        }
        case StrongOp::contrast: {
            const float f = static_cast<float>(1.0 + sign * 0.5 * m);
            double mu = 0.0;
            for (float v : x.pixels) mu += v;
            mu /= static_cast<double>(x.pixels.size());
            for (auto& v : out.pixels) v = static_cast<float>((v - mu) * f + mu);
            break;
        }
        case StrongOp::posterize: {
            const int bits = 8 - static_cast<int>(std::lround(4.0 * m));
            const float levels = static_cast<float>(1 << bits);
            for (auto& v : out.pixels)
                v = std::min(std::floor(v * levels), levels - 1.0f) / (levels - 1.0f);
            break;
        }
        case StrongOp::solarize: {
            const float t = static_cast<float>(1.0 - 0.5 * m);
            for (auto& v : out.pixels)
                if (v >= t) v = 1.0f - v;
            break;
        }
        case StrongOp::rotate: {
            const double a = sign * m * 30.0 * std::numbers::pi / 180.0;
            out = warp(x, std::cos(a), -std::sin(a), std::sin(a), std::cos(a));
            break;
        }
        case StrongOp::translate: {
            const int dx = static_cast<int>(std::lround(sign * m * 0.3 * static_cast<double>(x.width)));
            out = translate(x, dx, 0);
            break;
        }
        case StrongOp::shear:
            out = warp(x, 1.0, sign * 0.3 * m, 0.0, 1.0);
            break;
        case StrongOp::stretch:
            for (std::size_t c = 0; c < x.channels; ++c) {
                auto ch = out.channel(c);
                const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
                const float l = *lo, range = *hi - *lo;
                if (range <= 1e-6f) continue;
                for (auto& v : ch) v = (v - l) / range;
            }
            break;
    }
    clamp_unit(out);
    return out;
}

Image cutout(const Image& x, std::size_t top, std::size_t left, std::size_t side) {
    Image out = x;
    for (std::size_t c = 0; c < x.channels; ++c)
        for (std::size_t y = top; y < std::min(top + side, x.height); ++y)
            for (std::size_t i = left; i < std::min(left + side, x.width); ++i) out.at(c, y, i) = 0.5f;
    return out;
}

Image strong(const Image& x, const AmplitudeBank& bank, const AugConfig& cfg, Rng& rng,
             bool use_domain_augs) {
    Image out = x;
    for (std::size_t k = 0; k < cfg.n_ops; ++k) {
        const auto op = static_cast<StrongOp>(rng.index(kStrongOpCount));
        const double m = rng.uniform();
        const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        out = apply_strong_op(out, op, m, sign);
    }
    if (cfg.cutout_fraction > 0.0) {
        const auto side = static_cast<std::size_t>(
            std::lround(rng.uniform() * cfg.cutout_fraction * static_cast<double>(x.width)));
        if (side > 0) {
            const std::size_t top = rng.index(x.height), left = rng.index(x.width);
            out = cutout(out, top, left, side);
        }
    }
    if (use_domain_augs) {
        if (rng.bernoulli(cfg.p_fourier)) {
            const bool want_swap = rng.bernoulli(0.5);
            if (want_swap && !bank.empty()) {
                out = amp_swap(out, bank.sample(rng));
            } else {
                if (want_swap) log::debug("strong: amplitude bank empty, using phase_only");
                out = phase_only(out);
            }
        }
        if (rng.bernoulli(cfg.p_texture)) {
            out = texture_reduce(out, cfg);
        }
    }
    clamp_unit(out);
    return out;
}

}  // namespace semalign
