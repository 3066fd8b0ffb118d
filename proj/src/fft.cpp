#include "semalign/fft.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "semalign/errors.hpp"

namespace semalign {

double ComplexPlane::amplitude(std::size_t i) const { return std::hypot(real[i], imag[i]); }

double ComplexPlane::phase(std::size_t i) const { return std::atan2(imag[i], real[i]); }

std::vector<double> ComplexPlane::amplitudes() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = amplitude(i);
    return out;
}

double ComplexPlane::energy() const {
    double e = 0.0;
    for (std::size_t i = 0; i < size(); ++i) e += real[i] * real[i] + imag[i] * imag[i];
    return e;
}

void fft1d(std::span<std::complex<double>> data, bool inverse) {
    const std::size_t n = data.size();
    if (!is_power_of_two(n)) {
        throw UnsupportedSizeError("fft: length " + std::to_string(n) + " is not a power of two");
    }
    // bit reversal
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(data[i], data[j]);
    }
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double theta = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        const std::size_t half = len / 2;
        for (std::size_t k = 0; k < half; ++k) {
            // direct twiddles; recurrences drift at larger n
            const std::complex<double> w(std::cos(theta * k), std::sin(theta * k));
            for (std::size_t start = 0; start < n; start += len) {
                const auto u = data[start + k];
                const auto t = w * data[start + k + half];
                data[start + k] = u + t;
                data[start + k + half] = u - t;
            }
        }
    }
    if (inverse) {
        const double scale = 1.0 / static_cast<double>(n);
        for (auto& v : data) v *= scale;
    }
}

namespace {

ComplexPlane transform(ComplexPlane plane, bool inverse) {
    const std::size_t H = plane.height, W = plane.width;
    if (!is_power_of_two(H) || !is_power_of_two(W)) {
        throw UnsupportedSizeError("fft2: extent " + std::to_string(H) + "x" + std::to_string(W) +
                                   " is not a power of two");
    }
    std::vector<std::complex<double>> buf(std::max(H, W));
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) buf[c] = plane.at(r * W + c);
        fft1d(std::span(buf.data(), W), inverse);
        for (std::size_t c = 0; c < W; ++c) plane.set(r * W + c, buf[c]);
    }
    for (std::size_t c = 0; c < W; ++c) {
        for (std::size_t r = 0; r < H; ++r) buf[r] = plane.at(r * W + c);
        fft1d(std::span(buf.data(), H), inverse);
        for (std::size_t r = 0; r < H; ++r) plane.set(r * W + c, buf[r]);
    }
    return plane;
}

}  // namespace

ComplexPlane fft2(std::span<const double> channel, std::size_t height, std::size_t width) {
    if (channel.size() != height * width) {
        throw DimensionError("fft2: " + std::to_string(channel.size()) + " values for " +
                             std::to_string(height) + "x" + std::to_string(width));
    }
    ComplexPlane plane(height, width);
    std::copy(channel.begin(), channel.end(), plane.real.begin());
    return transform(std::move(plane), false);
}

ComplexPlane fft2(const ComplexPlane& plane) { return transform(plane, false); }

ComplexPlane ifft2(const ComplexPlane& spectrum) { return transform(spectrum, true); }

std::vector<double> ifft2_real(const ComplexPlane& spectrum) { return ifft2(spectrum).real; }

template <typename T>
ComplexPlane fft2(const Tensor<T>& channel) {
    if (channel.rank() != 2) {
        throw DimensionError("fft2: expected an H x W tensor, got " + shape_str(channel.shape()));
    }
    std::vector<double> values(channel.data().begin(), channel.data().end());
    return fft2(values, channel.dim(0), channel.dim(1));
}

template ComplexPlane fft2(const Tensor<float>&);
template ComplexPlane fft2(const Tensor<double>&);

}  // namespace semalign
