#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "semalign/tensor.hpp"

namespace semalign {

/// Spectrum of one H x W channel, stored row-major as separate planes.
struct ComplexPlane {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> real;
    std::vector<double> imag;

    ComplexPlane() = default;
    ComplexPlane(std::size_t h, std::size_t w) : height(h), width(w), real(h * w), imag(h * w) {}

    std::size_t size() const { return real.size(); }
    std::complex<double> at(std::size_t i) const { return {real[i], imag[i]}; }
    void set(std::size_t i, std::complex<double> v) {
        real[i] = v.real();
        imag[i] = v.imag();
    }
    double amplitude(std::size_t i) const;
    double phase(std::size_t i) const;
    std::vector<double> amplitudes() const;
    /// Sum of squared magnitudes.
    double energy() const;
};

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place radix-2 transform of a length-2^k sequence. `inverse` applies the
/// conjugate twiddles and the 1/n scale.
void fft1d(std::span<std::complex<double>> data, bool inverse);

ComplexPlane fft2(std::span<const double> channel, std::size_t height, std::size_t width);
ComplexPlane fft2(const ComplexPlane& plane);
ComplexPlane ifft2(const ComplexPlane& spectrum);
/// Real part of the inverse transform.
std::vector<double> ifft2_real(const ComplexPlane& spectrum);

/// H x W tensor overload.
template <typename T>
ComplexPlane fft2(const Tensor<T>& channel);

/// Index of the bin holding the complex conjugate partner of bin (u, v).
inline std::size_t conjugate_bin(std::size_t u, std::size_t v, std::size_t height,
                                 std::size_t width) {
    return ((height - u) % height) * width + (width - v) % width;
}

}  // namespace semalign
