#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "semalign/image.hpp"
#include "semalign/rng.hpp"

namespace semalign {

struct AugConfig {
    double p_fourier = 0.5;
    double p_texture = 0.25;
    std::size_t quant_levels = 8;
    double edge_threshold = 0.5;  // on Sobel magnitude of a [0, 1] grayscale image
    std::size_t n_ops = 2;
    double cutout_fraction = 0.5;  // max cutout side as a fraction of the image side
    std::size_t bank_capacity = 256;

    void validate() const;
};

// --- weak ------------------------------------------------------------------

struct WeakParams {
    bool flip = false;
    int shift_x = 0;
    int shift_y = 0;
};

/// Flip with p = 0.5 and integer shifts up to 12.5% of each side.
WeakParams draw_weak_params(Rng& rng, std::size_t height, std::size_t width);
Image apply_weak(const Image& x, const WeakParams& params);
Image weak(const Image& x, Rng& rng);

Image flip_horizontal(const Image& x);
/// Shifts content by (dx, dy) pixels, filling vacated pixels with 0.
Image translate(const Image& x, int dx, int dy);

// --- Fourier transforms ----------------------------------------------------

/// Per-channel amplitude spectra, Ch x H x W, all entries >= 0.
struct AmplitudeSpectrum {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;
};

AmplitudeSpectrum amplitude_spectrum(const Image& x);

/// One channel rebuilt from unit amplitudes and its own phase, before any
/// renormalization. Returns nullopt for a constant channel.
std::optional<std::vector<double>> phase_only_channel(std::span<const float> channel,
                                                      std::size_t height, std::size_t width);
/// Phase-only reconstruction per channel, min-max renormalized to [0, 1].
/// Constant channels become mid-gray (with a warning).
Image phase_only(const Image& x);

/// Replaces each channel's amplitude with the donor's, keeping x's phase.
/// Throws InputError on negative donor entries or a shape mismatch.
Image amp_swap(const Image& x, const AmplitudeSpectrum& donor, bool clamp = true);

// --- texture reduction -----------------------------------------------------

Image quantize(const Image& x, std::size_t levels);
/// 1 where the Sobel magnitude of the channel-mean image exceeds `threshold`.
std::vector<std::uint8_t> edge_mask(const Image& x, double threshold);
/// Quantize, then box-blur (3x3) only pixels off the edge mask.
Image texture_reduce(const Image& x, const AugConfig& cfg);

// --- amplitude bank --------------------------------------------------------

/// FIFO store of amplitude spectra from recently seen images.
class AmplitudeBank {
public:
    explicit AmplitudeBank(std::size_t capacity = 256);

    void push(const Image& x);
    void push(AmplitudeSpectrum spectrum);
    /// Uniform draw over the current contents; throws EmptyBankError when empty.
    const AmplitudeSpectrum& sample(Rng& rng) const;

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return items_.empty(); }
    const AmplitudeSpectrum& at(std::size_t i) const { return items_.at(i); }

private:
    std::size_t capacity_;
    std::deque<AmplitudeSpectrum> items_;
};

// --- strong ----------------------------------------------------------------

enum class StrongOp {
    brightness,
    contrast,
    posterize,
    solarize,
    rotate,
    translate,
    shear,
    stretch,
};

inline constexpr std::size_t kStrongOpCount = 8;

/// Applies one pool op at magnitude m in [0, 1] with direction sign (+1/-1).
Image apply_strong_op(const Image& x, StrongOp op, double magnitude, double sign);
/// Fills a side x side square at (top, left) with 0.5.
Image cutout(const Image& x, std::size_t top, std::size_t left, std::size_t side);

/// RandAugment-style ops and cutout, then (with p_fourier) one of phase_only /
/// amp_swap, then (with p_texture) texture_reduce. Output clamped to [0, 1].
/// `use_domain_augs` false skips the Fourier and texture stages.
Image strong(const Image& x, const AmplitudeBank& bank, const AugConfig& cfg, Rng& rng,
             bool use_domain_augs = true);

void clamp_unit(Image& x);

}  // namespace semalign
