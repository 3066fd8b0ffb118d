#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace semalign {

/// Channel-major float image, nominally in [0, 1].
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
        : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

    std::size_t plane() const { return height * width; }
    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[(c * height + y) * width + x];
    }
    std::span<float> channel(std::size_t c) { return {pixels.data() + c * plane(), plane()}; }
    std::span<const float> channel(std::size_t c) const {
        return {pixels.data() + c * plane(), plane()};
    }
    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

/// Raw image blob: magic "SAIM", then u32 channels, height, width (little
/// endian), then channels*height*width little-endian f32 values.
void write_image_blob(const Image& image, const std::filesystem::path& path);
Image read_image_blob(const std::filesystem::path& path);

}  // namespace semalign
