#include "semalign/image.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "semalign/errors.hpp"

namespace semalign {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'I', 'M'};

void put_u32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError(path.string() + ": truncated image blob");
    }
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_image_blob(const Image& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(image.channels));
    put_u32(out, static_cast<std::uint32_t>(image.height));
    put_u32(out, static_cast<std::uint32_t>(image.width));
    for (float v : image.pixels) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

Image read_image_blob(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
        throw FormatError(path.string() + ": bad image magic");
    }
    const auto c = get_u32(in, path);
    const auto h = get_u32(in, path);
    const auto w = get_u32(in, path);
    if (c == 0 || h == 0 || w == 0 || static_cast<std::uint64_t>(c) * h * w > (1u << 26)) {
        throw FormatError(path.string() + ": implausible image extents");
    }
    Image image(c, h, w);
    for (auto& v : image.pixels) v = std::bit_cast<float>(get_u32(in, path));
    return image;
}

}  // namespace semalign
