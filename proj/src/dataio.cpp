#include "semalign/dataio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "json.hpp"
#include "semalign/errors.hpp"

namespace semalign {

using nlohmann::json;

std::size_t MultiDomainDataset::domain_index(const std::string& name) const {
    for (std::size_t i = 0; i < domains.size(); ++i) {
        if (domains[i].name == name) return i;
    }
    throw InputError("unknown domain '" + name + "'");
}

Image MultiDomainDataset::image(std::size_t domain, std::size_t index) const {
    Image img(channels, height, width);
    const auto& d = domains.at(domain);
    const std::size_t n = image_size();
    std::copy_n(d.images.begin() + static_cast<std::ptrdiff_t>(index * n), n, img.pixels.begin());
    return img;
}

void MultiDomainDataset::validate() const {
    if (class_names.size() < 2) throw FormatError("dataset: need at least 2 classes");
    std::set<std::string> names;
    for (const auto& d : domains) {
        if (!names.insert(d.name).second) throw FormatError("dataset: duplicate domain " + d.name);
        if (d.images.size() != d.size() * image_size()) {
            throw FormatError("dataset: domain " + d.name + " has " + std::to_string(d.images.size()) +
                              " values for " + std::to_string(d.size()) + " images");
        }
        for (auto y : d.labels) {
            if (y >= class_names.size()) {
                throw FormatError("dataset: domain " + d.name + " has label " + std::to_string(y) +
                                  " out of range");
            }
        }
    }
}

// --- generator -------------------------------------------------------------

namespace {

using Rgb = std::array<float, 3>;

Rgb hsv(double h, double s, double v) {
    h = std::fmod(std::fmod(h, 1.0) + 1.0, 1.0) * 6.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r = v, g = t, b = p;
    switch (i) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

/// Signed distance-like function in shape units (negative inside).
double shape_sdf(std::size_t cls, double x, double y) {
    const double ax = std::abs(x), ay = std::abs(y);
    switch (cls) {
        case 0: return std::hypot(x, y) - 1.0;                                        // circle
        case 1: return std::max(ax, ay) - 0.85;                                       // square
        case 2: return std::max(ax * 0.866 + y * 0.5, -y) - 0.55;                    // triangle
        case 3: return std::min(std::max(ax - 1.0, ay - 0.3), std::max(ax - 0.3, ay - 1.0));  // cross
        case 4: return std::abs(std::hypot(x, y) - 0.75) - 0.22;                      // ring
        case 5: return std::max(ax - 1.0, ay - 0.28);                                 // bar
        default: return (ax + ay - 1.0) / std::numbers::sqrt2;                        // diamond
    }
}

struct Placement {
    double cx, cy, radius, angle;
};

enum class Style { photo, art, cartoon, sketch };

Style style_of(const std::string& name) {
    if (name == "photo") return Style::photo;
    if (name == "art") return Style::art;
    if (name == "cartoon") return Style::cartoon;
    return Style::sketch;
}

void render(std::size_t cls, Style style, Rng& rng, std::size_t H, std::size_t W, float* out) {
    const double side = static_cast<double>(std::min(H, W));
    Placement pl{static_cast<double>(W) / 2 + rng.uniform(-0.12, 0.12) * side,
                 static_cast<double>(H) / 2 + rng.uniform(-0.12, 0.12) * side,
                 rng.uniform(0.24, 0.34) * side, rng.uniform(-0.5, 0.5)};
    const double ca = std::cos(pl.angle), sa = std::sin(pl.angle);

    const double hue = rng.uniform();
    Rgb fill = hsv(hue, rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0));
    Rgb back = hsv(hue + rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.6), rng.uniform(0.15, 0.5));
    Rgb stripe = hsv(hue + 0.5, 0.8, 0.9);
    double outline = 0.0;
    switch (style) {
        case Style::sketch:
            fill = back = {0.97f, 0.97f, 0.97f};
            outline = rng.uniform(1.0, 1.8);
            break;
        case Style::cartoon:
            back = hsv(hue + rng.uniform(0.3, 0.7), 0.25, 0.95);
            outline = rng.uniform(2.2, 3.2);
            break;
        case Style::art:
            back = hsv(hue + rng.uniform(0.2, 0.8), 0.5, 0.7);
            break;
        case Style::photo:
            break;
    }
    const double stripe_angle = rng.uniform(0.0, std::numbers::pi);
    const double stripe_freq = rng.uniform(0.5, 0.9);
    const double light_x = rng.uniform(-1, 1), light_y = rng.uniform(-1, 1);
    const float line_gray = static_cast<float>(rng.uniform(0.0, 0.25));

    const std::size_t plane = H * W;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - pl.cx, dy = static_cast<double>(y) + 0.5 - pl.cy;
            const double lx = (ca * dx + sa * dy) / pl.radius, ly = (-sa * dx + ca * dy) / pl.radius;
            const double sdf_px = shape_sdf(cls, lx, ly) * pl.radius;
            const bool inside = sdf_px <= 0.0;
            Rgb px{};
            switch (style) {
                case Style::photo: {
                    const double shade = 0.15 * (lx * light_x + ly * light_y);
                    for (int c = 0; c < 3; ++c) {
                        const double base = inside ? fill[c] + shade : back[c];
                        px[c] = static_cast<float>(base + rng.normal() * (inside ? 0.04 : 0.12));
                    }
                    break;
                }
                case Style::art: {
                    const double u = std::cos(stripe_angle) * static_cast<double>(x) +
                                     std::sin(stripe_angle) * static_cast<double>(y);
                    const bool band = std::sin(u * stripe_freq * 2.0) > 0.0;
                    const double swirl = 0.08 * std::sin(0.4 * static_cast<double>(x) + 0.3 * static_cast<double>(y));
                    for (int c = 0; c < 3; ++c) {
                        const double base = inside ? (band ? fill[c] : stripe[c]) : back[c] + swirl;
                        px[c] = static_cast<float>(base + rng.normal() * 0.03);
                    }
                    break;
                }
                case Style::cartoon: {
                    const bool edge = std::abs(sdf_px) <= outline / 2;
                    for (int c = 0; c < 3; ++c) px[c] = edge ? 0.05f : (inside ? fill[c] : back[c]);
                    break;
                }
                case Style::sketch: {
                    const bool edge = std::abs(sdf_px) <= outline / 2;
                    const float v = edge ? line_gray : 0.97f;
                    px = {v, v, v};
                    break;
                }
            }
            for (int c = 0; c < 3; ++c) out[c * plane + y * W + x] = std::clamp(px[c], 0.0f, 1.0f);
        }
}

}  // namespace

MultiDomainDataset generate(const GenerateOptions& o) {
    if (o.classes < 2) throw InputError("generate: need at least 2 classes");
    if (o.classes > shape_class_names().size()) {
        throw InputError("generate: unsupported class count " + std::to_string(o.classes) +
                         " (at most " + std::to_string(shape_class_names().size()) + ")");
    }
    if (o.domains < 2 || o.domains > style_domain_names().size()) {
        throw InputError("generate: unsupported domain count " + std::to_string(o.domains) +
                         " (2 to " + std::to_string(style_domain_names().size()) + ")");
    }
    if (o.per_class == 0) throw InputError("generate: per_class must be >= 1");
    for (const std::size_t side : {o.height, o.width}) {
        if (side < 8 || (side & (side - 1)) != 0) {
            throw InputError("generate: image side " + std::to_string(side) + " is not a power of two >= 8");
        }
    }
    MultiDomainDataset ds;
    ds.class_names.assign(shape_class_names().begin(), shape_class_names().begin() + static_cast<std::ptrdiff_t>(o.classes));
    ds.height = o.height;
    ds.width = o.width;
    const std::size_t n = ds.image_size();
    for (std::size_t d = 0; d < o.domains; ++d) {
        DomainData dom;
        dom.name = style_domain_names()[d];
        const Style style = style_of(dom.name);
        dom.images.resize(o.classes * o.per_class * n);
        for (std::size_t c = 0; c < o.classes; ++c)
            for (std::size_t i = 0; i < o.per_class; ++i) {
                const std::size_t idx = c * o.per_class + i;
                Rng rng(stable_hash(dom.name) ^ mix_seed(o.seed * 1000003ULL + idx));
                render(c, style, rng, o.height, o.width, dom.images.data() + idx * n);
                dom.labels.push_back(static_cast<std::uint32_t>(c));
            }
        ds.domains.push_back(std::move(dom));
    }
    return ds;
}

// --- disk format -----------------------------------------------------------

namespace {

template <typename U>
void write_le(const std::filesystem::path& path, std::span<const U> values) {
    static_assert(sizeof(U) == 4);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    std::vector<unsigned char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int k = 0; k < 4; ++k) bytes[i * 4 + k] = static_cast<unsigned char>(bits >> (8 * k));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename U>
std::vector<U> read_le(const std::filesystem::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes(count * 4);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw FormatError(path.string() + ": expected " + std::to_string(count) + " values");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": trailing bytes after " + std::to_string(count) + " values");
    }
    std::vector<U> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[i * 4 + k]) << (8 * k);
        out[i] = std::bit_cast<U>(bits);
    }
    return out;
}

}  // namespace

void save_dataset(const MultiDomainDataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["classes"] = ds.class_names;
    manifest["shape"] = {ds.channels, ds.height, ds.width};
    manifest["dtype"] = "f32le";
    manifest["domains"] = json::array();
    manifest["counts"] = json::object();
    for (const auto& d : ds.domains) {
        std::filesystem::create_directories(dir / d.name);
        write_le<float>(dir / d.name / "images.bin", d.images);
        write_le<std::uint32_t>(dir / d.name / "labels.bin", d.labels);
        manifest["domains"].push_back({{"name", d.name},
                                       {"count", d.size()},
                                       {"images", d.name + "/images.bin"},
                                       {"labels", d.name + "/labels.bin"}});
        std::vector<std::size_t> per_class(ds.num_classes(), 0);
        for (auto y : d.labels) ++per_class[y];
        manifest["counts"][d.name] = per_class;
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

MultiDomainDataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open " + manifest_path.string());
    MultiDomainDataset ds;
    try {
        json manifest;
        in >> manifest;
        if (manifest.value("dtype", "f32le") != "f32le") {
            throw FormatError(manifest_path.string() + ": unsupported dtype");
        }
        ds.class_names = manifest.at("classes").get<std::vector<std::string>>();
        const auto shape = manifest.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 3) throw FormatError(manifest_path.string() + ": shape must have 3 entries");
        ds.channels = shape[0];
        ds.height = shape[1];
        ds.width = shape[2];
        for (const auto& d : manifest.at("domains")) {
            DomainData dom;
            dom.name = d.at("name").get<std::string>();
            const auto count = d.at("count").get<std::size_t>();
            dom.images = read_le<float>(dir / d.at("images").get<std::string>(), count * ds.image_size());
            dom.labels = read_le<std::uint32_t>(dir / d.at("labels").get<std::string>(), count);
            ds.domains.push_back(std::move(dom));
        }
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

// --- splits ----------------------------------------------------------------

SplitSpec make_split(const MultiDomainDataset& ds, const std::vector<std::string>& sources,
                     std::size_t labels_per_class, std::uint64_t seed) {
    SplitSpec split;
    split.labels_per_class = labels_per_class;
    split.seed = seed;
    for (const auto& name : sources) {
        const auto& dom = ds.domains[ds.domain_index(name)];
        Rng rng(seed ^ stable_hash(name));
        std::vector<std::size_t> chosen;
        for (std::size_t c = 0; c < ds.num_classes(); ++c) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < dom.size(); ++i)
                if (dom.labels[i] == c) members.push_back(i);
            if (members.size() < labels_per_class) {
                throw ShortageError("split: domain '" + name + "' class '" + ds.class_names[c] + "' has " +
                                    std::to_string(members.size()) + " samples, need " +
                                    std::to_string(labels_per_class));
            }
            std::shuffle(members.begin(), members.end(), rng.engine());
            chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(labels_per_class));
        }
        std::sort(chosen.begin(), chosen.end());
        split.labeled[name] = std::move(chosen);
    }
    return split;
}

void save_split(const SplitSpec& split, const std::filesystem::path& path) {
    json doc;
    doc["labels_per_class"] = split.labels_per_class;
    doc["seed"] = split.seed;
    doc["labeled"] = split.labeled;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

SplitSpec load_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        json doc;
        in >> doc;
        SplitSpec split;
        split.labels_per_class = doc.at("labels_per_class").get<std::size_t>();
        split.seed = doc.at("seed").get<std::uint64_t>();
        split.labeled = doc.at("labeled").get<std::map<std::string, std::vector<std::size_t>>>();
        return split;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<ExperimentSpec> leave_one_out(const MultiDomainDataset& ds) {
    if (ds.domains.size() < 2) throw InputError("leave_one_out: need at least 2 domains");
    std::vector<ExperimentSpec> specs;
    for (const auto& target : ds.domains) {
        ExperimentSpec spec;
        spec.target = target.name;
        for (const auto& d : ds.domains)
            if (d.name != target.name) spec.sources.push_back(d.name);
        specs.push_back(std::move(spec));
    }
    return specs;
}

TrainingPools build_pools(const MultiDomainDataset& ds, const SplitSpec& split) {
    TrainingPools pools;
    // dataset order, not map order
    for (const auto& d : ds.domains)
        if (split.labeled.count(d.name)) pools.source_names.push_back(d.name);
    if (pools.source_names.size() != split.labeled.size()) {
        throw FormatError("split names a domain that is not in the dataset");
    }
    for (const auto& name : pools.source_names) {
        const std::size_t di = ds.domain_index(name);
        const auto& dom = ds.domains[di];
        const auto& labeled = split.labeled.at(name);
        std::vector<bool> is_labeled(dom.size(), false);
        for (auto i : labeled) {
            if (i >= dom.size()) throw FormatError("split: index " + std::to_string(i) + " out of range in " + name);
            is_labeled[i] = true;
        }
        for (std::size_t i = 0; i < dom.size(); ++i) {
            if (is_labeled[i]) {
                pools.labeled.push_back({ds.image(di, i), dom.labels[i], pools.labeled.size()});
            } else {
                pools.unlabeled.push_back({ds.image(di, i), std::nullopt, pools.unlabeled.size()});
                pools.truth.push_back({dom.labels[i], di});
            }
        }
    }
    return pools;
}

BatchStream::BatchStream(const std::vector<TrainRecord>& pool, std::size_t batch_size, Rng rng)
    : pool_(&pool), batch_size_(batch_size), rng_(std::move(rng)) {
    if (pool.empty()) throw InputError("batch stream over an empty pool");
    if (batch_size == 0) throw ParameterError("batch size must be >= 1");
    order_.resize(pool.size());
    reshuffle();
}

void BatchStream::reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_.engine());
    cursor_ = 0;
}

std::vector<const TrainRecord*> BatchStream::next() {
    std::vector<const TrainRecord*> batch;
    batch.reserve(batch_size_);
    while (batch.size() < batch_size_) {
        if (cursor_ == order_.size()) {
            ++passes_;
            reshuffle();
        }
        batch.push_back(&(*pool_)[order_[cursor_++]]);
    }
    return batch;
}

}  // namespace semalign
