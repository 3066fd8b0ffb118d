#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semalign/image.hpp"
#include "semalign/rng.hpp"

namespace semalign {

struct DomainData {
    std::string name;
    std::vector<float> images;  // N x C x H x W
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return labels.size(); }
};

/// D source domains sharing one label space and image shape. The sample id
/// of an image is its index within its domain.
struct MultiDomainDataset {
    std::vector<std::string> class_names;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::vector<DomainData> domains;

    std::size_t num_classes() const { return class_names.size(); }
    std::size_t image_size() const { return channels * height * width; }
    std::size_t domain_index(const std::string& name) const;
    Image image(std::size_t domain, std::size_t index) const;
    void validate() const;
};

inline const std::vector<std::string>& shape_class_names() {
    static const std::vector<std::string> names{"circle", "square", "triangle", "cross",
                                                "ring",   "bar",    "diamond"};
    return names;
}

inline const std::vector<std::string>& style_domain_names() {
    static const std::vector<std::string> names{"photo", "art", "cartoon", "sketch"};
    return names;
}

struct GenerateOptions {
    std::size_t classes = 5;
    std::size_t domains = 4;
    std::size_t per_class = 200;
    std::uint64_t seed = 0;
    std::size_t height = 32;
    std::size_t width = 32;
};

/// Synthetic shapes rendered in up to four styles (photo, art, cartoon,
/// sketch). Deterministic per seed.
MultiDomainDataset generate(const GenerateOptions& options);

/// <dir>/manifest.json plus <dir>/<domain>/images.bin (f32le) and labels.bin (u32le).
void save_dataset(const MultiDomainDataset& ds, const std::filesystem::path& dir);
MultiDomainDataset load_dataset(const std::filesystem::path& dir);

/// Labeled indices per source domain; everything else in a source domain is
/// unlabeled.
struct SplitSpec {
    std::size_t labels_per_class = 10;
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<std::size_t>> labeled;
};

/// Draws exactly n labeled samples per class in every source domain.
/// Throws ShortageError naming (domain, class) when a pair has fewer than n.
SplitSpec make_split(const MultiDomainDataset& ds, const std::vector<std::string>& sources,
                     std::size_t labels_per_class, std::uint64_t seed);
void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path);

struct ExperimentSpec {
    std::string target;
    std::vector<std::string> sources;
};

std::vector<ExperimentSpec> leave_one_out(const MultiDomainDataset& ds);

/// What the training path sees: no domain, and no label for unlabeled data.
struct TrainRecord {
    Image image;
    std::optional<std::size_t> label;
    std::size_t sample_id = 0;
};

/// Ground truth for unlabeled samples, indexed by their sample id; read only
/// by metrics.
struct UnlabeledTruth {
    std::size_t label = 0;
    std::size_t domain = 0;
};

struct TrainingPools {
    std::vector<TrainRecord> labeled;
    std::vector<TrainRecord> unlabeled;
    std::vector<UnlabeledTruth> truth;  // truth[i] belongs to unlabeled sample id i
    std::vector<std::string> source_names;
};

TrainingPools build_pools(const MultiDomainDataset& ds, const SplitSpec& split);

/// Endless batches with replacement-free shuffling inside each pass.
class BatchStream {
public:
    BatchStream(const std::vector<TrainRecord>& pool, std::size_t batch_size, Rng rng);

    std::vector<const TrainRecord*> next();
    /// Completed passes; a pass counts once the next batch starts a new one.
    std::size_t passes() const { return passes_; }

private:
    void reshuffle();

    const std::vector<TrainRecord>* pool_;
    std::size_t batch_size_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t passes_ = 0;
};

}  // namespace semalign
