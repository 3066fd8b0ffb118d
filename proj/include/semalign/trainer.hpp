#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semalign/augment.hpp"
#include "semalign/dataio.hpp"
#include "semalign/metrics.hpp"
#include "semalign/model.hpp"
#include "semalign/objectives.hpp"
#include "semalign/prototypes.hpp"
#include "semalign/rng.hpp"

namespace semalign {

/// Component switches. Everything off is plain FixMatch.
struct AblationFlags {
    bool use_out = true;         // EML + ANL
    bool use_sa = true;          // semantic alignment
    bool use_con = true;         // prototype contrast
    bool use_orth = true;        // RFR + orthogonality loss
    bool use_aug = true;         // Fourier and texture augmentations
    bool use_stochastic = true;  // Gaussian classifier weights

    /// Parses a comma separated list of components to disable, drawn from
    /// out, sa, con, orth, aug, sc. Throws ParameterError on unknown tokens.
    static AblationFlags disable(const std::string& list);
    /// Inverse of disable(): the disabled components in canonical order.
    std::string disabled() const;
    bool uses_prototypes() const { return use_sa || use_con || use_orth; }
    bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
    std::size_t batch_labeled = 16;
    std::size_t batch_unlabeled = 16;
    std::size_t epochs = 20;
    /// 0 means one pass over the labeled pool: ceil(n_labeled / batch_labeled).
    std::size_t steps_per_epoch = 30;
    std::size_t labels_per_class = 10;
    double lr_extractor = 0.003;
    double lr_head = 0.01;  // classifier and RFR
    double momentum = 0.9;
    double tau = 0.95;
    double tau_anl = 0.99;
    double tau_sem = 0.07;
    double alpha = 0.9;
    double classifier_scale = 10.0;
    double rho_init = -4.0;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::vector<std::size_t> widths{16, 32, 64};
    AblationFlags ablation;
    AugConfig aug;

    void validate() const;
};

std::string config_json(const TrainConfig& cfg);
TrainConfig parse_config_json(const std::string& text);

/// lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
double lr_schedule(std::size_t step, std::size_t total_steps, double lr0);

/// One training batch after augmentation, stacked as
/// [labeled weak | unlabeled weak | unlabeled strong].
struct StepViews {
    Tensor<float> images;
    std::vector<std::size_t> labels;
    std::size_t labeled = 0;
    std::size_t unlabeled = 0;
    std::vector<Image> unlabeled_weak;  // pushed to the amplitude bank after the step
};

struct StepResult {
    LossValues losses;
    std::size_t passed = 0;
};

/// Mutable run state. Each purpose has its own generator.
struct RunState {
    std::size_t step = 0;
    std::size_t epoch = 0;
    Rng data;
    Rng augment;
    Rng classifier;
    std::map<std::string, std::vector<float>> velocity;
};

/// Stacks same-shaped images into an N x C x H x W tensor.
Tensor<float> stack_images(std::span<const Image> images);
Tensor<float> stack_images(std::span<const TrainRecord* const> records);

class Trainer {
public:
    /// `embeddings` may be null only when no prototype-based component is on.
    Trainer(TrainConfig cfg, std::size_t num_classes, const ExtractorConfig& extractor,
            const EmbeddingFile* embeddings);

    StepViews make_views(std::span<const TrainRecord* const> labeled,
                         std::span<const TrainRecord* const> unlabeled);

    /// Forward, losses, backward and one SGD update at the given learning
    /// rates. Throws NonFiniteLossError (with every term listed) on overflow.
    StepResult train_step(const StepViews& views, double lr_extractor, double lr_head);
    /// Same, at the cosine-scheduled rates for the current step.
    StepResult train_step(const StepViews& views, std::size_t total_steps);

    /// Eval-mode logits and features, no graph, chunked. No rng is consumed.
    Tensor<float> logits(const Tensor<float>& images) const;
    struct EvalOutputs {
        std::vector<float> features;       // N x dim
        std::vector<float> probabilities;  // N x C
    };
    EvalOutputs evaluate(std::span<const Image> images) const;
    std::vector<float> features(std::span<const Image> images) const { return evaluate(images).features; }
    std::vector<float> probabilities(std::span<const Image> images) const {
        return evaluate(images).probabilities;
    }

    const TrainConfig& config() const { return cfg_; }
    std::size_t num_classes() const { return classes_; }
    RunState& state() { return state_; }
    const FeatureExtractor<float>& extractor() const { return extractor_; }
    const StochasticClassifier<float>& classifier() const { return classifier_; }
    StochasticClassifier<float>& classifier() { return classifier_; }
    const std::optional<PrototypeSet<float>>& prototypes() const { return protos_; }
    const AmplitudeBank& bank() const { return bank_; }
    ParamList<float> parameters() const;

private:
    void sgd(double lr_extractor, double lr_head);

    TrainConfig cfg_;
    std::size_t classes_;
    FeatureExtractor<float> extractor_;
    StochasticClassifier<float> classifier_;
    std::optional<PrototypeSet<float>> protos_;
    AmplitudeBank bank_;
    RunState state_;
};

/// Called after each epoch with the finished row.
using EpochCallback = std::function<void(const EpochReport&)>;

/// Leave-one-out run: trains on spec.sources, evaluates on spec.target each
/// epoch. With `out_dir` set, writes config.json (before training),
/// split.json, log.txt, checkpoint/, report.json and report.csv.
RunReport run_experiment(const MultiDomainDataset& data, const EmbeddingFile* embeddings,
                         const ExperimentSpec& spec, const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                         const EpochCallback& on_epoch = {});

/// Target-domain top-1 accuracy of a trained model.
double target_accuracy(const Trainer& trainer, const MultiDomainDataset& data, const std::string& target);

}  // namespace semalign
