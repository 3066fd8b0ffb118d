#include "semalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "semalign/errors.hpp"
#include "semalign/log.hpp"
#include "semalign/ops.hpp"

namespace semalign {

using nlohmann::json;

// --- config ----------------------------------------------------------------

namespace {

struct FlagName {
    const char* token;
    bool AblationFlags::*flag;
};

constexpr FlagName kFlagNames[] = {
    {"out", &AblationFlags::use_out},   {"sa", &AblationFlags::use_sa},
    {"con", &AblationFlags::use_con},   {"orth", &AblationFlags::use_orth},
    {"aug", &AblationFlags::use_aug},   {"sc", &AblationFlags::use_stochastic},
};

}  // namespace

AblationFlags AblationFlags::disable(const std::string& list) {
    AblationFlags flags;
    std::stringstream ss(list);
    std::string token;
    while (std::getline(ss, token, ',')) {
        token.erase(0, token.find_first_not_of(" \t"));
        token.erase(token.find_last_not_of(" \t") + 1);
        if (token.empty()) continue;
        const auto it = std::find_if(std::begin(kFlagNames), std::end(kFlagNames),
                                     [&](const FlagName& f) { return token == f.token; });
        if (it == std::end(kFlagNames)) {
            throw ParameterError("unknown ablation '" + token + "' (valid: out, sa, con, orth, aug, sc)");
        }
        flags.*(it->flag) = false;
    }
    return flags;
}

std::string AblationFlags::disabled() const {
    std::string out;
    for (const auto& f : kFlagNames) {
        if (!(this->*(f.flag))) out += (out.empty() ? "" : ",") + std::string(f.token);
    }
    return out;
}

void TrainConfig::validate() const {
    if (batch_labeled == 0 || batch_unlabeled == 0) throw ParameterError("batch sizes must be >= 1");
    if (epochs == 0) throw ParameterError("epochs must be >= 1");
    if (labels_per_class == 0) throw ParameterError("labels_per_class must be >= 1");
    if (!(lr_extractor > 0) || !(lr_head > 0)) throw ParameterError("learning rates must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw ParameterError("momentum must lie in [0, 1)");
    if (!(tau > 0 && tau <= 1)) throw ParameterError("tau must lie in (0, 1]");
    if (!(tau_anl > 0 && tau_anl <= 1)) throw ParameterError("tau_anl must lie in (0, 1]");
    if (!(tau_sem > 0)) throw ParameterError("tau_sem must be > 0");
    if (!(alpha >= 0 && alpha <= 1)) throw ParameterError("alpha must lie in [0, 1]");
    if (!(classifier_scale > 0)) throw ParameterError("classifier_scale must be > 0");
    if (threads == 0) throw ParameterError("threads must be >= 1");
    if (widths.empty()) throw ParameterError("widths must not be empty");
    aug.validate();
}

std::string config_json(const TrainConfig& c) {
    json j;
    j["batch_labeled"] = c.batch_labeled;
    j["batch_unlabeled"] = c.batch_unlabeled;
    j["epochs"] = c.epochs;
    j["steps_per_epoch"] = c.steps_per_epoch;
    j["labels_per_class"] = c.labels_per_class;
    j["lr_extractor"] = c.lr_extractor;
    j["lr_head"] = c.lr_head;
    j["momentum"] = c.momentum;
    j["tau"] = c.tau;
    j["tau_anl"] = c.tau_anl;
    j["tau_sem"] = c.tau_sem;
    j["alpha"] = c.alpha;
    j["classifier_scale"] = c.classifier_scale;
    j["rho_init"] = c.rho_init;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["widths"] = c.widths;
    j["ablation"] = {{"use_out", c.ablation.use_out},   {"use_sa", c.ablation.use_sa},
                     {"use_con", c.ablation.use_con},   {"use_orth", c.ablation.use_orth},
                     {"use_aug", c.ablation.use_aug},   {"use_stochastic", c.ablation.use_stochastic}};
    j["aug"] = {{"p_fourier", c.aug.p_fourier},         {"p_texture", c.aug.p_texture},
                {"quant_levels", c.aug.quant_levels},   {"edge_threshold", c.aug.edge_threshold},
                {"n_ops", c.aug.n_ops},                 {"cutout_fraction", c.aug.cutout_fraction},
                {"bank_capacity", c.aug.bank_capacity}};
    return j.dump(2) + "\n";
}

TrainConfig parse_config_json(const std::string& text) {
    TrainConfig c;
    try {
        const auto j = json::parse(text);
        auto get = [&](const json& obj, const char* key, auto& field) {
            if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
        };
        get(j, "batch_labeled", c.batch_labeled);
        get(j, "batch_unlabeled", c.batch_unlabeled);
        get(j, "epochs", c.epochs);
        get(j, "steps_per_epoch", c.steps_per_epoch);
        get(j, "labels_per_class", c.labels_per_class);
        get(j, "lr_extractor", c.lr_extractor);
        get(j, "lr_head", c.lr_head);
        get(j, "momentum", c.momentum);
        get(j, "tau", c.tau);
        get(j, "tau_anl", c.tau_anl);
        get(j, "tau_sem", c.tau_sem);
        get(j, "alpha", c.alpha);
        get(j, "classifier_scale", c.classifier_scale);
        get(j, "rho_init", c.rho_init);
        get(j, "seed", c.seed);
        get(j, "threads", c.threads);
        get(j, "widths", c.widths);
        if (j.contains("ablation")) {
            const auto& a = j["ablation"];
            get(a, "use_out", c.ablation.use_out);
            get(a, "use_sa", c.ablation.use_sa);
            get(a, "use_con", c.ablation.use_con);
            get(a, "use_orth", c.ablation.use_orth);
            get(a, "use_aug", c.ablation.use_aug);
            get(a, "use_stochastic", c.ablation.use_stochastic);
        }
        if (j.contains("aug")) {
            const auto& a = j["aug"];
            get(a, "p_fourier", c.aug.p_fourier);
            get(a, "p_texture", c.aug.p_texture);
            get(a, "quant_levels", c.aug.quant_levels);
            get(a, "edge_threshold", c.aug.edge_threshold);
            get(a, "n_ops", c.aug.n_ops);
            get(a, "cutout_fraction", c.aug.cutout_fraction);
            get(a, "bank_capacity", c.aug.bank_capacity);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

double lr_schedule(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0 || step > total_steps) {
        throw ParameterError("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                             std::to_string(total_steps) + "]");
    }
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// --- views -----------------------------------------------------------------

Tensor<float> stack_images(std::span<const Image> images) {
    if (images.empty()) throw InputError("stack_images: no images");
    const Image& first = images.front();
    std::vector<float> data;
    data.reserve(images.size() * first.pixels.size());
    for (const auto& img : images) {
        if (!img.same_shape(first)) throw DimensionError("stack_images: images differ in shape");
        data.insert(data.end(), img.pixels.begin(), img.pixels.end());
    }
    return Tensor<float>::from({images.size(), first.channels, first.height, first.width}, std::move(data));
}

Tensor<float> stack_images(std::span<const TrainRecord* const> records) {
    std::vector<Image> images;
    images.reserve(records.size());
    for (const auto* r : records) images.push_back(r->image);
    return stack_images(images);
}

namespace {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// independent, so the result does not depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::size_t num_classes, const ExtractorConfig& extractor,
                 const EmbeddingFile* embeddings)
    : cfg_(std::move(cfg)), classes_(num_classes), bank_(cfg_.aug.bank_capacity) {
    cfg_.validate();
    if (num_classes < 2) throw InputError("trainer: need at least 2 classes");
    if (cfg_.ablation.uses_prototypes() && embeddings == nullptr) {
        throw InputError("trainer: prototype components are enabled but no embeddings were given");
    }
    state_.data = Rng(cfg_.seed ^ stable_hash("data"));
    state_.augment = Rng(cfg_.seed ^ stable_hash("augment"));
    state_.classifier = Rng(cfg_.seed ^ stable_hash("classifier"));
    Rng init(cfg_.seed ^ stable_hash("init"));

    ExtractorConfig ext = extractor;
    ext.widths = cfg_.widths;
    if (embeddings) {
        embeddings->validate();
        if (embeddings->classes.size() != num_classes) {
            throw InputError("trainer: embeddings have " + std::to_string(embeddings->classes.size()) +
                             " classes, data has " + std::to_string(num_classes));
        }
        ext.dim = embeddings->dim;
    }
    extractor_ = FeatureExtractor<float>(ext, init);
    classifier_ = StochasticClassifier<float>(num_classes, ext.dim, init, static_cast<float>(cfg_.classifier_scale),
                                              static_cast<float>(cfg_.rho_init));
    if (embeddings) protos_ = build_prototypes<float>(*embeddings, init, static_cast<float>(cfg_.alpha));
}

ParamList<float> Trainer::parameters() const {
    auto params = extractor_.parameters();
    for (auto& p : classifier_.parameters()) params.push_back(p);
    if (protos_) {
        for (auto& p : protos_->refiner.parameters()) params.push_back(p);
    }
    return params;
}

StepViews Trainer::make_views(std::span<const TrainRecord* const> labeled,
                              std::span<const TrainRecord* const> unlabeled) {
    if (labeled.empty() || unlabeled.empty()) throw InputError("make_views: empty batch");
    const std::size_t L = labeled.size(), U = unlabeled.size();
    // Seeds are drawn serially so the views do not depend on the thread count.
    std::vector<std::uint64_t> seeds(L + U);
    for (auto& s : seeds) s = state_.augment.next();

    std::vector<Image> out(L + 2 * U);
    parallel_for(L + U, cfg_.threads, [&](std::size_t i) {
        Rng rng(seeds[i]);
        if (i < L) {
            out[i] = weak(labeled[i]->image, rng);
        } else {
            const Image& x = unlabeled[i - L]->image;
            out[i] = weak(x, rng);
            out[i + U] = strong(x, bank_, cfg_.aug, rng, cfg_.ablation.use_aug);
        }
    });

    StepViews v;
    v.labeled = L;
    v.unlabeled = U;
    for (const auto* r : labeled) {
        if (!r->label) throw InputError("make_views: labeled record " + std::to_string(r->sample_id) + " has no label");
        v.labels.push_back(*r->label);
    }
    v.images = stack_images(out);
    v.unlabeled_weak.assign(out.begin() + static_cast<std::ptrdiff_t>(L),
                            out.begin() + static_cast<std::ptrdiff_t>(L + U));
    return v;
}

StepResult Trainer::train_step(const StepViews& views, std::size_t total_steps) {
    return train_step(views, lr_schedule(state_.step, total_steps, cfg_.lr_extractor),
                      lr_schedule(state_.step, total_steps, cfg_.lr_head));
}

StepResult Trainer::train_step(const StepViews& views, double lr_extractor, double lr_head) {
    const auto& flags = cfg_.ablation;
    const std::size_t L = views.labeled, U = views.unlabeled;
    if (views.images.dim(0) != L + 2 * U) {
        throw DimensionError("train_step: views hold " + std::to_string(views.images.dim(0)) + " images for " +
                             std::to_string(L) + " labeled and " + std::to_string(U) + " unlabeled samples");
    }

    const Tensor<float> h = extractor_.extract(views.images);
    const Tensor<float> logits = classifier_.classify(
        h, flags.use_stochastic ? ClassifierMode::train : ClassifierMode::eval, &state_.classifier);
    const Tensor<float> q = softmax(logits, 1);
    const Tensor<float> q_l = slice_rows(q, 0, L);
    const Tensor<float> q_w = slice_rows(q, L, L + U);
    const Tensor<float> q_s = slice_rows(q, L + U, L + 2 * U);

    Tensor<float> k_star, z;
    const bool need_z = flags.use_sa || flags.use_con;
    if (flags.uses_prototypes()) {
        k_star = flags.use_orth ? protos_->refine() : protos_->raw;
    }
    if (need_z) {
        const Tensor<float> h_w = l2_normalize_rows(slice_rows(h, L, L + U));
        z = matmul(h_w, transpose(k_star));
    }
    const auto dist = make_distributions(q_w, q_s, z, static_cast<float>(cfg_.tau), static_cast<float>(cfg_.tau_sem));

    auto parts = LossBreakdown<float>::zeros();
    parts.supervised = supervised_loss<float>(views.labels, q_l);
    parts.unsupervised = unsupervised_loss(dist);
    if (flags.use_sa) parts.alignment = semantic_alignment_loss(dist);
    if (flags.use_orth) parts.orthogonality = orthogonality_loss(k_star);
    if (flags.use_con) parts.contrast = contrast_loss(z, dist.pseudo_labels, std::span<const float>(dist.mask));
    if (flags.use_out) {
        parts.eml = eml_loss(dist);
        parts.anl = anl_loss(dist, static_cast<float>(cfg_.tau_anl));
    }

    Tensor<float> total;
    try {
        total = total_loss(parts);
    } catch (const NonFiniteLossError& e) {
        const auto v = LossValues::from(parts, Tensor<float>::scalar(std::numeric_limits<float>::quiet_NaN()));
        std::ostringstream os;
        os << e.what() << " at step " << state_.step << " (L_s=" << v.supervised << " L_u=" << v.unsupervised
           << " L_SA=" << v.alignment << " L_orth=" << v.orthogonality << " L_con=" << v.contrast
           << " L_EML=" << v.eml << " L_ANL=" << v.anl << ")";
        throw NonFiniteLossError(os.str());
    }

    StepResult result;
    result.losses = LossValues::from(parts, total);
    result.passed = dist.passed();

    for (auto& p : parameters()) p.tensor.zero_grad();
    total.backward();
    sgd(lr_extractor, lr_head);

    if (flags.use_aug) {
        for (const auto& img : views.unlabeled_weak) bank_.push(img);
    }
    ++state_.step;
    return result;
}

void Trainer::sgd(double lr_extractor, double lr_head) {
    const float mu = static_cast<float>(cfg_.momentum);
    for (auto& [name, tensor] : parameters()) {
        if (!tensor.has_grad()) continue;
        const float lr = static_cast<float>(name.rfind("extractor.", 0) == 0 ? lr_extractor : lr_head);
        auto& v = state_.velocity[name];
        if (v.empty()) v.assign(tensor.numel(), 0.0f);
        auto g = tensor.grad();
        auto w = tensor.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] + g[i];
            w[i] -= lr * v[i];
        }
        tensor.zero_grad();
    }
}

Tensor<float> Trainer::logits(const Tensor<float>& images) const {
    NoGradGuard guard;
    return classifier_.classify(extractor_.extract(images), ClassifierMode::eval, nullptr);
}

namespace {

constexpr std::size_t kEvalChunk = 64;

}  // namespace

Trainer::EvalOutputs Trainer::evaluate(std::span<const Image> images) const {
    NoGradGuard guard;
    EvalOutputs out;
    for (std::size_t i = 0; i < images.size(); i += kEvalChunk) {
        const auto chunk = images.subspan(i, std::min(kEvalChunk, images.size() - i));
        const auto h = extractor_.extract(stack_images(chunk));
        const auto q = softmax(classifier_.classify(h, ClassifierMode::eval, nullptr), 1);
        out.features.insert(out.features.end(), h.data().begin(), h.data().end());
        out.probabilities.insert(out.probabilities.end(), q.data().begin(), q.data().end());
    }
    return out;
}

double target_accuracy(const Trainer& trainer, const MultiDomainDataset& data, const std::string& target) {
    const std::size_t d = data.domain_index(target);
    const auto& dom = data.domains[d];
    std::vector<Image> images;
    images.reserve(dom.size());
    for (std::size_t i = 0; i < dom.size(); ++i) images.push_back(data.image(d, i));
    const auto q = trainer.probabilities(images);
    const auto pred = argmax_rows(q, dom.size(), data.num_classes());
    const std::vector<std::size_t> labels(dom.labels.begin(), dom.labels.end());
    return top1_accuracy(pred, labels);
}

// --- experiment ------------------------------------------------------------

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

std::string epoch_line(const EpochReport& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "epoch %zu lr %.5f total %.4f L_s %.4f L_u %.4f pl_acc %.4f retention %.4f edu %.4f "
                  "fdr %.4f target_acc %.4f",
                  e.epoch, e.lr, e.losses.total, e.losses.supervised, e.losses.unsupervised, e.pl_acc,
                  e.retention, e.edu, e.fdr, e.target_acc);
    return buf;
}

}  // namespace

RunReport run_experiment(const MultiDomainDataset& data, const EmbeddingFile* embeddings,
                         const ExperimentSpec& spec, const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir, const EpochCallback& on_epoch) {
    cfg.validate();
    data.validate();
    const std::size_t target_index = data.domain_index(spec.target);
    if (spec.sources.empty()) throw InputError("run_experiment: no source domains");
    for (const auto& s : spec.sources) {
        if (s == spec.target) throw InputError("run_experiment: target '" + s + "' is also a source");
    }
    if (embeddings && cfg.ablation.uses_prototypes()) {
        for (std::size_t c = 0; c < data.num_classes(); ++c) {
            if (c >= embeddings->classes.size() || embeddings->classes[c].name != data.class_names[c]) {
                throw InputError("run_experiment: embedding classes do not match dataset class '" +
                                 data.class_names[c] + "'");
            }
        }
    }

    std::ofstream log_file;
    if (out_dir) {
        std::error_code ec;
        std::filesystem::create_directories(*out_dir, ec);
        if (ec) throw IoError("cannot create " + out_dir->string() + ": " + ec.message());
        write_text(*out_dir / "config.json", config_json(cfg));
        log_file.open(*out_dir / "log.txt");
        if (!log_file) throw IoError("cannot write " + (*out_dir / "log.txt").string());
    }

    const SplitSpec split = make_split(data, spec.sources, cfg.labels_per_class, cfg.seed);
    if (out_dir) save_split(split, *out_dir / "split.json");
    const TrainingPools pools = build_pools(data, split);
    if (pools.unlabeled.empty()) throw InputError("run_experiment: no unlabeled samples remain");

    ExtractorConfig ext;
    ext.in_channels = data.channels;
    ext.height = data.height;
    ext.width = data.width;
    Trainer trainer(cfg, data.num_classes(), ext,
                    cfg.ablation.uses_prototypes() ? embeddings : nullptr);

    BatchStream labeled(pools.labeled, cfg.batch_labeled, trainer.state().data.split());
    BatchStream unlabeled(pools.unlabeled, cfg.batch_unlabeled, trainer.state().data.split());
    const std::size_t steps_per_epoch = cfg.steps_per_epoch
        ? cfg.steps_per_epoch
        : (pools.labeled.size() + cfg.batch_labeled - 1) / cfg.batch_labeled;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    std::vector<Image> unlabeled_images;
    std::vector<std::size_t> unlabeled_labels;
    for (std::size_t i = 0; i < pools.unlabeled.size(); ++i) {
        unlabeled_images.push_back(pools.unlabeled[i].image);
        unlabeled_labels.push_back(pools.truth[i].label);
    }

    RunReport report;
    report.target = spec.target;
    report.sources = pools.source_names;
    report.seed = cfg.seed;
    report.ablation = cfg.ablation.disabled();

    if (log_file) {
        log_file << "target " << spec.target << " sources";
        for (const auto& s : pools.source_names) log_file << ' ' << s;
        log_file << "\nlabeled " << pools.labeled.size() << " unlabeled " << pools.unlabeled.size()
                 << " steps " << total_steps << '\n';
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        trainer.state().epoch = epoch;
        EpochReport row;
        row.epoch = epoch;
        row.lr = lr_schedule(trainer.state().step, total_steps, cfg.lr_extractor);
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            const auto lb = labeled.next();
            const auto ub = unlabeled.next();
            const auto views = trainer.make_views(lb, ub);
            row.losses += trainer.train_step(views, total_steps).losses;
        }
        row.losses = row.losses.scaled(1.0 / static_cast<double>(steps_per_epoch));

        // Evaluation: eval mode, clean images, no rng.
        const std::size_t C = data.num_classes();
        const auto outputs = trainer.evaluate(unlabeled_images);
        const auto& q = outputs.probabilities;
        std::vector<PLRecord> records;
        records.reserve(unlabeled_images.size());
        for (std::size_t i = 0; i < unlabeled_images.size(); ++i) {
            records.push_back(make_pl_record(i, pools.truth[i].domain, epoch,
                                             std::span<const float>(q).subspan(i * C, C), cfg.tau,
                                             pools.truth[i].label));
        }
        const std::size_t n_u = records.size();
        row.pl_acc = pl_accuracy(records).value_or(std::numeric_limits<double>::quiet_NaN());
        row.retention = pl_retention(records, n_u);
        row.edu = edu(records, n_u);
        for (const auto& [d, v] : edu_by_domain(records)) row.edu_by_domain[data.domains[d].name] = v;
        const auto& feats = outputs.features;
        row.fdr = fdr(feats, n_u, feats.size() / n_u, unlabeled_labels)
                      .value_or(std::numeric_limits<double>::quiet_NaN());
        row.target_acc = target_accuracy(trainer, data, data.domains[target_index].name);

        log::info(epoch_line(row));
        if (log_file) log_file << epoch_line(row) << '\n';
        report.epochs.push_back(row);
        if (on_epoch) on_epoch(row);
    }

    if (trainer.prototypes()) {
        NoGradGuard guard;
        report.prototype_cos_raw = mean_offdiag_abs_cos(trainer.prototypes()->raw);
        report.prototype_cos_refined = mean_offdiag_abs_cos(
            cfg.ablation.use_orth ? trainer.prototypes()->refine() : trainer.prototypes()->raw);
    }

    if (out_dir) {
        save_checkpoint(trainer.parameters(), *out_dir / "checkpoint");
        write_report(report, *out_dir);
    }
    return report;
}

}  // namespace semalign
