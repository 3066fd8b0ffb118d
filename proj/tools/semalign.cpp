// semalign: command-line front end for data generation, training and reports.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semalign/augment.hpp"
#include "semalign/dataio.hpp"
#include "semalign/errors.hpp"
#include "semalign/gradcheck.hpp"
#include "semalign/log.hpp"
#include "semalign/metrics.hpp"
#include "semalign/prototypes.hpp"
#include "semalign/trainer.hpp"

namespace fs = std::filesystem;
using namespace semalign;

namespace {

/// Raised for bad flag values found after parsing; maps to exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::size_t default_threads() {
    if (const char* env = std::getenv("SEMALIGN_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        log::warning(std::string("ignoring SEMALIGN_THREADS=") + env);
    }
    return 1;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_ppm(const Image& img, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const float v = img.at(std::min(c, img.channels - 1), y, x);
                out.put(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
            }
}

void print_table(const ReportTable& t) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) std::printf(c ? " %10s" : "%7s", t.columns[c].c_str());
    std::printf("\n");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const bool summary = r + 1 == t.rows.size();
        if (summary) {
            std::printf("%7s", "summary");
        } else {
            std::printf("%7zu", static_cast<std::size_t>(t.rows[r][0]));
        }
        for (std::size_t c = 1; c < t.columns.size(); ++c) std::printf(" %10.4f", t.rows[r][c]);
        std::printf("\n");
    }
}

std::vector<RunReport> read_reports(const std::vector<std::string>& dirs) {
    std::vector<RunReport> out;
    for (const auto& d : dirs) out.push_back(read_report(d));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SemAlign desk-scale lab: semi-supervised domain generalization on synthetic shapes"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string log_level = "warning";
    app.add_option("--log-level", log_level, "debug, info, warning or error")
        ->check(CLI::IsMember({"debug", "info", "warning", "error"}));

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Render the synthetic multi-domain shapes dataset");
    std::string gen_out;
    GenerateOptions gen_opts;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--classes", gen_opts.classes, "Number of shape classes (2-7)")->capture_default_str();
    gen->add_option("--domains", gen_opts.domains, "Number of style domains (2-4)")->capture_default_str();
    gen->add_option("--per-class", gen_opts.per_class, "Images per class per domain")->capture_default_str();
    gen->add_option("--seed", gen_opts.seed, "Random seed")->capture_default_str();
    gen->add_option("--size", gen_opts.height, "Image side in pixels (power of two)")->capture_default_str();

    // gen-protos
    auto* protos = app.add_subcommand("gen-protos", "Write synthetic class text embeddings");
    std::string protos_out, protos_data;
    std::vector<std::string> protos_names;
    std::size_t protos_dim = 64, protos_templates = 8;
    std::uint64_t protos_seed = 0;
    protos->add_option("--out", protos_out, "Output JSON file")->required();
    auto* pdata = protos->add_option("--data", protos_data, "Dataset directory to take class names from");
    protos->add_option("--names", protos_names, "Class names (instead of --data)")->excludes(pdata);
    protos->add_option("--dim", protos_dim, "Embedding dimension")->capture_default_str();
    protos->add_option("--templates", protos_templates, "Templates per class")->capture_default_str();
    protos->add_option("--seed", protos_seed, "Random seed")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "Train on all domains but --target and evaluate on it");
    std::string train_data, train_protos, train_target, train_out, train_ablate, train_config;
    TrainConfig cfg;
    cfg.threads = default_threads();
    train->add_option("--data", train_data, "Dataset directory")->required();
    train->add_option("--protos", train_protos, "Class embedding JSON");
    train->add_option("--target", train_target, "Held-out target domain")->required();
    train->add_option("--out", train_out, "Run directory")->required();
    train->add_option("--config", train_config, "TrainConfig JSON; flags given here override it");
    auto* o_lpc = train->add_option("--labels-per-class", cfg.labels_per_class, "Labeled samples per class and domain")->capture_default_str();
    auto* o_seed = train->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
    auto* o_epochs = train->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    auto* o_spe = train->add_option("--steps-per-epoch", cfg.steps_per_epoch,
                                    "Steps per epoch; 0 = one pass over the labeled pool")->capture_default_str();
    auto* o_bl = train->add_option("--batch-labeled", cfg.batch_labeled, "Labeled batch size")->capture_default_str();
    auto* o_bu = train->add_option("--batch-unlabeled", cfg.batch_unlabeled, "Unlabeled batch size")->capture_default_str();
    auto* o_threads = train->add_option("--threads", cfg.threads, "Augmentation threads (env SEMALIGN_THREADS)")->capture_default_str();
    auto* o_ablate = train->add_option("--ablate", train_ablate, "Comma separated components to disable: out,sa,con,orth,aug,sc");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a trained run on a domain");
    std::string eval_run, eval_data, eval_domain;
    eval->add_option("--run", eval_run, "Run directory")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();
    eval->add_option("--domain", eval_domain, "Domain to score (default: every domain)");

    // report
    auto* report = app.add_subcommand("report", "Print or convert a run report");
    std::string report_run, report_format = "table", report_out;
    report->add_option("--run", report_run, "Run directory")->required();
    report->add_option("--format", report_format, "table, csv or json")
        ->check(CLI::IsMember({"table", "csv", "json"}))
        ->capture_default_str();
    report->add_option("--out", report_out, "Write to this file instead of stdout");

    // compare
    auto* cmp = app.add_subcommand("compare", "Compare summary metrics of two groups of runs");
    std::vector<std::string> cmp_a, cmp_b;
    cmp->add_option("--a", cmp_a, "Run directories of the first group")->required();
    cmp->add_option("--b", cmp_b, "Run directories of the second group")->required();

    // augment
    auto* aug = app.add_subcommand("augment", "Write weak, strong and domain-removing views of one image");
    std::string aug_data, aug_domain, aug_out;
    std::size_t aug_index = 0, aug_donor = 1;
    std::uint64_t aug_seed = 0;
    aug->add_option("--data", aug_data, "Dataset directory")->required();
    aug->add_option("--domain", aug_domain, "Domain of the image")->required();
    aug->add_option("--index", aug_index, "Image index within the domain")->capture_default_str();
    aug->add_option("--donor", aug_donor, "Amplitude donor index within the domain")->capture_default_str();
    aug->add_option("--seed", aug_seed, "Random seed")->capture_default_str();
    aug->add_option("--out", aug_out, "Output directory")->required();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
    std::uint64_t gc_seed = 0;
    double gc_tol = 1e-4;
    gc->add_option("--seed", gc_seed, "Random seed")->capture_default_str();
    gc->add_option("--tolerance", gc_tol, "Maximum relative error")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        // Usage errors list the flags of the command that failed to parse.
        std::fprintf(stderr, "usage error: %s\n\n", e.what());
        const auto parsed = app.get_subcommands();
        std::fputs((parsed.empty() ? app.help() : parsed.back()->help()).c_str(), stderr);
        return 2;
    }

    log::set_level(log_level == "debug"  ? log::Level::debug
                   : log_level == "info" ? log::Level::info
                   : log_level == "error" ? log::Level::error
                                          : log::Level::warning);

    try {
        if (*gen) {
            gen_opts.width = gen_opts.height;
            MultiDomainDataset ds;
            try {
                ds = generate(gen_opts);
            } catch (const InputError& e) {
                throw UsageError(e.what());
            }
            save_dataset(ds, gen_out);
            std::printf("wrote %s\n", gen_out.c_str());
        } else if (*protos) {
            if (protos_data.empty() && protos_names.empty()) throw UsageError("gen-protos needs --data or --names");
            const auto names = protos_data.empty() ? protos_names : load_dataset(protos_data).class_names;
            write_embedding_file(synth_embeddings(names, protos_dim, protos_templates, protos_seed), protos_out);
            std::printf("wrote %s\n", protos_out.c_str());
        } else if (*train) {
            if (!train_config.empty()) {
                const TrainConfig base = parse_config_json(read_text(train_config));
                TrainConfig merged = base;
                // Explicit flags override the file.
                if (o_lpc->count()) merged.labels_per_class = cfg.labels_per_class;
                if (o_seed->count()) merged.seed = cfg.seed;
                if (o_epochs->count()) merged.epochs = cfg.epochs;
                if (o_spe->count()) merged.steps_per_epoch = cfg.steps_per_epoch;
                if (o_bl->count()) merged.batch_labeled = cfg.batch_labeled;
                if (o_bu->count()) merged.batch_unlabeled = cfg.batch_unlabeled;
                if (o_threads->count()) merged.threads = cfg.threads;
                cfg = merged;
            }
            if (o_ablate->count()) {
                try {
                    cfg.ablation = AblationFlags::disable(train_ablate);
                } catch (const ParameterError& e) {
                    throw UsageError(e.what());
                }
            }
            try {
                cfg.validate();
            } catch (const ParameterError& e) {
                throw UsageError(e.what());
            }
            if (cfg.ablation.uses_prototypes() && train_protos.empty()) {
                throw UsageError("--protos is required unless sa, con and orth are all ablated");
            }
            const auto data = load_dataset(train_data);
            std::optional<EmbeddingFile> embeddings;
            if (!train_protos.empty()) embeddings = read_embedding_file(train_protos);
            ExperimentSpec spec{train_target, {}};
            data.domain_index(train_target);
            for (const auto& d : data.domains)
                if (d.name != train_target) spec.sources.push_back(d.name);
            if (embeddings) {
                fs::create_directories(train_out);
                write_embedding_file(*embeddings, fs::path(train_out) / "embeddings.json");
            }
            const auto result = run_experiment(data, embeddings ? &*embeddings : nullptr, spec, cfg, fs::path(train_out),
                                               [](const EpochReport& e) {
                                                   std::printf("epoch %3zu  loss %.4f  pl_acc %.4f  edu %.4f  target_acc %.4f\n",
                                                               e.epoch, e.losses.total, e.pl_acc, e.edu, e.target_acc);
                                                   std::fflush(stdout);
                                               });
            std::printf("final target accuracy %.4f (%s)\n", result.epochs.back().target_acc, train_out.c_str());
        } else if (*eval) {
            const fs::path run(eval_run);
            const auto run_cfg = parse_config_json(read_text(run / "config.json"));
            const auto data = load_dataset(eval_data);
            std::optional<EmbeddingFile> embeddings;
            if (run_cfg.ablation.uses_prototypes()) embeddings = read_embedding_file(run / "embeddings.json");
            ExtractorConfig ext;
            ext.in_channels = data.channels;
            ext.height = data.height;
            ext.width = data.width;
            Trainer trainer(run_cfg, data.num_classes(), ext, embeddings ? &*embeddings : nullptr);
            load_checkpoint(trainer.parameters(), run / "checkpoint");
            if (!eval_domain.empty()) data.domain_index(eval_domain);
            for (const auto& d : data.domains) {
                if (!eval_domain.empty() && d.name != eval_domain) continue;
                std::printf("%-10s %.4f\n", d.name.c_str(), target_accuracy(trainer, data, d.name));
            }
        } else if (*report) {
            const auto r = read_report(report_run);
            std::string text;
            if (report_format == "csv") {
                text = report_csv(r);
            } else if (report_format == "json") {
                text = report_json(r);
            }
            if (report_format == "table" && report_out.empty()) {
                std::printf("target %s  seed %llu  ablated [%s]\n", r.target.c_str(),
                            static_cast<unsigned long long>(r.seed), r.ablation.c_str());
                print_table(report_table(r));
            } else {
                if (report_format == "table") {
                    text = report_csv(r);
                }
                if (report_out.empty()) {
                    std::fputs(text.c_str(), stdout);
                } else {
                    std::ofstream out(report_out, std::ios::binary);
                    if (!out || !(out << text)) throw IoError("cannot write " + report_out);
                }
            }
        } else if (*cmp) {
            const auto a = read_reports(cmp_a);
            const auto b = read_reports(cmp_b);
            std::printf("%-11s %12s %10s %12s %10s %12s\n", "column", "a_mean", "a_std", "b_mean", "b_std", "b-a");
            for (const auto& d : compare(a, b)) {
                std::printf("%-11s %12.6f %10.6f %12.6f %10.6f %+12.6f\n", d.column.c_str(), d.a.mean, d.a.stddev,
                            d.b.mean, d.b.stddev, d.delta);
            }
        } else if (*aug) {
            const auto data = load_dataset(aug_data);
            const std::size_t d = data.domain_index(aug_domain);
            if (aug_index >= data.domains[d].size() || aug_donor >= data.domains[d].size()) {
                throw UsageError("--index/--donor out of range for domain " + aug_domain);
            }
            const Image x = data.image(d, aug_index);
            const Image donor = data.image(d, aug_donor);
            Rng rng(aug_seed);
            AugConfig acfg;
            AmplitudeBank bank(acfg.bank_capacity);
            bank.push(donor);
            fs::create_directories(aug_out);
            const std::pair<const char*, Image> views[] = {
                {"original", x},
                {"weak", weak(x, rng)},
                {"strong", strong(x, bank, acfg, rng)},
                {"phase_only", phase_only(x)},
                {"amp_swap", amp_swap(x, amplitude_spectrum(donor))},
                {"texture", texture_reduce(x, acfg)},
            };
            for (const auto& [name, img] : views) {
                write_image_blob(img, fs::path(aug_out) / (std::string(name) + ".saim"));
                write_ppm(img, fs::path(aug_out) / (std::string(name) + ".ppm"));
            }
            std::printf("wrote %zu views to %s\n", std::size(views), aug_out.c_str());
        } else if (*gc) {
            bool ok = true;
            std::printf("%-24s %14s\n", "term", "max_rel_error");
            for (const auto& r : loss_gradchecks(gc_seed, gc_tol)) {
                std::printf("%-24s %14.3e %s\n", r.term.c_str(), r.report.max_rel_error(),
                            r.report.passed() ? "ok" : "FAIL");
                ok = ok && r.report.passed();
            }
            return ok ? 0 : 1;
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
