#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patchdebias/error.hpp"
#include "patchdebias/harness.hpp"

using namespace patchdebias;
namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<double> taus;
    std::vector<double> betas;
    std::optional<std::size_t> trials;
};

ExperimentConfig resolve_config(const Overrides& o) {
    ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
    // --seed drives both the corpus and training streams
    if (o.seed) {
        cfg.corpus.seed = *o.seed;
        cfg.train.seed = *o.seed;
    }
    if (!o.taus.empty()) cfg.patches.taus = o.taus;
    if (!o.betas.empty()) cfg.betas = o.betas;
    if (o.trials) cfg.train.trials = *o.trials;
    cfg.validate();
    return cfg;
}

void print_cells(const RunReport& report) {
    for (const auto& c : report.cells) {
        std::printf("  tau=%g %-10s WGA %6.2f±%.2f  BCA %6.2f±%.2f", c.tau, c.row_label().c_str(),
                    100.0 * c.wga.mean, 100.0 * c.wga.stddev, 100.0 * c.bca.mean, 100.0 * c.bca.stddev);
        if (c.method == Method::GERNE) std::printf("  (beta=%g)", c.beta);
        std::printf("\n");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic patch-classification bias experiments: generate, patchify, analyze, train, report."};
    app.require_subcommand(1);
    app.footer(std::string("Output root: config \"output_root\", overridden by $") + kOutputRootEnv + ".");

    Overrides o;
    app.add_option("-c,--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "Override corpus.seed and train.seed");
    app.add_option("--tau", o.taus, "Override patches.taus (repeatable)")->allow_extra_args(false);
    app.add_option("--beta", o.betas, "Override train.betas (repeatable)")->allow_extra_args(false);
    app.add_option("--trials", o.trials, "Override train.trials");
    app.fallthrough();

    auto* gen = app.add_subcommand("generate", "Write the synthetic image/mask corpus");
    auto* patchify = app.add_subcommand("patchify", "Partition images and write the patch index");
    auto* analyze = app.add_subcommand("analyze", "Ratio histograms and bias reports");
    std::string checkpoint;
    analyze->add_option("--checkpoint", checkpoint, "Model checkpoint for the prediction overlay")
        ->check(CLI::ExistingFile);
    auto* train = app.add_subcommand("train", "Run ERM and GERNE over the tau/beta grid");
    auto* report = app.add_subcommand("report", "Write the results table CSV");
    auto* show = app.add_subcommand("config", "Print the resolved config");

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg = resolve_config(o);
        const ArtifactPaths paths = resolve_paths(cfg);
        if (gen->parsed()) {
            const auto out = cmd_generate(cfg);
            if (out.skipped) {
                std::printf("corpus up to date (%zu images) in %s, skipping\n", out.images,
                            paths.dataset_dir().c_str());
            } else {
                std::printf("wrote %zu images to %s\n", out.images, paths.dataset_dir().c_str());
            }
        } else if (patchify->parsed()) {
            const auto n = cmd_patchify(cfg);
            std::printf("wrote %zu patch records to %s\n", n, paths.patch_index().c_str());
        } else if (analyze->parsed()) {
            cmd_analyze(cfg, checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint));
            std::printf("wrote analysis to %s\n", paths.analysis_dir().c_str());
        } else if (train->parsed()) {
            const auto r = cmd_train(cfg);
            print_cells(r);
            std::printf("wrote %s\n", paths.results_json().c_str());
        } else if (report->parsed()) {
            std::cout << cmd_report(cfg);
        } else if (show->parsed()) {
            std::cout << config_to_json(cfg).dump(2) << "\n";
        }
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
