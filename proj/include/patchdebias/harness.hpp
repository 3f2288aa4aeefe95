#pragma once

// Experiment configuration, on-disk artifacts and the generate -> patchify ->
// analyze -> train -> report pipeline behind the CLI.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchdebias/analysis.hpp"
#include "patchdebias/composition.hpp"
#include "patchdebias/model.hpp"
#include "patchdebias/synthdata.hpp"
#include "patchdebias/training.hpp"

namespace patchdebias {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr const char* kOutputRootEnv = "PATCHDEBIAS_OUTPUT_ROOT";

// Per-image scene parameters are drawn uniformly from these ranges with a
// stream derived from (seed, image index).
struct CorpusConfig {
    std::size_t num_images = 480;
    std::size_t height = 192;
    std::size_t width = 192;
    std::size_t channels = 3;
    std::uint64_t seed = 2024;
    double no_tumor_fraction = 0.25;
    std::size_t min_tumor_blobs = 1;
    std::size_t max_tumor_blobs = 3;
    double min_tumor_coverage = 0.08;
    double max_tumor_coverage = 0.30;
    std::size_t min_satellites = 1;
    std::size_t max_satellites = 5;
    double min_healthy_coverage = 0.04;
    double max_healthy_coverage = 0.15;
    std::size_t min_healthy_blobs = 1;
    std::size_t max_healthy_blobs = 3;
    double background_intensity_max = 0.04;
    double noise_sigma = 0.01;
    std::size_t rim_thickness = 2;
    double blob_brightness_jitter = 0.2;
    double blob_color_jitter = 0.2;
    std::vector<double> tumor_profile{0.66, 0.38, 0.57};
    std::vector<double> healthy_profile{0.52, 0.50, 0.44};
    SplitFractions fractions{0.5, 0.25, 0.25};
};

struct PatchConfig {
    std::size_t patch_height = 32;
    std::size_t patch_width = 32;
    std::vector<double> taus{0.1, 0.03};
    double tissue_threshold = kDefaultTissueThreshold;
    TissueSource tissue_source = TissueSource::Mask;
};

struct ModelConfig {
    std::size_t max_input_side = 16;
    std::size_t conv1_filters = 8;
    std::size_t conv2_filters = 8;
};

struct AnalysisConfig {
    std::size_t n_bins = kDefaultBins;
    Split split = Split::Test;
};

struct ExperimentConfig {
    std::string output_root = "patchdebias_out";
    CorpusConfig corpus;
    PatchConfig patches;
    ModelConfig model;
    TrainConfig train;  // method/eval_metric/beta/tau are set per grid cell
    std::vector<double> betas{-0.5, 0.0, 0.5, 1.0, 2.0};
    AnalysisConfig analysis;

    // Throws ValidationError naming the offending field.
    void validate() const;

    ExperimentGrid grid() const;
    ClassifierSpec classifier() const;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
// Unknown keys and ill-typed values raise ValidationError naming the field.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// FNV-1a over the canonical (key-sorted) JSON dump.
std::string config_hash(const ExperimentConfig& cfg);
std::string corpus_hash(const CorpusConfig& corpus);

std::vector<SceneSpec> corpus_specs(const CorpusConfig& corpus);
DatasetManifest plan_corpus(const CorpusConfig& corpus);

// Patch records plus the network inputs for each record (same order).
struct LabelledCorpus {
    std::vector<PatchRecord> records;
    InputSet inputs;
};

using SceneLoader = std::function<GeneratedPair(const ManifestEntry&)>;

SceneLoader generating_loader();
SceneLoader disk_loader(const std::filesystem::path& dataset_dir);

// Partitions every image, labels each patch for all configured taus, and
// prepares the pooled network input.
LabelledCorpus build_corpus(const DatasetManifest& manifest, const PatchConfig& patches,
                            const ClassifierSpec& model_spec, const SceneLoader& loader);

// Splits the corpus; group ids are taken from the `tau` column.
ExperimentData split_data(const LabelledCorpus& corpus, double tau);

std::vector<PatchRecord> records_in_split(const std::vector<PatchRecord>& records, Split split);

// JSON-lines patch index.
nlohmann::json record_to_json(const PatchRecord& rec);
PatchRecord record_from_json(const nlohmann::json& j);
void write_patch_index(const std::filesystem::path& path, const std::vector<PatchRecord>& records);
std::vector<PatchRecord> read_patch_index(const std::filesystem::path& path);

// Results table: one row per method+eval-metric, WGA and BCA columns per tau,
// cells "mean±std" in percent.
std::string results_table_csv(const std::vector<CellResult>& cells, const std::vector<double>& taus);

// Per-epoch log: epoch,train_loss,val_wga,val_bca
std::string epoch_log_csv(const std::vector<EpochLog>& log);

// On-disk layout under the output root.
struct ArtifactPaths {
    std::filesystem::path root;

    std::filesystem::path dataset_dir() const { return root / "dataset"; }
    std::filesystem::path dataset_manifest() const { return dataset_dir() / "manifest.json"; }
    std::filesystem::path patch_index() const { return root / "patches.jsonl"; }
    std::filesystem::path analysis_dir() const { return root / "analysis"; }
    std::filesystem::path train_dir() const { return root / "train"; }
    std::filesystem::path results_json() const { return train_dir() / "results.json"; }
    std::filesystem::path run_manifest() const { return train_dir() / "run_manifest.json"; }
    std::filesystem::path report_csv() const { return root / "report.csv"; }
};

ArtifactPaths resolve_paths(const ExperimentConfig& cfg);

struct GenerateOutcome {
    bool skipped = false;
    std::size_t images = 0;
};

GenerateOutcome cmd_generate(const ExperimentConfig& cfg);
std::size_t cmd_patchify(const ExperimentConfig& cfg);
// Writes histogram CSVs and bias reports; with a checkpoint, adds the
// prediction overlay.
void cmd_analyze(const ExperimentConfig& cfg,
                 const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
RunReport cmd_train(const ExperimentConfig& cfg);
std::string cmd_report(const ExperimentConfig& cfg);

}  // namespace patchdebias
