#include "patchdebias/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include "patchdebias/error.hpp"
#include "patchdebias/random.hpp"
#include "patchdebias/tensor_io.hpp"

namespace patchdebias {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads the keys of one config object, remembering which were consumed so
// unknown (misspelt) keys can be reported.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ValidationError("config field '" + path_ + "': expected an object");
        }
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        const std::string name = field(key);
        if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
                throw ValidationError("config field '" + name + "': expected a non-negative integer");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) {
                throw ValidationError("config field '" + name + "': expected a number");
            }
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) {
                throw ValidationError("config field '" + name + "': expected a string");
            }
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); })) {
                throw ValidationError("config field '" + name + "': expected an array of numbers");
            }
        }
        try {
            out = v.get<T>();
        } catch (const json::exception& e) {
            throw ValidationError("config field '" + name + "': " + e.what());
        }
    }

    Section child(const char* key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, field(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) {
                throw ValidationError("config field '" + field(k.c_str()) + "': unknown key");
            }
        }
    }

    std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ValidationError("config field '" + field + "': " + what);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string format_tau(double tau) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", tau);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

json corpus_to_json(const CorpusConfig& c) {
    return json{{"num_images", c.num_images},
                {"height", c.height},
                {"width", c.width},
                {"channels", c.channels},
                {"seed", c.seed},
                {"no_tumor_fraction", c.no_tumor_fraction},
                {"min_tumor_blobs", c.min_tumor_blobs},
                {"max_tumor_blobs", c.max_tumor_blobs},
                {"min_tumor_coverage", c.min_tumor_coverage},
                {"max_tumor_coverage", c.max_tumor_coverage},
                {"min_satellites", c.min_satellites},
                {"max_satellites", c.max_satellites},
                {"min_healthy_coverage", c.min_healthy_coverage},
                {"max_healthy_coverage", c.max_healthy_coverage},
                {"min_healthy_blobs", c.min_healthy_blobs},
                {"max_healthy_blobs", c.max_healthy_blobs},
                {"background_intensity_max", c.background_intensity_max},
                {"noise_sigma", c.noise_sigma},
                {"rim_thickness", c.rim_thickness},
                {"blob_brightness_jitter", c.blob_brightness_jitter},
                {"blob_color_jitter", c.blob_color_jitter},
                {"tumor_profile", c.tumor_profile},
                {"healthy_profile", c.healthy_profile},
                {"split_fractions", {c.fractions.train, c.fractions.validation, c.fractions.test}}};
}

}  // namespace

void ExperimentConfig::validate() const {
    const auto& c = corpus;
    require(c.num_images >= 1, "corpus.num_images", "must be >= 1");
    require(c.height >= 1 && c.width >= 1, "corpus.height", "image dimensions must be >= 1");
    require(c.channels >= 1, "corpus.channels", "must be >= 1");
    require(c.no_tumor_fraction >= 0.0 && c.no_tumor_fraction <= 1.0, "corpus.no_tumor_fraction",
            "must be in [0,1]");
    require(c.min_tumor_blobs >= 1 && c.min_tumor_blobs <= c.max_tumor_blobs,
            "corpus.min_tumor_blobs", "need 1 <= min_tumor_blobs <= max_tumor_blobs");
    require(c.min_tumor_coverage >= 0.0 && c.min_tumor_coverage <= c.max_tumor_coverage &&
                c.max_tumor_coverage <= 1.0,
            "corpus.min_tumor_coverage", "need 0 <= min <= max <= 1");
    require(c.min_healthy_coverage >= 0.0 && c.min_healthy_coverage <= c.max_healthy_coverage,
            "corpus.min_healthy_coverage", "need 0 <= min <= max");
    require(c.max_tumor_coverage + c.max_healthy_coverage <= 1.0, "corpus.max_healthy_coverage",
            "max tumor + max healthy coverage must not exceed 1");
    require(c.min_satellites <= c.max_satellites, "corpus.min_satellites",
            "must not exceed max_satellites");
    require(c.min_healthy_blobs <= c.max_healthy_blobs, "corpus.min_healthy_blobs",
            "must not exceed max_healthy_blobs");
    const double fsum = c.fractions.train + c.fractions.validation + c.fractions.test;
    require(c.fractions.train >= 0 && c.fractions.validation >= 0 && c.fractions.test >= 0 &&
                std::abs(fsum - 1.0) <= 1e-9,
            "corpus.split_fractions", "must be three non-negative values summing to 1");

    require(patches.patch_height >= 1 && patches.patch_height <= c.height,
            "patches.patch_height", "must be in [1, corpus.height]");
    require(patches.patch_width >= 1 && patches.patch_width <= c.width, "patches.patch_width",
            "must be in [1, corpus.width]");
    require(!patches.taus.empty(), "patches.taus", "must list at least one threshold");
    for (double t : patches.taus) {
        require(t >= 0.0 && t <= 1.0, "patches.taus", "thresholds must be in [0,1]");
    }
    require(patches.tissue_threshold > 0.0 && patches.tissue_threshold < 1.0,
            "patches.tissue_threshold", "must be in (0,1)");

    require(model.max_input_side >= 7, "model.max_input_side", "must be >= 7");
    require(model.conv1_filters >= 1, "model.conv1_filters", "must be >= 1");
    require(model.conv2_filters >= 1, "model.conv2_filters", "must be >= 1");

    require(std::isfinite(train.learning_rate) && train.learning_rate > 0.0,
            "train.learning_rate", "must be > 0");
    require(train.momentum >= 0.0 && train.momentum < 1.0, "train.momentum", "must be in [0,1)");
    require(train.batch_size >= 4, "train.batch_size", "must be >= 4");
    require(train.epochs >= 1, "train.epochs", "must be >= 1");
    require(train.trials >= 1, "train.trials", "must be >= 1");
    require(!betas.empty(), "train.betas", "must list at least one beta");
    for (double b : betas) require(std::isfinite(b), "train.betas", "values must be finite");
    require(analysis.n_bins >= 1, "analysis.n_bins", "must be >= 1");

    // Catches patch sizes the network cannot consume.
    try {
        (void)classifier();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("config field 'model.max_input_side': ") + e.what());
    }
}

ExperimentGrid ExperimentConfig::grid() const {
    ExperimentGrid g;
    g.taus = patches.taus;
    g.betas = betas;
    g.base = train;
    return g;
}

ClassifierSpec ExperimentConfig::classifier() const {
    return classifier_for_patch(patches.patch_height, patches.patch_width, corpus.channels,
                                model.max_input_side, model.conv1_filters, model.conv2_filters,
                                train.seed);
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["output_root"] = cfg.output_root;
    j["corpus"] = corpus_to_json(cfg.corpus);
    j["patches"] = {{"patch_height", cfg.patches.patch_height},
                    {"patch_width", cfg.patches.patch_width},
                    {"taus", cfg.patches.taus},
                    {"tissue_threshold", cfg.patches.tissue_threshold},
                    {"tissue_source",
                     cfg.patches.tissue_source == TissueSource::Mask ? "mask" : "inferred"}};
    j["model"] = {{"max_input_side", cfg.model.max_input_side},
                  {"conv1_filters", cfg.model.conv1_filters},
                  {"conv2_filters", cfg.model.conv2_filters}};
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"learning_rate", cfg.train.learning_rate},
                  {"momentum", cfg.train.momentum},
                  {"seed", cfg.train.seed},
                  {"trials", cfg.train.trials},
                  {"betas", cfg.betas}};
    j["analysis"] = {{"n_bins", cfg.analysis.n_bins}, {"split", to_string(cfg.analysis.split)}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    Section root(j, "");
    root.read("output_root", cfg.output_root);

    {
        auto s = root.child("corpus");
        auto& c = cfg.corpus;
        s.read("num_images", c.num_images);
        s.read("height", c.height);
        s.read("width", c.width);
        s.read("channels", c.channels);
        s.read("seed", c.seed);
        s.read("no_tumor_fraction", c.no_tumor_fraction);
        s.read("min_tumor_blobs", c.min_tumor_blobs);
        s.read("max_tumor_blobs", c.max_tumor_blobs);
        s.read("min_tumor_coverage", c.min_tumor_coverage);
        s.read("max_tumor_coverage", c.max_tumor_coverage);
        s.read("min_satellites", c.min_satellites);
        s.read("max_satellites", c.max_satellites);
        s.read("min_healthy_coverage", c.min_healthy_coverage);
        s.read("max_healthy_coverage", c.max_healthy_coverage);
        s.read("min_healthy_blobs", c.min_healthy_blobs);
        s.read("max_healthy_blobs", c.max_healthy_blobs);
        s.read("background_intensity_max", c.background_intensity_max);
        s.read("noise_sigma", c.noise_sigma);
        s.read("rim_thickness", c.rim_thickness);
        s.read("blob_brightness_jitter", c.blob_brightness_jitter);
        s.read("blob_color_jitter", c.blob_color_jitter);
        s.read("tumor_profile", c.tumor_profile);
        s.read("healthy_profile", c.healthy_profile);
        std::vector<double> fr{c.fractions.train, c.fractions.validation, c.fractions.test};
        s.read("split_fractions", fr);
        require(fr.size() == 3, "corpus.split_fractions", "expected three values");
        c.fractions = {fr[0], fr[1], fr[2]};
        s.finish();
    }
    {
        auto s = root.child("patches");
        auto& p = cfg.patches;
        s.read("patch_height", p.patch_height);
        s.read("patch_width", p.patch_width);
        s.read("taus", p.taus);
        s.read("tissue_threshold", p.tissue_threshold);
        std::string source = p.tissue_source == TissueSource::Mask ? "mask" : "inferred";
        s.read("tissue_source", source);
        require(source == "mask" || source == "inferred", "patches.tissue_source",
                "must be \"mask\" or \"inferred\"");
        p.tissue_source = source == "mask" ? TissueSource::Mask : TissueSource::Inferred;
        s.finish();
    }
    {
        auto s = root.child("model");
        s.read("max_input_side", cfg.model.max_input_side);
        s.read("conv1_filters", cfg.model.conv1_filters);
        s.read("conv2_filters", cfg.model.conv2_filters);
        s.finish();
    }
    {
        auto s = root.child("train");
        auto& t = cfg.train;
        s.read("batch_size", t.batch_size);
        s.read("epochs", t.epochs);
        s.read("learning_rate", t.learning_rate);
        s.read("momentum", t.momentum);
        s.read("seed", t.seed);
        s.read("trials", t.trials);
        s.read("betas", cfg.betas);
        s.finish();
    }
    {
        auto s = root.child("analysis");
        s.read("n_bins", cfg.analysis.n_bins);
        std::string split = to_string(cfg.analysis.split);
        s.read("split", split);
        try {
            cfg.analysis.split = split_from_string(split);
        } catch (const ValidationError&) {
            throw ValidationError("config field 'analysis.split': must be train, val or test");
        }
        s.finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
    json j = config_to_json(cfg);
    j.erase("output_root");
    return hex64(fnv1a(j.dump()));
}

std::string corpus_hash(const CorpusConfig& corpus) {
    return hex64(fnv1a(corpus_to_json(corpus).dump()));
}

std::vector<SceneSpec> corpus_specs(const CorpusConfig& c) {
    std::vector<SceneSpec> specs;
    specs.reserve(c.num_images);
    for (std::size_t i = 0; i < c.num_images; ++i) {
        Rng rng({c.seed, 0x636f7270ULL, i});
        SceneSpec s;
        s.seed = rng.next();
        s.height = c.height;
        s.width = c.width;
        s.channels = c.channels;
        s.background_intensity_max = c.background_intensity_max;
        s.noise_sigma = c.noise_sigma;
        s.rim_thickness = c.rim_thickness;
        s.blob_brightness_jitter = c.blob_brightness_jitter;
        s.blob_color_jitter = c.blob_color_jitter;
        s.tumor_profile = c.tumor_profile;
        s.healthy_profile = c.healthy_profile;
        const bool has_tumor = rng.uniform() >= c.no_tumor_fraction;
        if (has_tumor) {
            s.tumor_blob_count = c.min_tumor_blobs + rng.below(c.max_tumor_blobs - c.min_tumor_blobs + 1);
            s.tumor_coverage = rng.uniform(c.min_tumor_coverage, c.max_tumor_coverage);
            s.tumor_satellite_count = c.min_satellites + rng.below(c.max_satellites - c.min_satellites + 1);
        } else {
            s.tumor_blob_count = 0;
            s.tumor_coverage = 0.0;
        }
        s.healthy_coverage = rng.uniform(c.min_healthy_coverage, c.max_healthy_coverage);
        s.healthy_blob_count =
            c.min_healthy_blobs + rng.below(c.max_healthy_blobs - c.min_healthy_blobs + 1);
        specs.push_back(std::move(s));
    }
    return specs;
}

DatasetManifest plan_corpus(const CorpusConfig& corpus) {
    return generate_corpus(corpus_specs(corpus), corpus.fractions);
}

SceneLoader generating_loader() {
    return [](const ManifestEntry& e) { return generate_scene(e.spec, e.image_id); };
}

SceneLoader disk_loader(const fs::path& dataset_dir) {
    return [dataset_dir](const ManifestEntry& e) {
        GeneratedPair pair;
        const auto img = read_tensor(dataset_dir / e.image_path);
        const auto msk = read_tensor(dataset_dir / e.mask_path);
        if (img.dims.size() != 3 || msk.dims.size() != 2 || img.dims[0] != msk.dims[0] ||
            img.dims[1] != msk.dims[1]) {
            throw IoError("image/mask tensors for " + e.image_id + " have inconsistent shapes");
        }
        pair.image.height = img.dims[0];
        pair.image.width = img.dims[1];
        pair.image.channels = img.dims[2];
        pair.image.data = img.as_f32();
        pair.image.image_id = e.image_id;
        pair.mask.height = msk.dims[0];
        pair.mask.width = msk.dims[1];
        const auto raw = msk.as_u8();
        pair.mask.labels.reserve(raw.size());
        for (std::uint8_t v : raw) {
            if (v > static_cast<std::uint8_t>(PixelClass::Tumor)) {
                throw IoError("mask for " + e.image_id + " holds unknown class " + std::to_string(v));
            }
            pair.mask.labels.push_back(static_cast<PixelClass>(v));
        }
        pair.mask.image_id = e.image_id;
        return pair;
    };
}

LabelledCorpus build_corpus(const DatasetManifest& manifest, const PatchConfig& patches,
                            const ClassifierSpec& model_spec, const SceneLoader& loader) {
    LabelledCorpus corpus;
    corpus.inputs = InputSet(model_spec.input_height, model_spec.input_width, model_spec.channels);
    const PatchGridSpec grid{patches.patch_height, patches.patch_width, EdgePolicy::DropPartial};
    for (const auto& entry : manifest.entries) {
        const GeneratedPair scene = loader(entry);
        for (const Patch& p : partition(scene.image, scene.mask, grid)) {
            corpus.records.push_back(make_record(p, entry.split, patches.taus,
                                                 patches.tissue_source, patches.tissue_threshold));
            corpus.inputs.push(prepare_input(p.pixels, model_spec.input_pool));
        }
    }
    return corpus;
}

ExperimentData split_data(const LabelledCorpus& corpus, double tau) {
    ExperimentData data;
    SplitData* splits[3] = {&data.train, &data.validation, &data.test};
    for (auto* s : splits) {
        s->inputs = InputSet(corpus.inputs.height(), corpus.inputs.width(), corpus.inputs.channels());
    }
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        const auto& rec = corpus.records[i];
        SplitData& s = *splits[static_cast<std::size_t>(rec.split)];
        s.inputs.push(corpus.inputs.sample(i));
        s.labels.push_back(rec.label);
        s.groups.push_back(rec.groups.at(rec.tau_index(tau)));
    }
    return data;
}

std::vector<PatchRecord> records_in_split(const std::vector<PatchRecord>& records, Split split) {
    std::vector<PatchRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [split](const PatchRecord& r) { return r.split == split; });
    return out;
}

json record_to_json(const PatchRecord& rec) {
    json j;
    j["image_id"] = rec.image_id;
    j["split"] = to_string(rec.split);
    j["grid_row"] = rec.grid_row;
    j["grid_col"] = rec.grid_col;
    j["label"] = rec.label;
    j["tumor_pixels"] = rec.ratios.tumor_pixels;
    j["tissue_pixels"] = rec.ratios.tissue_pixels;
    j["total_pixels"] = rec.ratios.total_pixels;
    j["r_tumor"] = rec.ratios.r_tumor;
    j["r_tumor_tissue"] =
        rec.ratios.r_tumor_tissue ? json(*rec.ratios.r_tumor_tissue) : json(nullptr);
    j["r_tissue"] = rec.ratios.r_tissue;
    j["tau"] = rec.taus;
    j["z"] = rec.z;
    std::vector<int> groups;
    for (GroupId g : rec.groups) groups.push_back(g.value());
    j["group_id"] = groups;
    return j;
}

PatchRecord record_from_json(const json& j) {
    PatchRecord rec;
    rec.image_id = j.at("image_id").get<std::string>();
    rec.split = split_from_string(j.at("split").get<std::string>());
    rec.grid_row = j.at("grid_row").get<std::size_t>();
    rec.grid_col = j.at("grid_col").get<std::size_t>();
    rec.label = j.at("label").get<std::uint8_t>();
    // Ratios are recomputed from the stored counts so they stay exact.
    rec.ratios = ratios_from_counts(j.at("tumor_pixels").get<std::size_t>(),
                                    j.at("tissue_pixels").get<std::size_t>(),
                                    j.at("total_pixels").get<std::size_t>());
    rec.taus = j.at("tau").get<std::vector<double>>();
    rec.z = j.at("z").get<std::vector<std::uint8_t>>();
    for (int g : j.at("group_id").get<std::vector<int>>()) {
        rec.groups.push_back(GroupId(static_cast<std::uint8_t>(g)));
    }
    if (rec.z.size() != rec.taus.size() || rec.groups.size() != rec.taus.size()) {
        throw IoError("patch record for " + rec.image_id + " has ragged tau columns");
    }
    return rec;
}

void write_patch_index(const fs::path& path, const std::vector<PatchRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : records) {
        out << record_to_json(r).dump() << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<PatchRecord> read_patch_index(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open patch index " + path.string());
    std::vector<PatchRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

std::string results_table_csv(const std::vector<CellResult>& cells, const std::vector<double>& taus) {
    std::ostringstream os;
    os << "row";
    for (double tau : taus) {
        os << ",tau=" << format_tau(tau) << " WGA,tau=" << format_tau(tau) << " BCA";
    }
    os << '\n';
    const std::pair<Method, EvalMetric> rows[] = {{Method::ERM, EvalMetric::BCA},
                                                  {Method::ERM, EvalMetric::WGA},
                                                  {Method::GERNE, EvalMetric::WGA}};
    char buf[64];
    for (const auto& [m, e] : rows) {
        os << to_string(m) << '+' << to_string(e);
        for (double tau : taus) {
            const auto it = std::find_if(cells.begin(), cells.end(), [&](const CellResult& c) {
                return c.method == m && c.eval_metric == e && c.tau == tau;
            });
            if (it == cells.end()) {
                os << ",,";
                continue;
            }
            for (const CellSummary* s : {&it->wga, &it->bca}) {
                std::snprintf(buf, sizeof(buf), ",%.2f±%.2f", 100.0 * s->mean, 100.0 * s->stddev);
                os << buf;
            }
        }
        os << '\n';
    }
    return os.str();
}

std::string epoch_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,train_loss,val_wga,val_bca\n";
    char buf[128];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.4f,%.4f\n", e.epoch, e.train_loss, e.val_wga,
                      e.val_bca);
        os << buf;
    }
    return os.str();
}

ArtifactPaths resolve_paths(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') {
        return {fs::path(env)};
    }
    return {fs::path(cfg.output_root)};
}

GenerateOutcome cmd_generate(const ExperimentConfig& cfg) {
    const ArtifactPaths paths = resolve_paths(cfg);
    const std::string hash = corpus_hash(cfg.corpus);
    if (fs::exists(paths.dataset_manifest())) {
        const json existing = read_json(paths.dataset_manifest());
        if (existing.value("corpus_hash", std::string{}) == hash) {
            return {true, existing.at("images").size()};
        }
    }
    ensure_dir(paths.dataset_dir() / "images");
    ensure_dir(paths.dataset_dir() / "masks");

    DatasetManifest manifest = plan_corpus(cfg.corpus);
    for (auto& e : manifest.entries) {
        const GeneratedPair scene = generate_scene(e.spec, e.image_id);
        e.image_path = "images/" + e.image_id + ".pbt";
        e.mask_path = "masks/" + e.image_id + "_mask.pbt";
        const auto H = static_cast<std::uint32_t>(scene.image.height);
        const auto W = static_cast<std::uint32_t>(scene.image.width);
        const auto C = static_cast<std::uint32_t>(scene.image.channels);
        write_tensor(paths.dataset_dir() / e.image_path,
                     TensorBlob::from_f32({H, W, C}, scene.image.data));
        std::vector<std::uint8_t> raw(scene.mask.labels.size());
        std::transform(scene.mask.labels.begin(), scene.mask.labels.end(), raw.begin(),
                       [](PixelClass c) { return static_cast<std::uint8_t>(c); });
        write_tensor(paths.dataset_dir() / e.mask_path, TensorBlob::from_u8({H, W}, raw));
    }
    json j = manifest;
    j["corpus_hash"] = hash;
    j["corpus"] = corpus_to_json(cfg.corpus);
    write_text(paths.dataset_manifest(), j.dump(2) + "\n");
    return {false, manifest.entries.size()};
}

namespace {

DatasetManifest load_manifest_checked(const ArtifactPaths& paths) {
    if (!fs::exists(paths.dataset_manifest())) {
        throw IoError("dataset manifest missing: " + paths.dataset_manifest().string() +
                      " (run generate first)");
    }
    const DatasetManifest manifest = read_json(paths.dataset_manifest()).get<DatasetManifest>();
    std::vector<std::string> missing;
    for (const auto& e : manifest.entries) {
        for (const auto& rel : {e.image_path, e.mask_path}) {
            if (rel.empty() || !fs::exists(paths.dataset_dir() / rel)) {
                missing.push_back(rel.empty() ? e.image_id + " (no path)" : rel);
            }
        }
    }
    if (!missing.empty()) {
        std::string msg = "dataset files missing:";
        for (const auto& m : missing) msg += " " + m;
        throw IoError(msg);
    }
    return manifest;
}

LabelledCorpus load_corpus_checked(const ExperimentConfig& cfg, const ArtifactPaths& paths) {
    const DatasetManifest manifest = load_manifest_checked(paths);
    LabelledCorpus corpus =
        build_corpus(manifest, cfg.patches, cfg.classifier(), disk_loader(paths.dataset_dir()));
    if (!fs::exists(paths.patch_index())) {
        throw IoError("patch index missing: " + paths.patch_index().string() +
                      " (run patchify first)");
    }
    const auto indexed = read_patch_index(paths.patch_index());
    bool same = indexed.size() == corpus.records.size();
    for (std::size_t i = 0; same && i < indexed.size(); ++i) {
        const auto& a = indexed[i];
        const auto& b = corpus.records[i];
        same = a.image_id == b.image_id && a.grid_row == b.grid_row && a.grid_col == b.grid_col &&
               a.label == b.label && a.taus == b.taus && a.groups == b.groups;
    }
    if (!same) {
        throw IoError("patch index " + paths.patch_index().string() +
                      " does not match the dataset and patch config (rerun patchify)");
    }
    return corpus;
}

void write_analysis(const ExperimentConfig& cfg, const ArtifactPaths& paths,
                    const std::vector<PatchRecord>& records,
                    const std::vector<std::uint8_t>* preds, const std::string& suffix) {
    ensure_dir(paths.analysis_dir());
    const std::pair<RatioKind, std::uint8_t> views[] = {
        {RatioKind::Tumor, 1}, {RatioKind::TumorTissue, 1}, {RatioKind::Tissue, 0}};
    std::vector<std::uint8_t> labels;
    for (const auto& r : records) labels.push_back(r.label);
    for (const auto& [kind, cond] : views) {
        auto h = histogram(records, kind, cond, cfg.analysis.n_bins);
        if (preds != nullptr) h = overlay_predictions(h, *preds, labels);
        const std::string name = std::string("hist_") + to_string(kind) + "_y" +
                                 std::to_string(cond) + suffix + ".csv";
        write_text(paths.analysis_dir() / name, histogram_csv(h));
    }
}

}  // namespace

std::size_t cmd_patchify(const ExperimentConfig& cfg) {
    const ArtifactPaths paths = resolve_paths(cfg);
    const DatasetManifest manifest = load_manifest_checked(paths);
    const LabelledCorpus corpus =
        build_corpus(manifest, cfg.patches, cfg.classifier(), disk_loader(paths.dataset_dir()));
    write_patch_index(paths.patch_index(), corpus.records);
    return corpus.records.size();
}

void cmd_analyze(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint) {
    const ArtifactPaths paths = resolve_paths(cfg);
    const auto all = read_patch_index(paths.patch_index());
    const auto records = records_in_split(all, cfg.analysis.split);
    if (records.empty()) {
        throw ValidationError(std::string("analyze: no patches in split ") +
                              to_string(cfg.analysis.split));
    }
    write_analysis(cfg, paths, records, nullptr, "");

    json bias = json::array();
    for (double tau : cfg.patches.taus) bias.push_back(bias_report(records, tau));
    write_text(paths.analysis_dir() / "bias_report.json", bias.dump(2) + "\n");

    if (checkpoint) {
        const auto [spec, theta] = load_checkpoint(*checkpoint);
        const LabelledCorpus corpus = load_corpus_checked(cfg, paths);
        const Classifier model(spec);
        std::vector<std::uint8_t> preds;
        for (std::size_t i = 0; i < corpus.records.size(); ++i) {
            if (corpus.records[i].split != cfg.analysis.split) continue;
            preds.push_back(predict_label(model.forward_one(theta, corpus.inputs.sample(i))));
        }
        write_analysis(cfg, paths, records, &preds, "_overlay");
    }
}

RunReport cmd_train(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const ArtifactPaths paths = resolve_paths(cfg);
    const LabelledCorpus corpus = load_corpus_checked(cfg, paths);
    const auto t_load = std::chrono::steady_clock::now();

    std::map<double, ExperimentData> by_tau;
    const RunReport report =
        run_experiment(cfg.grid(), cfg.classifier(), [&](double tau) -> const ExperimentData& {
            by_tau.clear();
            return by_tau.emplace(tau, split_data(corpus, tau)).first->second;
        });
    const auto t_train = std::chrono::steady_clock::now();

    ensure_dir(paths.train_dir());
    const ClassifierSpec base_spec = cfg.classifier();
    std::vector<std::string> artifacts;
    const auto save_trials = [&](const fs::path& dir, const std::vector<TrialResult>& trials) {
        ensure_dir(dir);
        for (std::size_t t = 0; t < trials.size(); ++t) {
            const auto& tr = trials[t];
            const fs::path log = dir / ("trial_" + std::to_string(t) + "_log.csv");
            write_text(log, epoch_log_csv(tr.log));
            artifacts.push_back(fs::relative(log, paths.root).string());
            for (const auto& [metric, ckpt] : tr.best) {
                ClassifierSpec spec = base_spec;
                spec.init_seed = tr.seed;
                const fs::path p =
                    dir / ("trial_" + std::to_string(t) + "_best_" + to_string(metric) + ".pbt");
                save_checkpoint(p, spec, ckpt.theta);
                artifacts.push_back(fs::relative(p, paths.root).string());
            }
        }
    };
    json runs = json::array();
    for (const auto& r : report.runs) {
        const fs::path tau_dir = paths.train_dir() / ("tau_" + format_tau(r.tau));
        save_trials(tau_dir / "erm", r.erm);
        json betas = json::object();
        for (const auto& [beta, trials] : r.gerne) {
            save_trials(tau_dir / ("gerne_beta_" + format_tau(beta)), trials);
            std::vector<double> vals;
            for (const auto& t : trials) vals.push_back(t.best.at(EvalMetric::WGA).val_wga);
            betas[format_tau(beta)] = summarize(vals).mean;
        }
        runs.push_back({{"tau", r.tau},
                        {"selected_beta", r.selected_beta},
                        {"gerne_mean_val_wga_by_beta", betas}});
    }

    json results;
    results["config_hash"] = config_hash(cfg);
    results["taus"] = cfg.patches.taus;
    results["cells"] = report.cells;
    results["runs"] = runs;
    write_text(paths.results_json(), results.dump(2) + "\n");
    artifacts.push_back(fs::relative(paths.results_json(), paths.root).string());

    const auto t_end = std::chrono::steady_clock::now();
    const auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
    json manifest;
    manifest["config_hash"] = config_hash(cfg);
    manifest["tool_version"] = kToolVersion;
    manifest["dataset_manifest"] = fs::relative(paths.dataset_manifest(), paths.root).string();
    manifest["patch_index"] = fs::relative(paths.patch_index(), paths.root).string();
    manifest["artifacts"] = artifacts;
    manifest["timings_seconds"] = {{"load", secs(t0, t_load)},
                                   {"train", secs(t_load, t_train)},
                                   {"persist", secs(t_train, t_end)}};
    for (const auto& rel : artifacts) {
        if (!fs::exists(paths.root / rel)) {
            throw IoError("run manifest would reference missing artifact " + rel);
        }
    }
    write_text(paths.run_manifest(), manifest.dump(2) + "\n");
    return report;
}

std::string cmd_report(const ExperimentConfig& cfg) {
    const ArtifactPaths paths = resolve_paths(cfg);
    if (!fs::exists(paths.results_json())) {
        throw IoError("training results missing: " + paths.results_json().string() +
                      " (run train first)");
    }
    const json results = read_json(paths.results_json());
    std::vector<CellResult> cells;
    for (const auto& c : results.at("cells")) {
        CellResult cell;
        cell.method = method_from_string(c.at("method").get<std::string>());
        cell.eval_metric = eval_metric_from_string(c.at("eval_metric").get<std::string>());
        cell.tau = c.at("tau").get<double>();
        cell.beta = c.at("beta").get<double>();
        cell.test_wga = c.at("test_wga").get<std::vector<double>>();
        cell.test_bca = c.at("test_bca").get<std::vector<double>>();
        cell.wga = summarize(cell.test_wga);
        cell.bca = summarize(cell.test_bca);
        cells.push_back(std::move(cell));
    }
    const std::string csv =
        results_table_csv(cells, results.at("taus").get<std::vector<double>>());
    write_text(paths.report_csv(), csv);
    return csv;
}

}  // namespace patchdebias
