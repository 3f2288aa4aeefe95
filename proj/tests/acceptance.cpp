// Acceptance runner: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "metric_fixtures.hpp"
#include "oracles.hpp"
#include "patchdebias/harness.hpp"

using namespace patchdebias;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr std::size_t kGradPairs = 24;
constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 30.0;
constexpr std::size_t kOracleMasks = 1000;
constexpr std::size_t kBetaSteps = 100;
constexpr std::size_t kMinImages = 200;
constexpr double kMinAlignment = 0.8;
constexpr double kWgaGain = 5.0;       // points
constexpr double kMaxBcaDrop = 5.0;    // points
constexpr double kRunSeconds = 30.0 * 60.0;
constexpr std::size_t kSelectionWins = 2;
constexpr double kOverlayGap = 10.0;   // points
constexpr std::size_t kOverlayBins = 20;

int failures = 0;

void verdict(int id, const char* name, bool ok, const std::string& detail) {
    std::printf("%s [%d] %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void guarded(int id, const char* name, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        verdict(id, name, false, std::string("exception: ") + e.what());
    }
}

void gradient_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    const Classifier model(ExperimentConfig{}.classifier());
    Rng rng(20240601);
    double worst = 0.0;
    std::size_t skipped = 0;
    for (std::size_t t = 0; t < kGradPairs;) {
        const auto rb = oracle::random_batch(model.spec(), rng, 16, 8);
        const ParamVector theta = oracle::random_theta(model, rng, 0.3);
        // a probe that crosses a ReLU kink has no derivative to compare against
        if (oracle::relu_margin(model, theta, rb.inputs, rb.batch, kGradStep) <= 1.0) {
            ++skipped;
            continue;
        }
        ++t;
        worst = std::max(worst, oracle::check_gradient(model, theta, rb.inputs, rb.batch, rb.labels,
                                                       kGradStep).max_rel_error);
    }
    const double secs = seconds_since(t0);
    verdict(1, "gradient oracle", worst < kGradTol && secs < kGradSeconds,
            fmt("%zu pairs (%zu skipped at ReLU kinks), %zu params, max rel error %.3g (< %.0e), "
                "%.1fs (< %.0fs)",
                kGradPairs, skipped, model.layout().total(), worst, kGradTol, secs, kGradSeconds));
}

void pipeline_oracle() {
    Rng rng(777);
    const std::array<PixelClass, 3> all{PixelClass::Tumor, PixelClass::Healthy, PixelClass::Background};
    std::size_t mismatches = 0;
    std::vector<PatchRecord> records;
    std::vector<oracle::Counts> counts;
    std::vector<std::size_t> sizes;
    for (std::size_t t = 0; t < kOracleMasks; ++t) {
        const std::size_t h = 1 + rng.below(16);
        const std::size_t w = 1 + rng.below(16);
        const auto m = oracle::random_mask(rng, h * w);
        const MaskView view(m, h, w);
        const auto c = oracle::count_pixels(m);
        if (binary_label(view) != (c.tumor > 0 ? 1 : 0)) ++mismatches;
        const auto v = multilabel_vector(view, all);
        for (std::size_t k = 0; k < all.size(); ++k) {
            if (v[k] != (oracle::contains(m, all[k]) ? 1 : 0)) ++mismatches;
        }
        const auto r = compute_ratios(view);
        const double n = static_cast<double>(h * w);
        const std::size_t s = c.tumor + c.healthy;
        if (r.tumor_pixels != c.tumor || r.tissue_pixels != s || r.total_pixels != h * w) ++mismatches;
        if (r.r_tumor != c.tumor / n || r.r_tissue != s / n) ++mismatches;
        if (r.r_tumor_tissue.has_value() != (s > 0)) ++mismatches;
        if (s > 0 && *r.r_tumor_tissue != static_cast<double>(c.tumor) / static_cast<double>(s)) {
            ++mismatches;
        }
        PatchRecord rec;
        rec.label = binary_label(view);
        rec.ratios = r;
        records.push_back(rec);
        counts.push_back(c);
        sizes.push_back(h * w);
    }
    std::size_t hist_mismatches = 0;
    for (std::uint8_t cond : {0, 1}) {
        std::vector<std::size_t> tumor(kOverlayBins, 0), tissue(kOverlayBins, 0), frac(kOverlayBins, 0);
        std::size_t n_frac = 0, n_all = 0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if ((counts[i].tumor > 0 ? 1 : 0) != cond) continue;
            const double n = static_cast<double>(sizes[i]);
            const std::size_t s = counts[i].tumor + counts[i].healthy;
            ++tumor[oracle::brute_bin(counts[i].tumor / n, kOverlayBins)];
            ++tissue[oracle::brute_bin(s / n, kOverlayBins)];
            ++n_all;
            if (s > 0) {
                ++frac[oracle::brute_bin(static_cast<double>(counts[i].tumor) / s, kOverlayBins)];
                ++n_frac;
            }
        }
        const auto check = [&](RatioKind kind, const std::vector<std::size_t>& expect, std::size_t total) {
            const auto h = histogram(records, kind, cond, kOverlayBins);
            if (h.counts != expect) ++hist_mismatches;
            for (std::size_t b = 0; b < kOverlayBins; ++b) {
                const double mass = total == 0 ? 0.0 : static_cast<double>(expect[b]) / total;
                if (h.mass[b] != mass) ++hist_mismatches;
            }
        };
        check(RatioKind::Tumor, tumor, n_all);
        check(RatioKind::Tissue, tissue, n_all);
        check(RatioKind::TumorTissue, frac, n_frac);
    }
    verdict(2, "pipeline oracle", mismatches == 0 && hist_mismatches == 0,
            fmt("%zu masks, %zu label/ratio mismatches, %zu histogram mismatches", kOracleMasks,
                mismatches, hist_mismatches));
}

void beta_limits() {
    ExperimentConfig cfg;
    cfg.corpus.num_images = 24;
    const auto corpus = build_corpus(plan_corpus(cfg.corpus), cfg.patches, cfg.classifier(),
                                     generating_loader());
    const ExperimentData data = split_data(corpus, 0.1);
    const Classifier model(cfg.classifier());
    const GroupedDataset grouped(data.train.groups);
    const BatchSampler sampler(grouped, cfg.train.seed);
    std::string detail;
    bool ok = true;
    for (double beta : {0.0, -1.0}) {
        ParamVector g = model.initialize();
        ParamVector r = model.initialize();
        SgdMomentum og(cfg.train.learning_rate, cfg.train.momentum, g.values.size());
        SgdMomentum orf(cfg.train.learning_rate, cfg.train.momentum, r.values.size());
        std::size_t agree = 0;
        for (std::size_t step = 0; step < kBetaSteps; ++step) {
            const auto pair = sampler.draw_pair(cfg.train.batch_size, 0, step);
            gerne_step(model, g, data.train, pair, beta, og);
            erm_step(model, r, data.train, beta == 0.0 ? pair.less_biased : pair.biased, orf);
            if (!same_bits(g.values, r.values)) break;
            ++agree;
        }
        ok = ok && agree == kBetaSteps;
        detail += fmt("%sbeta=%g vs %s-only: %zu/%zu steps bitwise equal", detail.empty() ? "" : "; ",
                      beta, beta == 0.0 ? "less-biased" : "biased", agree, kBetaSteps);
    }
    verdict(3, "beta-limit equivalence", ok, detail);
}

void metric_fixtures() {
    std::size_t exact = 0;
    const auto all = fixtures::metric_fixtures();
    for (const auto& f : all) {
        const auto s = fixtures::expand(f);
        const EvalResult r = evaluate(s.preds, s.labels, s.groups);
        if (r.wga == f.wga && r.bca == f.bca && r.empty_groups == f.empty_groups) ++exact;
    }
    verdict(8, "metric fixtures", exact == all.size() && all.size() == 10,
            fmt("%zu/%zu fixtures exact", exact, all.size()));
}

struct RunOutcome {
    RunReport report;
    double seconds = 0.0;
    std::string report_csv;
};

RunOutcome full_run(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    cmd_generate(cfg);
    cmd_patchify(cfg);
    cmd_analyze(cfg);
    RunOutcome out;
    out.report = cmd_train(cfg);
    out.report_csv = cmd_report(cfg);
    out.seconds = seconds_since(t0);
    return out;
}

void directional(const ExperimentConfig& cfg, const RunOutcome& run) {
    const auto records = read_patch_index(resolve_paths(cfg).patch_index());
    const double align = bias_report(records, 0.1).alignment;
    bool ok = cfg.corpus.num_images >= kMinImages && align > kMinAlignment && run.seconds < kRunSeconds;
    std::string detail = fmt("%zu images, alignment@0.1 %.3f, %.0fs", cfg.corpus.num_images, align,
                             run.seconds);
    for (double tau : cfg.patches.taus) {
        const auto& g = run.report.cell(Method::GERNE, EvalMetric::WGA, tau);
        const auto& ew = run.report.cell(Method::ERM, EvalMetric::WGA, tau);
        const auto& eb = run.report.cell(Method::ERM, EvalMetric::BCA, tau);
        const double gain = 100.0 * (g.wga.mean - ew.wga.mean);
        const double drop = 100.0 * (std::max(ew.bca.mean, eb.bca.mean) - g.bca.mean);
        ok = ok && gain >= kWgaGain && drop <= kMaxBcaDrop;
        detail += fmt("; tau=%g beta=%g WGA %.2f vs ERM %.2f (+%.2f), BCA drop %.2f", tau, g.beta,
                      100.0 * g.wga.mean, 100.0 * ew.wga.mean, gain, drop);
    }
    verdict(4, "directional reproduction", ok, detail);
}

const TauRuns& runs_for(const RunReport& report, double tau) {
    for (const auto& r : report.runs) {
        if (r.tau == tau) return r;
    }
    throw std::runtime_error("no runs for tau");
}

void selection_effect(const RunOutcome& run) {
    const auto& erm = runs_for(run.report, 0.1).erm;
    std::size_t wins = 0;
    std::string detail;
    for (const auto& t : erm) {
        const double w = t.test.at(EvalMetric::WGA).wga;
        const double b = t.test.at(EvalMetric::BCA).wga;
        if (w > b) ++wins;
        detail += fmt(" %.4f/%.4f", w, b);
    }
    verdict(5, "model-selection effect", wins >= kSelectionWins && erm.size() == 3,
            fmt("WGA-sel > BCA-sel in %zu/%zu trials (test WGA:", wins, erm.size()) + detail + ")");
}

void overlay_effect(const ExperimentConfig& cfg, const RunOutcome& run) {
    const auto paths = resolve_paths(cfg);
    const auto corpus = build_corpus(nlohmann::json::parse(slurp(paths.dataset_manifest())).get<DatasetManifest>(),
                                    cfg.patches,
                                     cfg.classifier(), disk_loader(paths.dataset_dir()));
    const auto test = split_data(corpus, 0.1).test;
    const auto records = records_in_split(corpus.records, Split::Test);
    const Classifier model(cfg.classifier());
    const auto base = histogram(records, RatioKind::Tumor, 1, kOverlayBins);
    std::size_t lo = kOverlayBins, hi = 0;
    for (std::size_t b = 0; b < kOverlayBins; ++b) {
        if (base.counts[b] == 0) continue;
        lo = std::min(lo, b);
        hi = std::max(hi, b);
    }
    const auto& erm = runs_for(run.report, 0.1).erm;
    double lo_sum = 0.0, hi_sum = 0.0;
    for (const auto& t : erm) {
        const auto preds = model.predict_all(t.best.at(EvalMetric::BCA).theta, test.inputs);
        const auto h = overlay_predictions(base, preds, test.labels);
        lo_sum += h.correct_fraction[lo];
        hi_sum += h.correct_fraction[hi];
    }
    const double lo_mean = 100.0 * lo_sum / erm.size();
    const double hi_mean = 100.0 * hi_sum / erm.size();
    verdict(6, "bias-visualization effect", lo < hi && hi_mean - lo_mean >= kOverlayGap,
            fmt("ERM (BCA-selected) correct on r_tumor bin %zu %.2f%% vs bin %zu %.2f%%, gap %.2f",
                lo, lo_mean, hi, hi_mean, hi_mean - lo_mean));
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path scratch = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "patchdebias_acceptance";
    unsetenv(kOutputRootEnv);
    fs::remove_all(scratch);

    guarded(1, "gradient oracle", gradient_oracle);
    guarded(2, "pipeline oracle", pipeline_oracle);
    guarded(3, "beta-limit equivalence", beta_limits);
    guarded(8, "metric fixtures", metric_fixtures);

    ExperimentConfig a;
    a.output_root = (scratch / "run_a").string();
    ExperimentConfig b;
    b.output_root = (scratch / "run_b").string();
    RunOutcome run_a;
    bool have_a = false;
    try {
        run_a = full_run(a);
        have_a = true;
    } catch (const std::exception& e) {
        for (int id : {4, 5, 6}) verdict(id, "default-corpus run", false, std::string("exception: ") + e.what());
    }
    if (have_a) {
        guarded(4, "directional reproduction", [&] { directional(a, run_a); });
        guarded(5, "model-selection effect", [&] { selection_effect(run_a); });
        guarded(6, "bias-visualization effect", [&] { overlay_effect(a, run_a); });
    }
    guarded(7, "determinism", [&] {
        if (!have_a) throw std::runtime_error("first run failed");
        const RunOutcome run_b = full_run(b);
        const std::string on_disk_a = slurp(resolve_paths(a).report_csv());
        const std::string on_disk_b = slurp(resolve_paths(b).report_csv());
        verdict(7, "determinism", !on_disk_a.empty() && on_disk_a == on_disk_b && run_a.report_csv == run_b.report_csv,
                fmt("report.csv %zu bytes vs %zu bytes, %s", on_disk_a.size(), on_disk_b.size(),
                    on_disk_a == on_disk_b ? "identical" : "different"));
    });

    std::printf("%d criteria failed\n", failures);
    return failures;
}
