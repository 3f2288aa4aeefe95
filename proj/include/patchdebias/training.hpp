#pragma once

// ERM baseline, the extrapolated-gradient (GERNE) update, per-epoch model
// selection on a validation metric, and multi-trial experiments.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchdebias/metrics.hpp"
#include "patchdebias/model.hpp"
#include "patchdebias/sampler.hpp"

namespace patchdebias {

enum class Method : std::uint8_t { ERM, GERNE };
enum class EvalMetric : std::uint8_t { WGA, BCA };

const char* to_string(Method m);
const char* to_string(EvalMetric m);
Method method_from_string(const std::string& s);
EvalMetric eval_metric_from_string(const std::string& s);

struct TrainConfig {
    Method method = Method::ERM;
    EvalMetric eval_metric = EvalMetric::WGA;
    double beta = 0.0;
    double tau = 0.1;
    std::size_t batch_size = 64;
    std::size_t epochs = 40;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    std::size_t trials = 3;

    void validate() const;
};

// Heavy-ball SGD: v <- mu * v + g ; theta <- theta - lr * v.
class SgdMomentum {
public:
    SgdMomentum(double learning_rate, double momentum, std::size_t size)
        : lr_(learning_rate), mu_(momentum), velocity_(size, 0.0) {}

    void apply(ParamVector& theta, const GradVector& grad);
    const std::vector<double>& velocity() const { return velocity_; }

private:
    double lr_;
    double mu_;
    std::vector<double> velocity_;
};

// g_ext = g_lb + beta * (g_lb - g_b), evaluated as (1 + beta) * g_lb - beta * g_b
// so that beta = 0 and beta = -1 reproduce g_lb and g_b bit for bit.
GradVector extrapolate_gradient(const GradVector& biased, const GradVector& less_biased,
                                double beta);

// Inputs, labels and group ids of one split, all index-aligned.
struct SplitData {
    InputSet inputs;
    std::vector<std::uint8_t> labels;
    std::vector<GroupId> groups;

    std::size_t size() const { return labels.size(); }
    std::vector<std::uint8_t> gather_labels(std::span<const std::size_t> batch) const;
};

struct StepInfo {
    double loss = 0.0;  // loss of the batch the update is "about" (B_lb for GERNE)
};

StepInfo erm_step(const Classifier& model, ParamVector& theta, const SplitData& data,
                  std::span<const std::size_t> batch, SgdMomentum& opt);

StepInfo gerne_step(const Classifier& model, ParamVector& theta, const SplitData& data,
                    const BatchPair& pair, double beta, SgdMomentum& opt);

struct Checkpoint {
    ParamVector theta;
    std::size_t epoch = 0;  // 1-based
    double val_wga = 0.0;
    double val_bca = 0.0;
    EvalMetric selected_by = EvalMetric::WGA;

    double selection_value() const { return selected_by == EvalMetric::WGA ? val_wga : val_bca; }
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_wga = 0.0;
    double val_bca = 0.0;
};

struct TrialResult {
    std::uint64_t seed = 0;
    double beta = 0.0;
    std::vector<EpochLog> log;
    // Best checkpoint per selection metric; always contains config.eval_metric.
    std::map<EvalMetric, Checkpoint> best;
    std::map<EvalMetric, EvalResult> test;
};

struct ExperimentData {
    SplitData train;
    SplitData validation;
    SplitData test;
};

// Trains one model and keeps, for every metric in `track` (plus the
// configured eval metric), the epoch checkpoint with the highest validation
// value; ties keep the earlier epoch. The retained checkpoints are then
// scored on the test split.
TrialResult run_trial(const TrainConfig& config, const ClassifierSpec& model_spec,
                      const ExperimentData& data, std::span<const EvalMetric> track = {});

struct CellSummary {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single trial
};

CellSummary summarize(std::span<const double> values);

// One (method, eval metric, tau) cell of the results table.
struct CellResult {
    Method method = Method::ERM;
    EvalMetric eval_metric = EvalMetric::WGA;
    double tau = 0.0;
    double beta = 0.0;  // selected beta (GERNE)
    std::vector<double> test_wga;
    std::vector<double> test_bca;
    std::vector<double> val_selection;
    std::vector<std::size_t> selected_epoch;
    CellSummary wga;
    CellSummary bca;

    std::string row_label() const;
};

struct ExperimentGrid {
    std::vector<double> taus{0.1, 0.03};
    std::vector<double> betas{-0.5, 0.0, 0.5, 1.0, 2.0};
    TrainConfig base;  // method/eval_metric/tau/beta are overwritten per cell
};

// Raw per-trial outcomes for one tau, kept for analysis and persistence.
struct TauRuns {
    double tau = 0.0;
    std::vector<TrialResult> erm;
    std::map<double, std::vector<TrialResult>> gerne;  // keyed by beta
    double selected_beta = 0.0;
};

struct RunReport {
    std::vector<CellResult> cells;
    std::vector<TauRuns> runs;

    const CellResult& cell(Method m, EvalMetric e, double tau) const;
};

// Each grid tau gets its own data (group ids depend on tau). `data_for_tau`
// returns the splits labelled for that threshold.
template <typename DataFn>
RunReport run_experiment(const ExperimentGrid& grid, const ClassifierSpec& model_spec,
                         DataFn&& data_for_tau);

RunReport run_experiment_for_tau(const ExperimentGrid& grid, const ClassifierSpec& model_spec,
                                 const ExperimentData& data, double tau);

void merge_report(RunReport& into, RunReport&& part);

void to_json(nlohmann::json& j, const CellResult& c);

template <typename DataFn>
RunReport run_experiment(const ExperimentGrid& grid, const ClassifierSpec& model_spec,
                         DataFn&& data_for_tau) {
    RunReport report;
    for (double tau : grid.taus) {
        const ExperimentData& data = data_for_tau(tau);
        merge_report(report, run_experiment_for_tau(grid, model_spec, data, tau));
    }
    return report;
}

}  // namespace patchdebias
