#include "patchdebias/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchdebias/error.hpp"

namespace patchdebias {

const char* to_string(Method m) { return m == Method::ERM ? "ERM" : "GERNE"; }
const char* to_string(EvalMetric m) { return m == EvalMetric::WGA ? "WGA" : "BCA"; }

Method method_from_string(const std::string& s) {
    if (s == "ERM" || s == "erm") return Method::ERM;
    if (s == "GERNE" || s == "gerne") return Method::GERNE;
    throw ValidationError("unknown method '" + s + "'");
}

EvalMetric eval_metric_from_string(const std::string& s) {
    if (s == "WGA" || s == "wga") return EvalMetric::WGA;
    if (s == "BCA" || s == "bca") return EvalMetric::BCA;
    throw ValidationError("unknown eval metric '" + s + "'");
}

void TrainConfig::validate() const {
    if (!std::isfinite(beta)) throw ValidationError("train: beta must be finite");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ValidationError("train: learning_rate must be > 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ValidationError("train: momentum must be in [0,1)");
    }
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("train: tau must be in [0,1]");
    if (trials < 1) throw ValidationError("train: trials must be >= 1");
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (method == Method::GERNE && batch_size < GroupId::kCount) {
        throw ValidationError("train: GERNE needs batch_size >= 4");
    }
}

void SgdMomentum::apply(ParamVector& theta, const GradVector& grad) {
    if (grad.values.size() != velocity_.size() || theta.values.size() != velocity_.size()) {
        throw ValidationError("sgd: gradient/parameter size mismatch");
    }
    for (std::size_t i = 0; i < velocity_.size(); ++i) {
        velocity_[i] = mu_ * velocity_[i] + grad.values[i];
        theta.values[i] -= lr_ * velocity_[i];
    }
}

GradVector extrapolate_gradient(const GradVector& biased, const GradVector& less_biased,
                                double beta) {
    if (biased.values.size() != less_biased.values.size()) {
        throw ValidationError("extrapolate_gradient: gradient sizes differ");
    }
    GradVector out;
    out.values.resize(biased.values.size());
    const double keep = 1.0 + beta;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        out.values[i] = keep * less_biased.values[i] - beta * biased.values[i];
    }
    return out;
}

std::vector<std::uint8_t> SplitData::gather_labels(std::span<const std::size_t> batch) const {
    std::vector<std::uint8_t> out;
    out.reserve(batch.size());
    for (std::size_t idx : batch) {
        out.push_back(labels.at(idx));
    }
    return out;
}

StepInfo erm_step(const Classifier& model, ParamVector& theta, const SplitData& data,
                  std::span<const std::size_t> batch, SgdMomentum& opt) {
    const auto labels = data.gather_labels(batch);
    auto lg = model.loss_and_grad(theta, data.inputs, batch, labels);
    if (!lg.grad.all_finite() || !std::isfinite(lg.loss)) {
        throw std::runtime_error("erm_step: non-finite gradient on the ERM batch");
    }
    opt.apply(theta, lg.grad);
    return {lg.loss};
}

StepInfo gerne_step(const Classifier& model, ParamVector& theta, const SplitData& data,
                    const BatchPair& pair, double beta, SgdMomentum& opt) {
    if (pair.biased.size() != pair.less_biased.size()) {
        throw ValidationError("gerne_step: biased and less-biased batches differ in size");
    }
    const auto biased_labels = data.gather_labels(pair.biased);
    const auto lb_labels = data.gather_labels(pair.less_biased);
    const auto gb = model.loss_and_grad(theta, data.inputs, pair.biased, biased_labels);
    if (!gb.grad.all_finite() || !std::isfinite(gb.loss)) {
        throw std::runtime_error("gerne_step: non-finite gradient on the biased batch");
    }
    const auto glb = model.loss_and_grad(theta, data.inputs, pair.less_biased, lb_labels);
    if (!glb.grad.all_finite() || !std::isfinite(glb.loss)) {
        throw std::runtime_error("gerne_step: non-finite gradient on the less-biased batch");
    }
    opt.apply(theta, extrapolate_gradient(gb.grad, glb.grad, beta));
    return {glb.loss};
}

namespace {

EvalResult evaluate_split(const Classifier& model, const ParamVector& theta,
                          const SplitData& split) {
    const auto preds = model.predict_all(theta, split.inputs);
    return evaluate(preds, split.labels, split.groups);
}

bool has_all_groups(const SplitData& split) {
    std::array<bool, GroupId::kCount> seen{};
    for (GroupId g : split.groups) seen[g.value()] = true;
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

}  // namespace

TrialResult run_trial(const TrainConfig& config, const ClassifierSpec& model_spec,
                      const ExperimentData& data, std::span<const EvalMetric> track) {
    config.validate();
    if (data.train.size() == 0 || data.validation.size() == 0 || data.test.size() == 0) {
        throw ValidationError("run_trial: every split must be non-empty");
    }
    std::vector<EvalMetric> metrics{config.eval_metric};
    for (EvalMetric m : track) {
        if (std::find(metrics.begin(), metrics.end(), m) == metrics.end()) metrics.push_back(m);
    }
    if (std::find(metrics.begin(), metrics.end(), EvalMetric::WGA) != metrics.end() &&
        !has_all_groups(data.validation)) {
        throw ValidationError("run_trial: WGA model selection needs all four groups in the "
                              "validation split");
    }

    ClassifierSpec spec = model_spec;
    spec.init_seed = config.seed;
    const Classifier model(spec);
    ParamVector theta = model.initialize();
    SgdMomentum opt(config.learning_rate, config.momentum, theta.values.size());

    const GroupedDataset grouped(data.train.groups);
    const BatchSampler sampler(grouped, config.seed);

    TrialResult result;
    result.seed = config.seed;
    result.beta = config.beta;

    const std::size_t gerne_steps = std::max<std::size_t>(1, data.train.size() / config.batch_size);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t steps = 0;
        if (config.method == Method::ERM) {
            for (const auto& batch : sampler.draw_erm(config.batch_size, epoch)) {
                loss_sum += erm_step(model, theta, data.train, batch, opt).loss;
                ++steps;
            }
        } else {
            for (std::size_t step = 0; step < gerne_steps; ++step) {
                const auto pair = sampler.draw_pair(config.batch_size, epoch, step);
                loss_sum += gerne_step(model, theta, data.train, pair, config.beta, opt).loss;
                ++steps;
            }
        }

        const EvalResult val = evaluate_split(model, theta, data.validation);
        EpochLog entry{epoch + 1, loss_sum / static_cast<double>(steps), val.wga, val.bca};
        result.log.push_back(entry);

        for (EvalMetric m : metrics) {
            const double value = m == EvalMetric::WGA ? val.wga : val.bca;
            auto it = result.best.find(m);
            if (it == result.best.end() || value > it->second.selection_value()) {
                result.best[m] = Checkpoint{theta, epoch + 1, val.wga, val.bca, m};
            }
        }
    }

    for (const auto& [m, ckpt] : result.best) {
        result.test[m] = evaluate_split(model, ckpt.theta, data.test);
    }
    return result;
}

CellSummary summarize(std::span<const double> values) {
    CellSummary s;
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / (n - 1.0));
    }
    return s;
}

std::string CellResult::row_label() const {
    return std::string(to_string(method)) + "+" + to_string(eval_metric);
}

const CellResult& RunReport::cell(Method m, EvalMetric e, double tau) const {
    for (const auto& c : cells) {
        if (c.method == m && c.eval_metric == e && c.tau == tau) return c;
    }
    throw ValidationError(std::string("report has no cell ") + to_string(m) + "+" + to_string(e) +
                          " at tau=" + std::to_string(tau));
}

namespace {

CellResult make_cell(Method m, EvalMetric e, double tau, double beta,
                     const std::vector<TrialResult>& trials) {
    CellResult c;
    c.method = m;
    c.eval_metric = e;
    c.tau = tau;
    c.beta = beta;
    for (const auto& t : trials) {
        const auto& test = t.test.at(e);
        const auto& ckpt = t.best.at(e);
        c.test_wga.push_back(test.wga);
        c.test_bca.push_back(test.bca);
        c.val_selection.push_back(ckpt.selection_value());
        c.selected_epoch.push_back(ckpt.epoch);
    }
    c.wga = summarize(c.test_wga);
    c.bca = summarize(c.test_bca);
    return c;
}

}  // namespace

RunReport run_experiment_for_tau(const ExperimentGrid& grid, const ClassifierSpec& model_spec,
                                 const ExperimentData& data, double tau) {
    if (grid.taus.empty()) throw ValidationError("experiment: grid has no tau values");
    if (grid.betas.empty()) throw ValidationError("experiment: grid has no beta values");
    grid.base.validate();

    RunReport report;
    TauRuns runs;
    runs.tau = tau;

    // ERM: one trajectory per trial serves both selection metrics, since the
    // metric only decides which epoch is retained.
    const std::array<EvalMetric, 2> both{EvalMetric::BCA, EvalMetric::WGA};
    for (std::size_t t = 0; t < grid.base.trials; ++t) {
        TrainConfig cfg = grid.base;
        cfg.method = Method::ERM;
        cfg.eval_metric = EvalMetric::BCA;
        cfg.tau = tau;
        cfg.seed = grid.base.seed + t;
        runs.erm.push_back(run_trial(cfg, model_spec, data, both));
    }
    report.cells.push_back(make_cell(Method::ERM, EvalMetric::BCA, tau, 0.0, runs.erm));
    report.cells.push_back(make_cell(Method::ERM, EvalMetric::WGA, tau, 0.0, runs.erm));

    // GERNE: beta is tuned on mean validation WGA across trials; ties keep
    // the earlier grid entry.
    double best_beta = grid.betas.front();
    double best_val = -1.0;
    for (double beta : grid.betas) {
        auto& trials = runs.gerne[beta];
        std::vector<double> vals;
        for (std::size_t t = 0; t < grid.base.trials; ++t) {
            TrainConfig cfg = grid.base;
            cfg.method = Method::GERNE;
            cfg.eval_metric = EvalMetric::WGA;
            cfg.tau = tau;
            cfg.beta = beta;
            cfg.seed = grid.base.seed + t;
            trials.push_back(run_trial(cfg, model_spec, data));
            vals.push_back(trials.back().best.at(EvalMetric::WGA).val_wga);
        }
        const double mean_val = summarize(vals).mean;
        if (mean_val > best_val) {
            best_val = mean_val;
            best_beta = beta;
        }
    }
    runs.selected_beta = best_beta;
    report.cells.push_back(
        make_cell(Method::GERNE, EvalMetric::WGA, tau, best_beta, runs.gerne.at(best_beta)));
    report.runs.push_back(std::move(runs));
    return report;
}

void merge_report(RunReport& into, RunReport&& part) {
    for (auto& c : part.cells) into.cells.push_back(std::move(c));
    for (auto& r : part.runs) into.runs.push_back(std::move(r));
}

void to_json(nlohmann::json& j, const CellResult& c) {
    j = nlohmann::json{{"method", to_string(c.method)},
                       {"eval_metric", to_string(c.eval_metric)},
                       {"row", c.row_label()},
                       {"tau", c.tau},
                       {"beta", c.beta},
                       {"test_wga", c.test_wga},
                       {"test_bca", c.test_bca},
                       {"val_selection", c.val_selection},
                       {"selected_epoch", c.selected_epoch},
                       {"wga_mean", c.wga.mean},
                       {"wga_std", c.wga.stddev},
                       {"bca_mean", c.bca.mean},
                       {"bca_std", c.bca.stddev}};
}

}  // namespace patchdebias
