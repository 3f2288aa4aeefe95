#include "patchdebias/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "patchdebias/error.hpp"

namespace patchdebias {

const char* to_string(RatioKind k) {
    switch (k) {
        case RatioKind::Tumor: return "tumor";
        case RatioKind::TumorTissue: return "tumor_tissue";
        case RatioKind::Tissue: return "tissue";
    }
    return "unknown";
}

RatioKind ratio_kind_from_string(const std::string& s) {
    if (s == "tumor") return RatioKind::Tumor;
    if (s == "tumor_tissue") return RatioKind::TumorTissue;
    if (s == "tissue") return RatioKind::Tissue;
    throw ValidationError("unknown ratio kind '" + s + "'");
}

std::optional<double> ratio_of(const PatchRatios& r, RatioKind kind) {
    switch (kind) {
        case RatioKind::Tumor: return r.r_tumor;
        case RatioKind::TumorTissue: return r.r_tumor_tissue;
        case RatioKind::Tissue: return r.r_tissue;
    }
    return std::nullopt;
}

std::size_t bin_index(double value, std::span<const double> edges) {
    const std::size_t n = edges.size() - 1;
    if (!(value >= edges.front() && value <= edges.back())) {
        throw ValidationError("histogram: ratio outside [0,1]");
    }
    auto k = static_cast<std::size_t>(value * static_cast<double>(n));
    k = std::min(k, n - 1);
    // The product can land one bin off near an edge; settle against the
    // stored edges so binning matches the [a, b) comparisons exactly.
    while (k > 0 && value < edges[k]) --k;
    while (k + 1 < n && value >= edges[k + 1]) ++k;
    return k;
}

ConditionalHistogram histogram(std::span<const PatchRecord> records, RatioKind kind,
                               std::uint8_t condition, std::size_t n_bins) {
    if (n_bins < 1) {
        throw ValidationError("histogram: n_bins must be >= 1");
    }
    ConditionalHistogram h;
    h.kind = kind;
    h.condition = condition;
    h.source_size = records.size();
    h.edges.resize(n_bins + 1);
    for (std::size_t k = 0; k <= n_bins; ++k) {
        h.edges[k] = static_cast<double>(k) / static_cast<double>(n_bins);
    }
    h.counts.assign(n_bins, 0);
    h.mass.assign(n_bins, 0.0);

    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].label != condition) continue;
        ++h.matched;
        const auto value = ratio_of(records[i].ratios, kind);
        if (!value) {
            ++h.excluded_undefined;
            continue;
        }
        const std::size_t k = bin_index(*value, h.edges);
        ++h.counts[k];
        h.members.emplace_back(i, k);
    }
    const std::size_t binned = h.members.size();
    h.empty = binned == 0;
    if (!h.empty) {
        for (std::size_t k = 0; k < n_bins; ++k) {
            h.mass[k] = static_cast<double>(h.counts[k]) / static_cast<double>(binned);
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    h.correct_fraction.assign(n_bins, nan);
    h.incorrect_fraction.assign(n_bins, nan);
    return h;
}

ConditionalHistogram overlay_predictions(const ConditionalHistogram& hist,
                                         std::span<const std::uint8_t> preds,
                                         std::span<const std::uint8_t> labels) {
    if (preds.size() != hist.source_size || labels.size() != hist.source_size) {
        throw ValidationError("overlay_predictions: predictions are not aligned with the "
                              "histogram's records");
    }
    ConditionalHistogram out = hist;
    std::vector<std::size_t> correct(hist.bins(), 0);
    for (const auto& [idx, bin] : hist.members) {
        correct[bin] += preds[idx] == labels[idx];
    }
    for (std::size_t k = 0; k < hist.bins(); ++k) {
        if (hist.counts[k] == 0) continue;
        const std::size_t n = hist.counts[k];
        out.correct_fraction[k] = static_cast<double>(correct[k]) / static_cast<double>(n);
        out.incorrect_fraction[k] = static_cast<double>(n - correct[k]) / static_cast<double>(n);
    }
    return out;
}

std::string histogram_csv(const ConditionalHistogram& hist) {
    std::ostringstream os;
    os << "bin_left,bin_right,mass,count,correct_fraction,incorrect_fraction\n";
    char buf[64];
    const auto num = [&](double v) -> std::string {
        if (std::isnan(v)) return "";
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        return buf;
    };
    for (std::size_t k = 0; k < hist.bins(); ++k) {
        os << num(hist.edges[k]) << ',' << num(hist.edges[k + 1]) << ',' << num(hist.mass[k])
           << ',' << hist.counts[k] << ',' << num(hist.correct_fraction[k]) << ','
           << num(hist.incorrect_fraction[k]) << '\n';
    }
    return os.str();
}

BiasReport bias_report(std::span<const PatchRecord> records, double tau) {
    if (records.empty()) {
        throw ValidationError("bias_report: no records");
    }
    BiasReport r;
    r.tau = tau;
    r.total = records.size();
    std::size_t aligned = 0;
    for (const auto& rec : records) {
        const std::uint8_t z = binarize_spurious(rec.ratios.r_tissue, tau);
        ++r.counts[rec.label][z];
        aligned += z == rec.label;
    }
    const auto n = static_cast<double>(r.total);
    for (std::uint8_t y = 0; y < 2; ++y) {
        for (std::uint8_t z = 0; z < 2; ++z) {
            r.proportions[GroupId::encode(y, z).value()] = static_cast<double>(r.counts[y][z]) / n;
        }
    }
    r.alignment = static_cast<double>(aligned) / n;
    return r;
}

void to_json(nlohmann::json& j, const BiasReport& r) {
    j = nlohmann::json::object();
    j["tau"] = r.tau;
    j["total"] = r.total;
    j["alignment"] = r.alignment;
    auto& table = j["contingency"] = nlohmann::json::array();
    for (std::uint8_t y = 0; y < 2; ++y) {
        for (std::uint8_t z = 0; z < 2; ++z) {
            const GroupId g = GroupId::encode(y, z);
            table.push_back({{"y", y},
                             {"z", z},
                             {"group_id", g.value()},
                             {"name", group_name(g)},
                             {"count", r.counts[y][z]},
                             {"proportion", r.proportions[g.value()]}});
        }
    }
}

}  // namespace patchdebias
