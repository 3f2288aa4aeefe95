#include "patchdebias/metrics.hpp"

#include <cstdint>

#include "patchdebias/error.hpp"

namespace patchdebias {

double RatioCount::rate() const {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

std::size_t EvalResult::worst_group() const {
    std::size_t worst = GroupId::kCount;
    for (std::size_t g = 0; g < GroupId::kCount; ++g) {
        const auto& cur = per_group[g];
        if (cur.empty()) continue;
        if (worst == GroupId::kCount) {
            worst = g;
            continue;
        }
        const auto& w = per_group[worst];
        // cur/cur.total < w/w.total, cross-multiplied
        if (static_cast<unsigned __int128>(cur.correct) * w.total <
            static_cast<unsigned __int128>(w.correct) * cur.total) {
            worst = g;
        }
    }
    return worst;
}

EvalResult evaluate(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels,
                    std::span<const GroupId> groups) {
    if (preds.size() != labels.size() || preds.size() != groups.size()) {
        throw ValidationError("evaluate: preds, labels and groups must have equal length");
    }
    if (preds.empty()) {
        throw ValidationError("evaluate: no samples");
    }
    EvalResult r;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] > 1 || preds[i] > 1) {
            throw ValidationError("evaluate: labels and predictions must be 0 or 1");
        }
        const bool ok = preds[i] == labels[i];
        auto& g = r.per_group.at(groups[i].value());
        ++g.total;
        g.correct += ok;
        auto& c = r.per_class[labels[i]];
        ++c.total;
        c.correct += ok;
    }

    for (std::size_t g = 0; g < GroupId::kCount; ++g) {
        if (r.per_group[g].empty()) {
            r.empty_groups.push_back(static_cast<std::uint8_t>(g));
        }
    }
    r.wga = r.per_group[r.worst_group()].rate();

    const auto& c0 = r.per_class[0];
    const auto& c1 = r.per_class[1];
    if (c0.empty() || c1.empty()) {
        r.empty_classes.push_back(c0.empty() ? 0 : 1);
        r.bca = c0.empty() ? c1.rate() : c0.rate();
    } else {
        // (a/b + c/d) / 2 == (a*d + c*b) / (2*b*d), one division.
        const std::uint64_t num = static_cast<std::uint64_t>(c0.correct) * c1.total +
                                  static_cast<std::uint64_t>(c1.correct) * c0.total;
        const std::uint64_t den = 2 * static_cast<std::uint64_t>(c0.total) * c1.total;
        r.bca = static_cast<double>(num) / static_cast<double>(den);
    }
    return r;
}

void to_json(nlohmann::json& j, const EvalResult& r) {
    j = nlohmann::json::object();
    j["wga"] = r.wga;
    j["bca"] = r.bca;
    auto& groups = j["groups"] = nlohmann::json::array();
    for (std::size_t g = 0; g < GroupId::kCount; ++g) {
        const auto& c = r.per_group[g];
        groups.push_back({{"group_id", g},
                          {"name", group_name(GroupId(static_cast<std::uint8_t>(g)))},
                          {"correct", c.correct},
                          {"count", c.total},
                          {"accuracy", c.empty() ? nlohmann::json(nullptr) : nlohmann::json(c.rate())}});
    }
    auto& classes = j["classes"] = nlohmann::json::array();
    for (std::size_t k = 0; k < 2; ++k) {
        const auto& c = r.per_class[k];
        classes.push_back({{"label", k},
                           {"correct", c.correct},
                           {"count", c.total},
                           {"accuracy", c.empty() ? nlohmann::json(nullptr) : nlohmann::json(c.rate())}});
    }
    j["empty_groups"] = r.empty_groups;
}

}  // namespace patchdebias
