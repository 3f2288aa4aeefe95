#include "patchdebias/sampler.hpp"

#include <numeric>
#include <string>

#include "patchdebias/error.hpp"
#include "patchdebias/random.hpp"

namespace patchdebias {

namespace {

enum Stream : std::uint64_t {
    kBiased = 0x62,
    kLessBiased = 0x6c62,
    kErm = 0x65726d,
};

}  // namespace

GroupedDataset::GroupedDataset(std::span<const GroupId> groups)
    : size_(groups.size()), groups_(groups.begin(), groups.end()) {
    for (std::size_t i = 0; i < groups.size(); ++i) {
        members_.at(groups[i].value()).push_back(i);
    }
}

std::array<std::size_t, GroupId::kCount> balanced_group_counts(std::size_t batch_size) {
    std::array<std::size_t, GroupId::kCount> counts{};
    counts.fill(batch_size / GroupId::kCount);
    for (std::size_t g = 0; g < batch_size % GroupId::kCount; ++g) {
        ++counts[g];
    }
    return counts;
}

std::vector<std::size_t> BatchSampler::draw_biased(std::size_t batch_size, std::size_t epoch,
                                                   std::size_t step) const {
    if (batch_size < 1) {
        throw ValidationError("draw_biased: batch size must be >= 1");
    }
    if (data_->size() == 0) {
        throw ValidationError("draw_biased: dataset is empty");
    }
    Rng rng({seed_, kBiased, epoch, step});
    std::vector<std::size_t> batch(batch_size);
    for (auto& idx : batch) {
        idx = rng.below(data_->size());
    }
    return batch;
}

std::vector<std::size_t> BatchSampler::draw_less_biased(std::size_t batch_size,
                                                        std::size_t epoch,
                                                        std::size_t step) const {
    if (batch_size < GroupId::kCount) {
        throw ValidationError("draw_less_biased: batch size must be >= 4");
    }
    for (std::size_t g = 0; g < GroupId::kCount; ++g) {
        if (data_->count(g) == 0) {
            throw ValidationError("draw_less_biased: group " + std::to_string(g) + " (" +
                                  group_name(GroupId(static_cast<std::uint8_t>(g))) +
                                  ") is empty");
        }
    }
    Rng rng({seed_, kLessBiased, epoch, step});
    const auto counts = balanced_group_counts(batch_size);
    std::vector<std::size_t> batch;
    batch.reserve(batch_size);
    for (std::size_t g = 0; g < GroupId::kCount; ++g) {
        const auto& members = data_->members(g);
        for (std::size_t k = 0; k < counts[g]; ++k) {
            batch.push_back(members[rng.below(members.size())]);
        }
    }
    return batch;
}

BatchPair BatchSampler::draw_pair(std::size_t batch_size, std::size_t epoch,
                                  std::size_t step) const {
    return {draw_biased(batch_size, epoch, step), draw_less_biased(batch_size, epoch, step)};
}

std::vector<std::size_t> BatchSampler::erm_permutation(std::size_t epoch) const {
    std::vector<std::size_t> perm(data_->size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng({seed_, kErm, epoch});
    // Fisher-Yates with the portable integer draw.
    for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.below(i)]);
    }
    return perm;
}

std::vector<std::vector<std::size_t>> BatchSampler::draw_erm(std::size_t batch_size,
                                                             std::size_t epoch) const {
    if (batch_size < 1) {
        throw ValidationError("draw_erm: batch size must be >= 1");
    }
    const auto perm = erm_permutation(epoch);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < perm.size(); start += batch_size) {
        const std::size_t end = std::min(perm.size(), start + batch_size);
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace patchdebias
