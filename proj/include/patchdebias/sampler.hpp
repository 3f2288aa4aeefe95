#pragma once

// Mini-batch streams: a biased stream that mirrors the training set's group
// mix, a group-balanced ("less-biased") stream, and epoch permutations for
// plain ERM. Every draw is a pure function of (seed, epoch, step).

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "patchdebias/composition.hpp"

namespace patchdebias {

class GroupedDataset {
public:
    explicit GroupedDataset(std::span<const GroupId> groups);

    std::size_t size() const { return size_; }
    std::size_t count(std::size_t group) const { return members_.at(group).size(); }
    const std::vector<std::size_t>& members(std::size_t group) const { return members_.at(group); }
    GroupId group_of(std::size_t index) const { return groups_.at(index); }

private:
    std::size_t size_ = 0;
    std::vector<GroupId> groups_;
    std::array<std::vector<std::size_t>, GroupId::kCount> members_;
};

struct BatchPair {
    std::vector<std::size_t> biased;
    std::vector<std::size_t> less_biased;
};

// Per-group counts for a balanced batch of size B: floor(B/4) each, residue
// to the lowest group ids.
std::array<std::size_t, GroupId::kCount> balanced_group_counts(std::size_t batch_size);

class BatchSampler {
public:
    BatchSampler(const GroupedDataset& data, std::uint64_t seed) : data_(&data), seed_(seed) {}

    // i.i.d. uniform over all records, with replacement.
    std::vector<std::size_t> draw_biased(std::size_t batch_size, std::size_t epoch,
                                         std::size_t step) const;

    // Equal share per group, uniform with replacement inside each group.
    // Requires batch_size >= 4 and every group non-empty.
    std::vector<std::size_t> draw_less_biased(std::size_t batch_size, std::size_t epoch,
                                              std::size_t step) const;

    // B_b and B_lb are drawn from independent streams.
    BatchPair draw_pair(std::size_t batch_size, std::size_t epoch, std::size_t step) const;

    // Without-replacement permutation of all indices for one epoch.
    std::vector<std::size_t> erm_permutation(std::size_t epoch) const;

    // The epoch permutation cut into consecutive batches; the last one may be
    // short.
    std::vector<std::vector<std::size_t>> draw_erm(std::size_t batch_size,
                                                   std::size_t epoch) const;

private:
    const GroupedDataset* data_;
    std::uint64_t seed_;
};

}  // namespace patchdebias
