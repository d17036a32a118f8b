#pragma once

// Permutation-invariant ensembling of mask sets from several subnets.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "psc/assignment.hpp"
#include "psc/detail/parallel.hpp"
#include "psc/error.hpp"
#include "psc/masks.hpp"

namespace psc {

enum class CostMode { soft, hard };

struct EnsembleConfig {
    CostMode cost_mode = CostMode::soft;
    /// Binarization threshold used by CostMode::hard.
    double hard_threshold = 0.5;
    /// Worker threads for the alignments (0 = hardware concurrency). Output
    /// does not depend on it.
    unsigned threads = 1;
};

inline CostMatrix matching_cost(const MaskSet& ref, const MaskSet& other, const EnsembleConfig& cfg) {
    return cfg.cost_mode == CostMode::soft ? soft_iou_cost(ref, other)
                                           : hard_iou_cost(ref, other, cfg.hard_threshold);
}

/// Reorders `other` so that its query k is the Hungarian match of `ref`'s
/// query k, with its support extended to the union of both supports.
inline MaskSet align_pair(const MaskSet& ref, const MaskSet& other, const EnsembleConfig& cfg = {}) {
    detail::require_comparable(ref, other, "align_pair");
    if (ref.classes != other.classes) {
        throw InvalidArgument("align_pair: class counts differ");
    }
    const auto match = solve_assignment(matching_cost(ref, other, cfg));
    return permute_queries(extend_support(other, union_sites(ref.sites, other.sites)), match.mapping);
}

/// Aligns every set against the first one, then averages class
/// probabilities and mask scores of matched queries over the union support.
/// A single set is returned unchanged.
inline MaskSet ensemble(std::span<const MaskSet> sets, const EnsembleConfig& cfg = {}) {
    if (sets.empty()) {
        throw InvalidArgument("ensemble: no mask sets given");
    }
    const MaskSet& first = sets.front();
    for (const auto& s : sets) {
        detail::require_comparable(first, s, "ensemble");
        if (s.classes != first.classes) {
            throw InvalidArgument("ensemble: class counts differ");
        }
    }
    if (sets.size() == 1) {
        return first;
    }

    std::vector<Coord> support = first.sites;
    for (std::size_t i = 1; i < sets.size(); ++i) {
        support = union_sites(support, sets[i].sites);
    }
    std::vector<MaskSet> aligned(sets.size());
    aligned[0] = extend_support(first, support);
    detail::parallel_for(sets.size() - 1, cfg.threads, [&](std::size_t idx) {
        const std::size_t i = idx + 1;
        const auto match = solve_assignment(matching_cost(first, sets[i], cfg));
        aligned[i] = permute_queries(extend_support(sets[i], support), match.mapping);
    });

    MaskSet out = aligned[0];
    const auto m = static_cast<double>(sets.size());
    for (std::size_t j = 0; j < out.class_probs.size(); ++j) {
        double sum = 0.0;
        for (const auto& a : aligned) {
            sum += a.class_probs[j];
        }
        out.class_probs[j] = sum / m;
    }
    for (std::size_t j = 0; j < out.mask_scores.size(); ++j) {
        double sum = 0.0;
        for (const auto& a : aligned) {
            sum += a.mask_scores[j];
        }
        out.mask_scores[j] = sum / m;
    }
    return out;
}

} // namespace psc
