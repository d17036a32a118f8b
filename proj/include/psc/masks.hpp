#pragma once

// Mask-set predictions, the soft-IoU matching cost, and mask-to-panoptic
// assembly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psc/assignment.hpp"
#include "psc/core.hpp"
#include "psc/detail/parallel.hpp"
#include "psc/error.hpp"

namespace psc {

/// One subnet's panoptic prediction: K queries over N support sites.
///
/// `class_probs` is K x (C+1) row-major, the last column being the
/// no-object class. `mask_scores` is K x N row-major, columns following the
/// lexicographic order of `sites`. Scores off the support are 0.
struct MaskSet {
    Dims dims;
    float voxel_size = 0.2F;
    std::vector<Coord> sites;
    std::size_t queries = 0;
    std::size_t classes = 0;
    std::vector<double> class_probs;
    std::vector<double> mask_scores;

    [[nodiscard]] std::size_t num_sites() const noexcept { return sites.size(); }
    [[nodiscard]] std::size_t prob_columns() const noexcept { return classes + 1; }
    [[nodiscard]] std::size_t null_class() const noexcept { return classes; }

    [[nodiscard]] std::span<const double> probs(std::size_t k) const noexcept {
        return {class_probs.data() + k * prob_columns(), prob_columns()};
    }
    [[nodiscard]] std::span<double> probs(std::size_t k) noexcept {
        return {class_probs.data() + k * prob_columns(), prob_columns()};
    }
    [[nodiscard]] std::span<const double> scores(std::size_t k) const noexcept {
        return {mask_scores.data() + k * sites.size(), sites.size()};
    }
    [[nodiscard]] std::span<double> scores(std::size_t k) noexcept {
        return {mask_scores.data() + k * sites.size(), sites.size()};
    }

    friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

/// Checks shapes, site order, score range and probability normalization.
inline void validate(const MaskSet& ms, double prob_tolerance = 1e-6) {
    if (ms.class_probs.size() != ms.queries * ms.prob_columns()) {
        throw InvalidArgument("MaskSet: class_probs has " + std::to_string(ms.class_probs.size()) + " values, expected " +
                              std::to_string(ms.queries * ms.prob_columns()));
    }
    if (ms.mask_scores.size() != ms.queries * ms.sites.size()) {
        throw InvalidArgument("MaskSet: mask_scores has " + std::to_string(ms.mask_scores.size()) +
                              " values, expected " + std::to_string(ms.queries * ms.sites.size()));
    }
    for (std::size_t i = 0; i < ms.sites.size(); ++i) {
        if (!ms.dims.contains(ms.sites[i])) {
            throw InvalidArgument("MaskSet: site " + to_string(ms.sites[i]) + " outside dims " + to_string(ms.dims));
        }
        if (i > 0 && !(ms.sites[i - 1] < ms.sites[i])) {
            throw InvalidArgument("MaskSet: sites not strictly lexicographic at index " + std::to_string(i));
        }
    }
    for (double s : ms.mask_scores) {
        if (!(s >= 0.0 && s <= 1.0)) {
            throw InvalidArgument("MaskSet: mask score outside [0,1]");
        }
    }
    for (std::size_t k = 0; k < ms.queries; ++k) {
        double sum = 0.0;
        for (double p : ms.probs(k)) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw InvalidArgument("MaskSet: class probability outside [0,1] in query " + std::to_string(k));
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > prob_tolerance) {
            throw InvalidArgument("MaskSet: class probabilities of query " + std::to_string(k) + " sum to " +
                                  std::to_string(sum));
        }
    }
}

/// Index of the largest entry; smallest index wins ties.
inline std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

/// Sorted union of two sorted coordinate lists.
inline std::vector<Coord> union_sites(std::span<const Coord> a, std::span<const Coord> b) {
    std::vector<Coord> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

/// Re-indexes mask scores onto a sorted superset of the support; new sites
/// score 0.
inline MaskSet extend_support(const MaskSet& ms, std::vector<Coord> superset) {
    if (superset == ms.sites) {
        return ms;
    }
    MaskSet out{ms.dims, ms.voxel_size, std::move(superset), ms.queries, ms.classes, ms.class_probs, {}};
    out.mask_scores.assign(out.queries * out.sites.size(), 0.0);
    std::size_t j = 0;
    for (std::size_t i = 0; i < ms.sites.size(); ++i) {
        while (j < out.sites.size() && out.sites[j] < ms.sites[i]) {
            ++j;
        }
        if (j == out.sites.size() || !(out.sites[j] == ms.sites[i])) {
            throw InvalidArgument("extend_support: site " + to_string(ms.sites[i]) + " missing from superset");
        }
        for (std::size_t k = 0; k < ms.queries; ++k) {
            out.mask_scores[k * out.sites.size() + j] = ms.mask_scores[k * ms.sites.size() + i];
        }
    }
    return out;
}

/// Appends no-object queries (zero masks, one-hot on the no-object column)
/// until the set has `target` queries.
inline MaskSet pad_to(const MaskSet& ms, std::size_t target) {
    if (target < ms.queries) {
        throw InvalidArgument("pad_to: target " + std::to_string(target) + " is below K=" + std::to_string(ms.queries));
    }
    MaskSet out = ms;
    out.queries = target;
    out.class_probs.resize(target * ms.prob_columns(), 0.0);
    out.mask_scores.resize(target * ms.sites.size(), 0.0);
    for (std::size_t k = ms.queries; k < target; ++k) {
        out.probs(k)[ms.null_class()] = 1.0;
    }
    return out;
}

/// Returns the set with its queries reordered: output query k is input query
/// order[k].
inline MaskSet permute_queries(const MaskSet& ms, std::span<const std::size_t> order) {
    if (order.size() != ms.queries) {
        throw InvalidArgument("permute_queries: order has wrong length");
    }
    MaskSet out = ms;
    for (std::size_t k = 0; k < order.size(); ++k) {
        std::ranges::copy(ms.probs(order[k]), out.probs(k).begin());
        std::ranges::copy(ms.scores(order[k]), out.scores(k).begin());
    }
    return out;
}

/// Per-site semantic distribution S'(v, c) = sum_k m_k(v) p_k(c) over the
/// real classes, renormalized per site. A site no query covers gets all
/// mass on `empty_class`. Returns N x C row-major.
inline std::vector<double> per_site_semantics(const MaskSet& ms, ClassId empty_class) {
    const std::size_t n = ms.num_sites();
    const std::size_t c = ms.classes;
    if (empty_class >= c) {
        throw InvalidArgument("per_site_semantics: empty class id outside the class range");
    }
    std::vector<double> out(n * c, 0.0);
    for (std::size_t k = 0; k < ms.queries; ++k) {
        const auto p = ms.probs(k);
        const auto m = ms.scores(k);
        for (std::size_t v = 0; v < n; ++v) {
            if (m[v] == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < c; ++j) {
                out[v * c + j] += m[v] * p[j];
            }
        }
    }
    for (std::size_t v = 0; v < n; ++v) {
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            sum += out[v * c + j];
        }
        if (sum > 0.0) {
            for (std::size_t j = 0; j < c; ++j) {
                out[v * c + j] /= sum;
            }
        } else {
            out[v * c + empty_class] = 1.0;
        }
    }
    return out;
}

namespace detail {

inline void require_comparable(const MaskSet& a, const MaskSet& b, const char* who) {
    if (!(a.dims == b.dims)) {
        throw InvalidArgument(std::string(who) + ": dims differ (" + to_string(a.dims) + " vs " + to_string(b.dims) + ")");
    }
    if (a.queries != b.queries) {
        throw InvalidArgument(std::string(who) + ": query counts differ (" + std::to_string(a.queries) + " vs " +
                              std::to_string(b.queries) + "); pad first");
    }
}

// Site index pairs present in both sorted supports, in lexicographic order.
inline std::vector<std::pair<std::size_t, std::size_t>> common_sites(std::span<const Coord> a, std::span<const Coord> b) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) {
            ++i;
        } else if (b[j] < a[i]) {
            ++j;
        } else {
            out.emplace_back(i++, j++);
        }
    }
    return out;
}

inline std::vector<double> binarized(std::span<const double> scores, double threshold) {
    std::vector<double> out(scores.size());
    std::ranges::transform(scores, out.begin(), [threshold](double s) { return s >= threshold ? 1.0 : 0.0; });
    return out;
}

// Entry (l, k) = -I / (|a_l| + |b_k| - I) with I = sum a_l(v) b_k(v). All
// sums run in lexicographic site order; zeros off the support contribute
// nothing, so the result equals the densified computation exactly.
inline CostMatrix iou_cost(std::span<const Coord> sites_a, std::span<const double> scores_a, std::span<const Coord> sites_b,
                           std::span<const double> scores_b, std::size_t k, unsigned threads) {
    const std::size_t na = sites_a.size();
    const std::size_t nb = sites_b.size();
    const auto pairs = common_sites(sites_a, sites_b);
    std::vector<double> mass_a(k, 0.0);
    std::vector<double> mass_b(k, 0.0);
    for (std::size_t q = 0; q < k; ++q) {
        for (std::size_t i = 0; i < na; ++i) {
            mass_a[q] += scores_a[q * na + i];
        }
        for (std::size_t j = 0; j < nb; ++j) {
            mass_b[q] += scores_b[q * nb + j];
        }
    }
    CostMatrix cost(k);
    parallel_for(k, threads, [&](std::size_t l) {
        const double* row_a = scores_a.data() + l * na;
        for (std::size_t q = 0; q < k; ++q) {
            const double* row_b = scores_b.data() + q * nb;
            double inter = 0.0;
            for (const auto& [i, j] : pairs) {
                inter += row_a[i] * row_b[j];
            }
            const double denom = mass_a[l] + mass_b[q] - inter;
            cost(l, q) = denom > 0.0 ? -(inter / denom) : 0.0;
        }
    });
    return cost;
}

} // namespace detail

/// Soft-IoU matching cost between two mask sets of equal K, each support
/// densified over the union of both (zero off-support).
inline CostMatrix soft_iou_cost(const MaskSet& y, const MaskSet& y_hat, unsigned threads = 1) {
    detail::require_comparable(y, y_hat, "soft_iou_cost");
    return detail::iou_cost(y.sites, y.mask_scores, y_hat.sites, y_hat.mask_scores, y.queries, threads);
}

/// Same cost after thresholding scores (>= threshold maps to 1).
inline CostMatrix hard_iou_cost(const MaskSet& y, const MaskSet& y_hat, double bin_threshold = 0.5,
                                unsigned threads = 1) {
    detail::require_comparable(y, y_hat, "hard_iou_cost");
    const auto a = detail::binarized(y.mask_scores, bin_threshold);
    const auto b = detail::binarized(y_hat.mask_scores, bin_threshold);
    return detail::iou_cost(y.sites, a, y_hat.sites, b, y.queries, threads);
}

// ---------------------------------------------------------------------------
// Assembly

struct AssemblyParams {
    /// A query keeps its mask only if it wins at least this fraction of its
    /// foreground sites.
    double overlap_keep_threshold = 0.8;
    std::size_t min_mask_voxels = 1;
    /// Foreground gate on mask scores.
    double mask_threshold = 0.5;
};

inline void validate(const AssemblyParams& params) {
    if (!(params.overlap_keep_threshold > 0.0 && params.overlap_keep_threshold <= 1.0)) {
        throw InvalidArgument("AssemblyParams: overlap_keep_threshold must lie in (0,1]");
    }
}

/// A query that survived assembly, with the support indices it claimed.
struct AssembledSegment {
    std::size_t query = 0;
    ClassId label = 0;
    InstanceId instance = 0;
    /// Maximum class probability over the real classes.
    double confidence = 0.0;
    std::vector<std::size_t> site_indices;
};

struct Assembly {
    PanopticGrid grid;
    std::vector<AssembledSegment> segments;
};

namespace detail {

// Per-site winner among `active` queries: largest m * p(class) over queries
// with m >= gate, smallest query index on ties. npos when unclaimed.
inline std::vector<std::size_t> claim_sites(const MaskSet& ms, const std::vector<std::size_t>& active,
                                            const std::vector<double>& class_score, double gate) {
    constexpr auto npos = static_cast<std::size_t>(-1);
    std::vector<std::size_t> owner(ms.num_sites(), npos);
    std::vector<double> best(ms.num_sites(), 0.0);
    for (std::size_t k : active) {
        const auto row = ms.scores(k);
        for (std::size_t v = 0; v < row.size(); ++v) {
            if (row[v] < gate) {
                continue;
            }
            const double s = row[v] * class_score[k];
            if (owner[v] == npos || s > best[v]) {
                owner[v] = k;
                best[v] = s;
            }
        }
    }
    return owner;
}

} // namespace detail

/// Turns a mask set into panoptic segments.
///
/// Queries whose argmax class is no-object (or the empty class) are dropped.
/// Each site goes to the query maximizing m_k(site) * p_k(c_k) among queries
/// with m_k(site) >= mask_threshold. Queries that keep less than
/// overlap_keep_threshold of their foreground sites, or fewer than
/// min_mask_voxels sites, are removed and the sites are claimed again by the
/// survivors in a single pass. Thing queries get instance ids 1..n in query
/// order; stuff queries of one class share instance 0.
inline Assembly assemble(const MaskSet& ms, const ClassTaxonomy& tax, const AssemblyParams& params = {}) {
    validate(params);
    if (ms.classes != tax.size()) {
        throw InvalidArgument("assemble: mask set has " + std::to_string(ms.classes) + " classes, taxonomy has " +
                              std::to_string(tax.size()));
    }
    constexpr auto npos = static_cast<std::size_t>(-1);
    std::vector<std::size_t> cls(ms.queries, npos);
    std::vector<double> class_score(ms.queries, 0.0);
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < ms.queries; ++k) {
        const auto p = ms.probs(k);
        const std::size_t c = argmax(p);
        if (c == ms.null_class() || c == tax.empty_class_id()) {
            continue;
        }
        cls[k] = c;
        class_score[k] = p[c];
        active.push_back(k);
    }

    auto owner = detail::claim_sites(ms, active, class_score, params.mask_threshold);

    std::vector<std::size_t> claimed(ms.queries, 0);
    for (std::size_t o : owner) {
        if (o != npos) {
            ++claimed[o];
        }
    }
    std::vector<std::size_t> survivors;
    bool dropped_any = false;
    for (std::size_t k : active) {
        const auto row = ms.scores(k);
        const auto foreground = static_cast<std::size_t>(
            std::ranges::count_if(row, [&](double s) { return s >= params.mask_threshold; }));
        const bool keep = foreground > 0 && claimed[k] >= params.min_mask_voxels &&
                          !(static_cast<double>(claimed[k]) / static_cast<double>(foreground) <
                            params.overlap_keep_threshold);
        if (keep) {
            survivors.push_back(k);
        } else {
            dropped_any = true;
        }
    }
    if (dropped_any) {
        owner = detail::claim_sites(ms, survivors, class_score, params.mask_threshold);
    }

    Assembly out;
    out.grid = PanopticGrid{ms.dims, ms.voxel_size, {}, {}};
    std::vector<std::size_t> segment_of(ms.queries, npos);
    InstanceId next_instance = 1;
    for (std::size_t k : survivors) {
        const auto label = static_cast<ClassId>(cls[k]);
        const auto real = ms.probs(k).first(ms.classes);
        AssembledSegment seg{k, label, tax.is_thing(label) ? next_instance++ : 0, *std::ranges::max_element(real), {}};
        segment_of[k] = out.segments.size();
        out.segments.push_back(std::move(seg));
    }
    for (std::size_t v = 0; v < owner.size(); ++v) {
        if (owner[v] == npos) {
            continue;
        }
        auto& seg = out.segments[segment_of[owner[v]]];
        seg.site_indices.push_back(v);
        out.grid.sites.push_back({ms.sites[v], seg.label, seg.instance});
    }
    return out;
}

inline PanopticGrid assemble_panoptic(const MaskSet& ms, const ClassTaxonomy& tax, const AssemblyParams& params = {}) {
    return assemble(ms, tax, params).grid;
}

} // namespace psc
