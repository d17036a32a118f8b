#pragma once

// Value functions for the training losses: cross-entropy, Lovasz-softmax,
// dice, BCE, the voxel-query semantic loss and the Hungarian mask-matching
// loss. Values only; no gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "psc/assignment.hpp"
#include "psc/calibration.hpp"
#include "psc/core.hpp"
#include "psc/error.hpp"
#include "psc/masks.hpp"

namespace psc {

struct LossWeights {
    double lambda1 = 0.3;
    double lambda_dice = 1.0;
    double lambda_bce = 40.0;
    double lambda_null = 0.1;
    double lambda_ce = 1.0;
};

inline void validate(const LossWeights& w) {
    if (w.lambda1 < 0.0 || w.lambda_dice < 0.0 || w.lambda_bce < 0.0 || w.lambda_null < 0.0 || w.lambda_ce < 0.0) {
        throw InvalidArgument("LossWeights: weights must be non-negative");
    }
}

/// Row-major table of per-item class distributions.
struct ProbTable {
    std::size_t classes = 0;
    std::vector<double> values;

    [[nodiscard]] std::size_t rows() const noexcept { return classes == 0 ? 0 : values.size() / classes; }
    [[nodiscard]] std::span<const double> row(std::size_t i) const noexcept {
        return {values.data() + i * classes, classes};
    }
};

namespace detail {

inline void check_table(const ProbTable& probs, std::span<const ClassId> labels, ClassId ignore, const char* who) {
    if (probs.classes == 0 || probs.values.size() != labels.size() * probs.classes) {
        throw InvalidArgument(std::string(who) + ": table has " + std::to_string(probs.values.size()) + " values for " +
                              std::to_string(labels.size()) + " labels");
    }
    for (ClassId l : labels) {
        if (l != ignore && l >= probs.classes) {
            throw InvalidArgument(std::string(who) + ": label " + std::to_string(l) + " out of range");
        }
    }
}

} // namespace detail

/// Mean of -ln p(label) over items whose label is not `ignore`.
inline double cross_entropy(const ProbTable& probs, std::span<const ClassId> labels, ClassId ignore = kDefaultUnlabeledId) {
    detail::check_table(probs, labels, ignore, "cross_entropy");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == ignore) {
            continue;
        }
        sum += -std::log(std::clamp(probs.row(i)[labels[i]], kProbClamp, 1.0));
        ++n;
    }
    if (n == 0) {
        throw InvalidArgument("cross_entropy: every item is ignored");
    }
    return sum / static_cast<double>(n);
}

/// Lovasz-softmax: the Lovasz extension of the Jaccard loss, averaged over
/// classes that occur in the labels.
inline double lovasz_softmax(const ProbTable& probs, std::span<const ClassId> labels, ClassId ignore = kDefaultUnlabeledId) {
    detail::check_table(probs, labels, ignore, "lovasz_softmax");
    std::vector<std::size_t> items;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != ignore) {
            items.push_back(i);
        }
    }
    if (items.empty()) {
        throw InvalidArgument("lovasz_softmax: every item is ignored");
    }
    double total = 0.0;
    std::size_t present = 0;
    std::vector<double> errors(items.size());
    std::vector<double> fg(items.size());
    std::vector<std::size_t> order(items.size());
    for (std::size_t c = 0; c < probs.classes; ++c) {
        double gts = 0.0;
        for (std::size_t n = 0; n < items.size(); ++n) {
            fg[n] = labels[items[n]] == c ? 1.0 : 0.0;
            errors[n] = std::abs(fg[n] - probs.row(items[n])[c]);
            gts += fg[n];
        }
        if (gts == 0.0) {
            continue;
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
        double cum_fg = 0.0;
        double cum_bg = 0.0;
        double prev_jaccard = 0.0;
        double loss = 0.0;
        for (std::size_t r = 0; r < order.size(); ++r) {
            cum_fg += fg[order[r]];
            cum_bg += 1.0 - fg[order[r]];
            const double jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            loss += errors[order[r]] * (jaccard - prev_jaccard);
            prev_jaccard = jaccard;
        }
        total += loss;
        ++present;
    }
    return total / static_cast<double>(present);
}

inline constexpr double kDiceSmooth = 1e-6;

/// 1 - (2 sum m*t + eps) / (sum m + sum t + eps).
inline double dice_loss(std::span<const double> m, std::span<const double> target) {
    if (m.size() != target.size()) {
        throw InvalidArgument("dice_loss: mask sizes differ");
    }
    double inter = 0.0;
    double sm = 0.0;
    double st = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        inter += m[i] * target[i];
        sm += m[i];
        st += target[i];
    }
    return 1.0 - (2.0 * inter + kDiceSmooth) / (sm + st + kDiceSmooth);
}

/// Mean binary cross-entropy with clamped logarithms.
inline double bce_loss(std::span<const double> m, std::span<const double> target) {
    if (m.size() != target.size()) {
        throw InvalidArgument("bce_loss: mask sizes differ");
    }
    if (m.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double t = target[i];
        double term = 0.0;
        if (t != 0.0) {
            term += t * std::log(std::clamp(m[i], kProbClamp, 1.0));
        }
        if (t != 1.0) {
            term += (1.0 - t) * std::log(std::clamp(1.0 - m[i], kProbClamp, 1.0));
        }
        sum -= term;
    }
    return sum / static_cast<double>(m.size());
}

struct SemanticLoss {
    double total = 0.0;
    double ce = 0.0;
    double lovasz = 0.0;
};

inline SemanticLoss ce_plus_lovasz(const ProbTable& probs, std::span<const ClassId> labels, ClassId ignore,
                                   const LossWeights& w) {
    SemanticLoss out;
    out.ce = cross_entropy(probs, labels, ignore);
    out.lovasz = lovasz_softmax(probs, labels, ignore);
    out.total = out.ce + w.lambda1 * out.lovasz;
    return out;
}

namespace detail {

// Ground-truth label per coordinate (empty when absent, `ignore` when
// invalid) for a sorted list of coordinates.
inline std::vector<ClassId> labels_at(std::span<const Coord> coords, const SparseVoxelGrid& gt, const ClassTaxonomy& tax) {
    std::vector<ClassId> out(coords.size(), tax.empty_class_id());
    std::size_t g = 0;
    std::size_t inv = 0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        while (g < gt.sites.size() && gt.sites[g].coord < coords[i]) {
            ++g;
        }
        while (inv < gt.invalid.size() && gt.invalid[inv] < coords[i]) {
            ++inv;
        }
        if (inv < gt.invalid.size() && gt.invalid[inv] == coords[i]) {
            out[i] = tax.unlabeled_id();
        } else if (g < gt.sites.size() && gt.sites[g].coord == coords[i]) {
            out[i] = gt.sites[g].label;
        }
    }
    return out;
}

} // namespace detail

/// CE + lambda1 * Lovasz on the per-voxel semantics S' = m p over the mask
/// set's support. Invalid ground-truth voxels are ignored.
inline SemanticLoss voxel_query_semantic_loss(const MaskSet& ms, const SparseVoxelGrid& gt, const ClassTaxonomy& tax,
                                              const LossWeights& w = {}) {
    validate(w);
    if (!(ms.dims == gt.dims)) {
        throw InvalidArgument("voxel_query_semantic_loss: dims differ");
    }
    if (ms.classes != tax.size()) {
        throw InvalidArgument("voxel_query_semantic_loss: class count differs from taxonomy");
    }
    if (ms.sites.empty()) {
        throw InvalidArgument("voxel_query_semantic_loss: empty support");
    }
    const ProbTable probs{ms.classes, per_site_semantics(ms, tax.empty_class_id())};
    const auto labels = detail::labels_at(ms.sites, gt, tax);
    return ce_plus_lovasz(probs, labels, tax.unlabeled_id(), w);
}

/// Semantic-head loss at one scale: CE + lambda1 * Lovasz of the listed
/// per-voxel distributions against the ground truth majority-pooled by
/// `factor`.
inline SemanticLoss semantic_loss(const VoxelProbGrid& pred, const SparseVoxelGrid& gt, int factor,
                                  const ClassTaxonomy& tax, const LossWeights& w = {}) {
    validate(w);
    const auto pooled = majority_pool(gt, factor);
    if (!(pred.dims == pooled.dims)) {
        throw InvalidArgument("semantic_loss: prediction dims " + to_string(pred.dims) + " differ from pooled dims " +
                              to_string(pooled.dims));
    }
    if (pred.classes != tax.size()) {
        throw InvalidArgument("semantic_loss: class count differs from taxonomy");
    }
    if (pred.sites.empty()) {
        throw InvalidArgument("semantic_loss: no sites");
    }
    const ProbTable probs{pred.classes, pred.probs};
    const auto labels = detail::labels_at(pred.sites, pooled, tax);
    return ce_plus_lovasz(probs, labels, tax.unlabeled_id(), w);
}

// ---------------------------------------------------------------------------
// Mask matching

/// Ground-truth segment used as a matching target.
struct GtSegment {
    ClassId label = 0;
    InstanceId instance = 0;
};

struct MaskMatchingLoss {
    double total = 0.0;
    double matched = 0.0;
    double unmatched = 0.0;
    /// Ground-truth segments in (class, instance) order.
    std::vector<GtSegment> segments;
    /// Query matched to each ground-truth segment.
    std::vector<std::size_t> query_of_segment;
};

/// Evaluation domain and binary targets for mask matching: the union of the
/// prediction support and every ground-truth segment voxel, minus invalid
/// voxels. Void ground truth belongs to no segment.
struct MatchingTargets {
    std::vector<Coord> domain;
    std::vector<GtSegment> segments;
    /// segments.size() x domain.size() binary masks.
    std::vector<double> masks;
    /// queries x domain.size() predicted scores.
    std::vector<double> scores;
};

inline MatchingTargets matching_targets(const MaskSet& ms, const PanopticGrid& gt, const ClassTaxonomy& tax) {
    if (!(ms.dims == gt.dims)) {
        throw InvalidArgument("mask_matching_loss: dims differ");
    }
    std::map<std::pair<ClassId, InstanceId>, std::size_t> index;
    std::vector<Coord> gt_coords;
    for (const auto& s : gt.sites) {
        if (tax.is_thing(s.label) && s.instance == 0) {
            continue;
        }
        index.emplace(std::pair{s.label, s.instance}, 0);
        gt_coords.push_back(s.coord);
    }
    MatchingTargets out;
    for (auto& [key, idx] : index) {
        idx = out.segments.size();
        out.segments.push_back({key.first, key.second});
    }
    std::vector<Coord> domain;
    {
        const auto all = union_sites(ms.sites, gt_coords);
        std::ranges::set_difference(all, gt.invalid, std::back_inserter(domain));
    }
    const std::size_t d = domain.size();
    out.masks.assign(out.segments.size() * d, 0.0);
    out.scores.assign(ms.queries * d, 0.0);
    std::size_t g = 0;
    std::size_t p = 0;
    for (std::size_t v = 0; v < d; ++v) {
        const Coord& c = domain[v];
        while (g < gt.sites.size() && gt.sites[g].coord < c) {
            ++g;
        }
        if (g < gt.sites.size() && gt.sites[g].coord == c) {
            const auto it = index.find({gt.sites[g].label, gt.sites[g].instance});
            if (it != index.end() && !(tax.is_thing(gt.sites[g].label) && gt.sites[g].instance == 0)) {
                out.masks[it->second * d + v] = 1.0;
            }
        }
        while (p < ms.sites.size() && ms.sites[p] < c) {
            ++p;
        }
        if (p < ms.sites.size() && ms.sites[p] == c) {
            for (std::size_t k = 0; k < ms.queries; ++k) {
                out.scores[k * d + v] = ms.mask_scores[k * ms.sites.size() + p];
            }
        }
    }
    out.domain = std::move(domain);
    return out;
}

/// Rectangular matching cost: rows are queries, columns ground-truth
/// segments. C(k, j) = -p_k(c_j) + lambda_dice * dice + lambda_bce * BCE.
inline std::vector<double> mask_matching_cost(const MaskSet& ms, const MatchingTargets& t, const LossWeights& w) {
    const std::size_t d = t.domain.size();
    const std::size_t kbar = t.segments.size();
    std::vector<double> cost(ms.queries * kbar);
    for (std::size_t k = 0; k < ms.queries; ++k) {
        const std::span<const double> m(t.scores.data() + k * d, d);
        for (std::size_t j = 0; j < kbar; ++j) {
            const std::span<const double> target(t.masks.data() + j * d, d);
            cost[k * kbar + j] = -ms.probs(k)[t.segments[j].label] + w.lambda_dice * dice_loss(m, target) +
                                 w.lambda_bce * bce_loss(m, target);
        }
    }
    return cost;
}

/// Hungarian mask-matching loss. The K x Kbar cost is padded to K x K with
/// a constant column cost above every real entry; matched pairs pay
/// lambda_ce * CE(class) + mask loss, and the K - Kbar leftover queries pay
/// lambda_null * CE against no-object.
inline MaskMatchingLoss mask_matching_loss(const MaskSet& ms, const PanopticGrid& gt, const ClassTaxonomy& tax,
                                           const LossWeights& w = {}) {
    validate(w);
    if (ms.classes != tax.size()) {
        throw InvalidArgument("mask_matching_loss: class count differs from taxonomy");
    }
    const auto targets = matching_targets(ms, gt, tax);
    const std::size_t k = ms.queries;
    const std::size_t kbar = targets.segments.size();
    if (k < kbar) {
        throw InvalidArgument("mask_matching_loss: " + std::to_string(k) + " queries for " + std::to_string(kbar) +
                              " ground-truth segments");
    }
    const auto rect = mask_matching_cost(ms, targets, w);
    double pad = 1.0;
    for (double c : rect) {
        pad = std::max(pad, c + 1.0);
    }
    CostMatrix cost(k, pad);
    for (std::size_t q = 0; q < k; ++q) {
        for (std::size_t j = 0; j < kbar; ++j) {
            cost(q, j) = rect[q * kbar + j];
        }
    }
    const auto match = solve_assignment(cost);

    MaskMatchingLoss out;
    out.segments = targets.segments;
    out.query_of_segment.assign(kbar, 0);
    const std::size_t d = targets.domain.size();
    for (std::size_t q = 0; q < k; ++q) {
        const std::size_t j = match.mapping[q];
        const auto p = ms.probs(q);
        if (j < kbar) {
            out.query_of_segment[j] = q;
            const std::span<const double> m(targets.scores.data() + q * d, d);
            const std::span<const double> target(targets.masks.data() + j * d, d);
            out.matched += w.lambda_ce * -std::log(std::clamp(p[targets.segments[j].label], kProbClamp, 1.0)) +
                           w.lambda_dice * dice_loss(m, target) + w.lambda_bce * bce_loss(m, target);
        } else {
            out.unmatched += w.lambda_null * -std::log(std::clamp(p[ms.null_class()], kProbClamp, 1.0));
        }
    }
    out.total = out.matched + out.unmatched;
    return out;
}

} // namespace psc
