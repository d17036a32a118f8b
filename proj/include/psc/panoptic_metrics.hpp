#pragma once

// Panoptic quality (PQ, SQ, RQ, PQ-dagger) and semantic completion metrics.
// All reported values are percentages.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "psc/core.hpp"
#include "psc/error.hpp"

namespace psc {

struct AggregateOptions {
    /// Average only over classes that occur in prediction or ground truth.
    /// When false every non-empty class counts and absent ones score 0.
    bool present_only = true;
};

struct ClassTally {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    double iou_sum = 0.0;

    [[nodiscard]] bool present() const noexcept { return tp + fp + fn > 0; }

    ClassTally& operator+=(const ClassTally& o) noexcept {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        iou_sum += o.iou_sum;
        return *this;
    }
};

struct QualityTriple {
    double pq = 0.0;
    double sq = 0.0;
    double rq = 0.0;
};

/// PQ, SQ and RQ of one class in percent.
inline QualityTriple quality_of(const ClassTally& t) {
    QualityTriple q;
    const double denom = static_cast<double>(t.tp) + 0.5 * static_cast<double>(t.fp) + 0.5 * static_cast<double>(t.fn);
    if (denom > 0.0) {
        q.pq = 100.0 * t.iou_sum / denom;
        q.rq = 100.0 * static_cast<double>(t.tp) / denom;
    }
    if (t.tp > 0) {
        q.sq = 100.0 * t.iou_sum / static_cast<double>(t.tp);
    }
    return q;
}

struct QualityAggregate {
    double pq = 0.0;
    double sq = 0.0;
    double rq = 0.0;
    std::size_t classes = 0;
};

struct PQStats {
    /// Indexed by class id; the empty class stays zero.
    std::vector<ClassTally> tallies;
    std::vector<QualityTriple> per_class;
    QualityAggregate all;
    QualityAggregate thing;
    QualityAggregate stuff;
};

namespace detail {

struct SegmentKey {
    ClassId label = 0;
    InstanceId instance = 0;
    friend auto operator<=>(const SegmentKey&, const SegmentKey&) = default;
};

// Per-segment areas and same-class overlaps between prediction and ground
// truth. Prediction sites on invalid ground truth are dropped. Ground-truth
// thing sites with instance 0 are void; prediction area falling on void is
// tracked separately.
struct SegmentOverlap {
    std::map<SegmentKey, std::size_t> pred_area;
    std::map<SegmentKey, std::size_t> pred_void;
    std::map<SegmentKey, std::size_t> gt_area;
    std::map<std::pair<SegmentKey, SegmentKey>, std::size_t> intersection;

    [[nodiscard]] double iou(const SegmentKey& p, const SegmentKey& g, std::size_t inter) const {
        const auto find_or_zero = [](const std::map<SegmentKey, std::size_t>& m, const SegmentKey& k) {
            const auto it = m.find(k);
            return it == m.end() ? std::size_t{0} : it->second;
        };
        const double uni = static_cast<double>(find_or_zero(pred_area, p)) + static_cast<double>(find_or_zero(gt_area, g)) -
                           static_cast<double>(inter) - static_cast<double>(find_or_zero(pred_void, p));
        return uni > 0.0 ? static_cast<double>(inter) / uni : 0.0;
    }
};

inline SegmentOverlap overlap_segments(const PanopticGrid& pred, const PanopticGrid& gt, const ClassTaxonomy& tax) {
    if (!(pred.dims == gt.dims)) {
        throw InvalidArgument("panoptic metrics: dims differ (" + to_string(pred.dims) + " vs " + to_string(gt.dims) + ")");
    }
    SegmentOverlap out;
    const auto is_void = [&tax](const PanopticSite& s) { return tax.is_thing(s.label) && s.instance == 0; };
    const auto check = [&tax](const PanopticSite& s) {
        if (!tax.is_class(s.label) || s.label == tax.empty_class_id()) {
            throw InvalidArgument("panoptic metrics: bad class id " + std::to_string(s.label) + " at " + to_string(s.coord));
        }
    };
    for (const auto& s : gt.sites) {
        check(s);
        if (!is_void(s)) {
            ++out.gt_area[{s.label, s.instance}];
        }
    }
    std::size_t g = 0;
    std::size_t inv = 0;
    for (const auto& p : pred.sites) {
        check(p);
        while (inv < gt.invalid.size() && gt.invalid[inv] < p.coord) {
            ++inv;
        }
        if (inv < gt.invalid.size() && gt.invalid[inv] == p.coord) {
            continue;
        }
        if (is_void(p)) {
            continue;
        }
        const SegmentKey pk{p.label, p.instance};
        ++out.pred_area[pk];
        while (g < gt.sites.size() && gt.sites[g].coord < p.coord) {
            ++g;
        }
        if (g < gt.sites.size() && gt.sites[g].coord == p.coord) {
            const auto& gs = gt.sites[g];
            if (is_void(gs)) {
                ++out.pred_void[pk];
            } else if (gs.label == p.label) {
                ++out.intersection[{pk, SegmentKey{gs.label, gs.instance}}];
            }
        }
    }
    return out;
}

inline QualityAggregate aggregate(const std::vector<QualityTriple>& per_class, const std::vector<ClassTally>& tallies,
                                  const ClassTaxonomy& tax, std::optional<ClassKind> kind, const AggregateOptions& opts) {
    QualityAggregate agg;
    for (const auto& c : tax.classes()) {
        if (c.id == tax.empty_class_id() || (kind && c.kind != *kind)) {
            continue;
        }
        if (opts.present_only && !tallies[c.id].present()) {
            continue;
        }
        agg.pq += per_class[c.id].pq;
        agg.sq += per_class[c.id].sq;
        agg.rq += per_class[c.id].rq;
        ++agg.classes;
    }
    if (agg.classes > 0) {
        const auto n = static_cast<double>(agg.classes);
        agg.pq /= n;
        agg.sq /= n;
        agg.rq /= n;
    }
    return agg;
}

} // namespace detail

/// Recomputes per-class values and aggregates from the tallies.
inline void finalize(PQStats& stats, const ClassTaxonomy& tax, const AggregateOptions& opts = {}) {
    stats.per_class.assign(stats.tallies.size(), {});
    for (std::size_t c = 0; c < stats.tallies.size(); ++c) {
        stats.per_class[c] = quality_of(stats.tallies[c]);
    }
    stats.all = detail::aggregate(stats.per_class, stats.tallies, tax, std::nullopt, opts);
    stats.thing = detail::aggregate(stats.per_class, stats.tallies, tax, ClassKind::thing, opts);
    stats.stuff = detail::aggregate(stats.per_class, stats.tallies, tax, ClassKind::stuff, opts);
}

/// Panoptic quality with segments matched within a class at IoU > 0.5.
///
/// Ground-truth invalid voxels are removed from the prediction. Void ground
/// truth (thing sites with instance 0) is subtracted from the union, and an
/// unmatched prediction lying mostly on void is not a false positive.
inline PQStats panoptic_quality(const PanopticGrid& pred, const PanopticGrid& gt, const ClassTaxonomy& tax,
                                const AggregateOptions& opts = {}) {
    const auto ov = detail::overlap_segments(pred, gt, tax);
    PQStats stats;
    stats.tallies.assign(tax.size(), {});
    std::map<detail::SegmentKey, bool> pred_matched;
    std::map<detail::SegmentKey, bool> gt_matched;
    for (const auto& [pair, inter] : ov.intersection) {
        const double iou = ov.iou(pair.first, pair.second, inter);
        if (iou > 0.5) {
            auto& t = stats.tallies[pair.first.label];
            ++t.tp;
            t.iou_sum += iou;
            pred_matched[pair.first] = true;
            gt_matched[pair.second] = true;
        }
    }
    for (const auto& [key, area] : ov.gt_area) {
        if (!gt_matched.contains(key)) {
            ++stats.tallies[key.label].fn;
        }
    }
    for (const auto& [key, area] : ov.pred_area) {
        if (pred_matched.contains(key)) {
            continue;
        }
        const auto v = ov.pred_void.find(key);
        const std::size_t on_void = v == ov.pred_void.end() ? 0 : v->second;
        if (static_cast<double>(on_void) / static_cast<double>(area) > 0.5) {
            continue;
        }
        ++stats.tallies[key.label].fp;
    }
    finalize(stats, tax, opts);
    return stats;
}

struct PQDaggerResult {
    /// Indexed by class id; nullopt for classes outside the average.
    std::vector<std::optional<double>> per_class;
    QualityAggregate all;
    QualityAggregate thing;
    QualityAggregate stuff;
};

/// PQ with the IoU > 0.5 rule removed for stuff: a stuff class scores the
/// IoU between its predicted and ground-truth voxel unions. Thing classes
/// keep their PQ.
inline PQDaggerResult pq_dagger(const PanopticGrid& pred, const PanopticGrid& gt, const ClassTaxonomy& tax,
                                const AggregateOptions& opts = {}) {
    const auto stats = panoptic_quality(pred, gt, tax, opts);
    const auto ov = detail::overlap_segments(pred, gt, tax);
    std::vector<QualityTriple> values(tax.size());
    for (const auto& c : tax.classes()) {
        if (c.kind == ClassKind::thing) {
            values[c.id] = stats.per_class[c.id];
            continue;
        }
        // Stuff segments are whole-class unions (instance 0).
        const detail::SegmentKey key{c.id, 0};
        const auto it = ov.intersection.find({key, key});
        const std::size_t inter = it == ov.intersection.end() ? 0 : it->second;
        values[c.id].pq = 100.0 * ov.iou(key, key, inter);
    }
    PQDaggerResult out;
    out.per_class.assign(tax.size(), std::nullopt);
    for (const auto& c : tax.classes()) {
        if (c.id != tax.empty_class_id() && (!opts.present_only || stats.tallies[c.id].present())) {
            out.per_class[c.id] = values[c.id].pq;
        }
    }
    out.all = detail::aggregate(values, stats.tallies, tax, std::nullopt, opts);
    out.thing = detail::aggregate(values, stats.tallies, tax, ClassKind::thing, opts);
    out.stuff = detail::aggregate(values, stats.tallies, tax, ClassKind::stuff, opts);
    return out;
}

// ---------------------------------------------------------------------------
// Semantic completion

struct SscMetrics {
    /// Per-class IoU in percent, indexed by class id; nullopt when the class
    /// is outside the average (and always for the empty class).
    std::vector<std::optional<double>> class_iou;
    double miou = 0.0;
    /// Binary occupancy IoU.
    double completion_iou = 0.0;
};

/// Per-class IoU, mIoU over non-empty classes, and completion IoU. Voxels
/// invalid in the ground truth are skipped.
inline SscMetrics ssc_metrics(const SparseVoxelGrid& pred, const SparseVoxelGrid& gt, const ClassTaxonomy& tax,
                              const AggregateOptions& opts = {}) {
    if (!(pred.dims == gt.dims)) {
        throw InvalidArgument("ssc_metrics: dims differ (" + to_string(pred.dims) + " vs " + to_string(gt.dims) + ")");
    }
    const ClassId empty = tax.empty_class_id();
    std::vector<std::size_t> tp(tax.size(), 0);
    std::vector<std::size_t> fp(tax.size(), 0);
    std::vector<std::size_t> fn(tax.size(), 0);
    std::size_t occ_tp = 0;
    std::size_t occ_fp = 0;
    std::size_t occ_fn = 0;
    const auto tally = [&](ClassId p, ClassId g) {
        if (!tax.is_class(p) || !tax.is_class(g)) {
            throw InvalidArgument("ssc_metrics: unknown class id");
        }
        if (p == g) {
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[g];
        }
        if (p != empty && g != empty) {
            ++occ_tp;
        } else if (p != empty) {
            ++occ_fp;
        } else if (g != empty) {
            ++occ_fn;
        }
    };

    // Three-way merge over prediction sites, ground-truth sites and invalid
    // coords. Voxels empty on both sides affect no reported quantity.
    std::size_t i = 0;
    std::size_t j = 0;
    std::size_t inv = 0;
    while (i < pred.sites.size() || j < gt.sites.size()) {
        Coord c;
        if (j == gt.sites.size() || (i < pred.sites.size() && pred.sites[i].coord < gt.sites[j].coord)) {
            c = pred.sites[i].coord;
        } else {
            c = gt.sites[j].coord;
        }
        const ClassId p = (i < pred.sites.size() && pred.sites[i].coord == c) ? pred.sites[i++].label : empty;
        const ClassId g = (j < gt.sites.size() && gt.sites[j].coord == c) ? gt.sites[j++].label : empty;
        while (inv < gt.invalid.size() && gt.invalid[inv] < c) {
            ++inv;
        }
        if (inv < gt.invalid.size() && gt.invalid[inv] == c) {
            continue;
        }
        tally(p, g);
    }

    SscMetrics out;
    out.class_iou.assign(tax.size(), std::nullopt);
    std::size_t counted = 0;
    for (const auto& c : tax.classes()) {
        if (c.id == empty) {
            continue;
        }
        const std::size_t denom = tp[c.id] + fp[c.id] + fn[c.id];
        if (opts.present_only && denom == 0) {
            continue;
        }
        const double iou = denom > 0 ? 100.0 * static_cast<double>(tp[c.id]) / static_cast<double>(denom) : 0.0;
        out.class_iou[c.id] = iou;
        out.miou += iou;
        ++counted;
    }
    if (counted > 0) {
        out.miou /= static_cast<double>(counted);
    }
    const std::size_t occ = occ_tp + occ_fp + occ_fn;
    out.completion_iou = occ > 0 ? 100.0 * static_cast<double>(occ_tp) / static_cast<double>(occ) : 0.0;
    return out;
}

} // namespace psc
