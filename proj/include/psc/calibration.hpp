#pragma once

// Calibration metrics (ECE, NLL) at voxel and instance level.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psc/core.hpp"
#include "psc/error.hpp"
#include "psc/masks.hpp"
#include "psc/panoptic_metrics.hpp"

namespace psc {

inline constexpr double kProbClamp = 1e-12;

struct CalibrationSample {
    /// Maximum predicted probability.
    double confidence = 0.0;
    std::size_t predicted = 0;
    std::size_t truth = 0;
    /// Probability assigned to the true class.
    double prob_true = 0.0;

    [[nodiscard]] bool correct() const noexcept { return predicted == truth; }
};

/// Expected calibration error over equal-width confidence bins on (0, 1].
inline double ece(std::span<const CalibrationSample> samples, std::size_t bins = 15) {
    if (samples.empty()) {
        throw InvalidArgument("ece: no samples");
    }
    if (bins == 0) {
        throw InvalidArgument("ece: bins must be >= 1");
    }
    std::vector<std::size_t> count(bins, 0);
    std::vector<double> conf_sum(bins, 0.0);
    std::vector<std::size_t> hits(bins, 0);
    const auto nb = static_cast<double>(bins);
    for (const auto& s : samples) {
        if (!(s.confidence >= 0.0 && s.confidence <= 1.0)) {
            throw InvalidArgument("ece: confidence outside [0,1]");
        }
        const auto raw = static_cast<std::ptrdiff_t>(std::ceil(s.confidence * nb)) - 1;
        const auto b = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(raw, 0, static_cast<std::ptrdiff_t>(bins) - 1));
        ++count[b];
        conf_sum[b] += s.confidence;
        hits[b] += s.correct() ? 1 : 0;
    }
    const auto n = static_cast<double>(samples.size());
    double total = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        if (count[b] == 0) {
            continue;
        }
        const auto nbin = static_cast<double>(count[b]);
        total += (nbin / n) * std::abs(static_cast<double>(hits[b]) / nbin - conf_sum[b] / nbin);
    }
    return total;
}

/// Mean negative log-likelihood of the true class, probabilities clamped to
/// [1e-12, 1].
inline double nll(std::span<const CalibrationSample> samples) {
    if (samples.empty()) {
        throw InvalidArgument("nll: no samples");
    }
    double sum = 0.0;
    for (const auto& s : samples) {
        sum += -std::log(std::clamp(s.prob_true, kProbClamp, 1.0));
    }
    return sum / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Voxel level

/// Per-voxel class distributions over the real classes (empty included).
/// Voxels not listed in `sites` take `background` when it is set.
struct VoxelProbGrid {
    Dims dims;
    float voxel_size = 0.2F;
    std::size_t classes = 0;
    std::vector<Coord> sites;
    /// sites.size() x classes, row-major.
    std::vector<double> probs;
    std::optional<std::vector<double>> background;
};

/// Voxel distributions implied by a mask set: S' = m p on the support
/// (renormalized), a one-hot empty distribution elsewhere.
///
/// A semantic-completion output can be passed through the same route by
/// encoding it as a mask set with one one-hot query per class whose mask
/// scores are that class's probabilities.
inline VoxelProbGrid voxel_probs_from_masks(const MaskSet& ms, const ClassTaxonomy& tax) {
    if (ms.classes != tax.size()) {
        throw InvalidArgument("voxel_probs_from_masks: class count differs from taxonomy");
    }
    VoxelProbGrid out{ms.dims, ms.voxel_size, ms.classes, ms.sites, per_site_semantics(ms, tax.empty_class_id()), {}};
    std::vector<double> bg(ms.classes, 0.0);
    bg[tax.empty_class_id()] = 1.0;
    out.background = std::move(bg);
    return out;
}

struct VoxelCalibrationSamples {
    std::vector<CalibrationSample> empty;
    std::vector<CalibrationSample> nonempty;
};

/// One sample per non-invalid voxel, split by ground-truth emptiness.
inline VoxelCalibrationSamples voxel_samples(const VoxelProbGrid& pred, const SparseVoxelGrid& gt,
                                             const ClassTaxonomy& tax) {
    if (!(pred.dims == gt.dims)) {
        throw InvalidArgument("voxel_uncertainty: dims differ (" + to_string(pred.dims) + " vs " + to_string(gt.dims) + ")");
    }
    if (pred.classes != tax.size() || pred.probs.size() != pred.sites.size() * pred.classes ||
        (pred.background && pred.background->size() != pred.classes)) {
        throw InvalidArgument("voxel_uncertainty: probability table shape does not match the taxonomy");
    }
    const auto sample_of = [&](std::span<const double> p, ClassId truth) {
        const std::size_t predicted = argmax(p);
        return CalibrationSample{p[predicted], predicted, truth, p[truth]};
    };
    VoxelCalibrationSamples out;
    std::size_t ip = 0;
    std::size_t ig = 0;
    std::size_t iv = 0;
    const std::size_t volume = gt.dims.volume();
    for (std::size_t idx = 0; idx < volume; ++idx) {
        const Coord c = gt.dims.coord_of(idx);
        const bool covered = ip < pred.sites.size() && pred.sites[ip] == c;
        std::span<const double> p;
        if (covered) {
            p = std::span<const double>(pred.probs).subspan(ip * pred.classes, pred.classes);
            ++ip;
        }
        if (iv < gt.invalid.size() && gt.invalid[iv] == c) {
            ++iv;
            continue;
        }
        ClassId truth = tax.empty_class_id();
        if (ig < gt.sites.size() && gt.sites[ig].coord == c) {
            truth = gt.sites[ig++].label;
        }
        if (!covered) {
            if (!pred.background) {
                throw InvalidArgument("voxel_uncertainty: prediction does not cover voxel " + to_string(c));
            }
            p = *pred.background;
        }
        if (truth >= pred.classes) {
            throw InvalidArgument("voxel_uncertainty: ground-truth class " + std::to_string(truth) + " out of range");
        }
        (truth == tax.empty_class_id() ? out.empty : out.nonempty).push_back(sample_of(p, truth));
    }
    if (ip != pred.sites.size()) {
        throw InvalidArgument("voxel_uncertainty: prediction sites are unsorted or outside the grid");
    }
    return out;
}

struct VoxelUncertainty {
    double ece = 0.0;
    double nll = 0.0;
    double ece_empty = 0.0;
    double ece_nonempty = 0.0;
    double nll_empty = 0.0;
    double nll_nonempty = 0.0;
};

/// ECE and NLL averaged over the empty and non-empty voxel subsets, so the
/// dominant empty voxels do not swamp the score.
inline VoxelUncertainty voxel_uncertainty(const VoxelProbGrid& pred, const SparseVoxelGrid& gt, const ClassTaxonomy& tax,
                                          std::size_t bins = 15) {
    const auto s = voxel_samples(pred, gt, tax);
    if (s.empty.empty()) {
        throw InvalidArgument("voxel_uncertainty: no empty ground-truth voxels to evaluate");
    }
    if (s.nonempty.empty()) {
        throw InvalidArgument("voxel_uncertainty: no non-empty ground-truth voxels to evaluate");
    }
    VoxelUncertainty out;
    out.ece_empty = ece(s.empty, bins);
    out.ece_nonempty = ece(s.nonempty, bins);
    out.nll_empty = nll(s.empty);
    out.nll_nonempty = nll(s.nonempty);
    out.ece = (out.ece_empty + out.ece_nonempty) / 2.0;
    out.nll = (out.nll_empty + out.nll_nonempty) / 2.0;
    return out;
}

// ---------------------------------------------------------------------------
// Instance level

/// One sample per surviving assembled mask. A mask matched to a same-class
/// ground-truth segment at IoU > 0.5 is correct; any other mask is labeled
/// with a dustbin class it can never predict (probability 0).
inline std::vector<CalibrationSample> instance_samples(const MaskSet& ms, const PanopticGrid& gt, const ClassTaxonomy& tax,
                                                       const AssemblyParams& params = {}) {
    const auto assembly = assemble(ms, tax, params);
    // Each surviving query becomes its own segment for matching.
    PanopticGrid masks{ms.dims, ms.voxel_size, {}, {}};
    for (std::size_t s = 0; s < assembly.segments.size(); ++s) {
        const auto& seg = assembly.segments[s];
        for (std::size_t v : seg.site_indices) {
            masks.sites.push_back({ms.sites[v], seg.label, static_cast<InstanceId>(s + 1)});
        }
    }
    std::ranges::sort(masks.sites, [](const PanopticSite& a, const PanopticSite& b) { return a.coord < b.coord; });
    const auto ov = detail::overlap_segments(masks, gt, tax);
    std::vector<char> matched(assembly.segments.size(), 0);
    for (const auto& [pair, inter] : ov.intersection) {
        if (ov.iou(pair.first, pair.second, inter) > 0.5) {
            matched[pair.first.instance - 1] = 1;
        }
    }
    const std::size_t dustbin = tax.size() + 1;
    std::vector<CalibrationSample> out;
    out.reserve(assembly.segments.size());
    for (std::size_t s = 0; s < assembly.segments.size(); ++s) {
        const auto& seg = assembly.segments[s];
        const bool hit = matched[s] != 0;
        out.push_back({seg.confidence, seg.label, hit ? std::size_t{seg.label} : dustbin, hit ? seg.confidence : 0.0});
    }
    return out;
}

struct InstanceUncertainty {
    double ece = 0.0;
    double nll = 0.0;
    std::size_t segments = 0;
};

inline InstanceUncertainty instance_uncertainty(const MaskSet& ms, const PanopticGrid& gt, const ClassTaxonomy& tax,
                                                const AssemblyParams& params = {}, std::size_t bins = 15) {
    const auto samples = instance_samples(ms, gt, tax, params);
    if (samples.empty()) {
        throw InvalidArgument("instance_uncertainty: no predicted segment survived assembly");
    }
    return {ece(samples, bins), nll(samples), samples.size()};
}

} // namespace psc
