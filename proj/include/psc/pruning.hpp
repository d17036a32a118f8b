#pragma once

// Multi-scale pruning cascade on supplied per-scale predictions.
//
// At each scale a voxel survives when at least one subnet predicts it
// non-empty (semantic mode) or occupied above a threshold (binary mode).
// A finer scale is only generated inside the 2x2x2 children of the coarser
// survivors.

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "psc/core.hpp"
#include "psc/error.hpp"

namespace psc {

/// Sorted, duplicate-free coordinate set.
using CoordSet = std::vector<Coord>;

/// Per-voxel occupancy scores; absent coords score 0.
struct OccupancyGrid {
    Dims dims;
    float voxel_size = 0.2F;
    std::vector<Coord> sites;
    std::vector<double> scores;
};

/// Occupancy 1 at every labeled site.
inline OccupancyGrid to_occupancy(const SparseVoxelGrid& grid) {
    OccupancyGrid out{grid.dims, grid.voxel_size, nonempty_sites(grid), {}};
    out.scores.assign(out.sites.size(), 1.0);
    return out;
}

namespace detail {

template <class Grid>
void require_same_dims(std::span<const Grid> grids, const char* who) {
    if (grids.empty()) {
        throw InvalidArgument(std::string(who) + ": no subnet grids");
    }
    for (const auto& g : grids) {
        if (!(g.dims == grids.front().dims)) {
            throw InvalidArgument(std::string(who) + ": subnet dims differ (" + to_string(g.dims) + " vs " +
                                  to_string(grids.front().dims) + ")");
        }
    }
}

inline CoordSet sorted_unique(CoordSet coords) {
    std::ranges::sort(coords);
    const auto dup = std::ranges::unique(coords);
    coords.erase(dup.begin(), dup.end());
    return coords;
}

} // namespace detail

/// Voxels predicted non-empty by at least one subnet.
inline CoordSet prune_union(std::span<const SparseVoxelGrid> grids) {
    detail::require_same_dims(grids, "prune_union");
    CoordSet out;
    for (const auto& g : grids) {
        for (const auto& s : g.sites) {
            out.push_back(s.coord);
        }
    }
    return detail::sorted_unique(std::move(out));
}

/// Voxels whose occupancy reaches `threshold` in at least one subnet.
inline CoordSet prune_binary(std::span<const OccupancyGrid> grids, double threshold = 0.5) {
    detail::require_same_dims(grids, "prune_binary");
    CoordSet out;
    for (const auto& g : grids) {
        if (g.scores.size() != g.sites.size()) {
            throw InvalidArgument("prune_binary: score count differs from site count");
        }
        for (std::size_t i = 0; i < g.sites.size(); ++i) {
            if (g.scores[i] >= threshold) {
                out.push_back(g.sites[i]);
            }
        }
    }
    return detail::sorted_unique(std::move(out));
}

/// The 2x2x2 children of every coarse voxel, sorted.
inline CoordSet expand_scale(std::span<const Coord> survivors) {
    CoordSet out;
    out.reserve(survivors.size() * 8);
    for (const auto& c : survivors) {
        for (std::int32_t dx = 0; dx < 2; ++dx) {
            for (std::int32_t dy = 0; dy < 2; ++dy) {
                for (std::int32_t dz = 0; dz < 2; ++dz) {
                    out.push_back({2 * c.x + dx, 2 * c.y + dy, 2 * c.z + dz});
                }
            }
        }
    }
    std::ranges::sort(out);
    return out;
}

/// Per-scale subnet predictions, coarsest first. Consecutive levels halve
/// the downsampling factor and double the dims.
template <class Grid>
struct BasicScaleStack {
    struct Level {
        int factor = 1;
        std::vector<Grid> subnets;
    };
    std::vector<Level> levels;
};

using ScaleStack = BasicScaleStack<SparseVoxelGrid>;
using OccupancyStack = BasicScaleStack<OccupancyGrid>;

struct ScaleRetention {
    int factor = 1;
    Dims dims;
    /// Voxels the parent scale allows (whole grid at the coarsest scale).
    std::size_t candidates = 0;
    std::size_t survivors = 0;
    /// survivors / total voxels at this scale.
    double fraction = 0.0;
};

struct CascadeResult {
    std::vector<CoordSet> survivors;
    std::vector<ScaleRetention> stats;
};

namespace detail {

template <class Grid>
void validate_stack(const BasicScaleStack<Grid>& stack) {
    if (stack.levels.empty()) {
        throw InvalidArgument("cascade: empty stack");
    }
    const std::size_t m = stack.levels.front().subnets.size();
    for (std::size_t l = 0; l < stack.levels.size(); ++l) {
        const auto& level = stack.levels[l];
        if (level.subnets.size() != m || m == 0) {
            throw InvalidArgument("cascade: subnet count differs across scales");
        }
        require_same_dims(std::span<const Grid>(level.subnets), "cascade");
        if (l > 0) {
            const auto& prev = stack.levels[l - 1];
            const Dims& pd = prev.subnets.front().dims;
            const Dims& d = level.subnets.front().dims;
            if (prev.factor != 2 * level.factor || !(d == Dims{2 * pd.x, 2 * pd.y, 2 * pd.z})) {
                throw InvalidArgument("cascade: scale " + std::to_string(level.factor) +
                                      " does not halve the previous scale (dims " + to_string(d) + " after " +
                                      to_string(pd) + ")");
            }
        }
    }
}

template <class Grid, class Prune>
CascadeResult run_cascade(const BasicScaleStack<Grid>& stack, Prune&& prune) {
    validate_stack(stack);
    CascadeResult out;
    for (std::size_t l = 0; l < stack.levels.size(); ++l) {
        const auto& level = stack.levels[l];
        const Dims dims = level.subnets.front().dims;
        const CoordSet predicted = prune(std::span<const Grid>(level.subnets));
        ScaleRetention stat{level.factor, dims, dims.volume(), 0, 0.0};
        CoordSet kept;
        if (l == 0) {
            kept = predicted;
        } else {
            const CoordSet allowed = expand_scale(out.survivors.back());
            stat.candidates = allowed.size();
            std::ranges::set_intersection(allowed, predicted, std::back_inserter(kept));
        }
        stat.survivors = kept.size();
        stat.fraction = static_cast<double>(kept.size()) / static_cast<double>(dims.volume());
        out.survivors.push_back(std::move(kept));
        out.stats.push_back(stat);
    }
    return out;
}

} // namespace detail

/// Semantic pruning cascade.
inline CascadeResult cascade(const ScaleStack& stack) {
    return detail::run_cascade(stack, [](std::span<const SparseVoxelGrid> g) { return prune_union(g); });
}

/// Binary-occupancy pruning cascade.
inline CascadeResult cascade(const OccupancyStack& stack, double threshold = 0.5) {
    return detail::run_cascade(stack, [threshold](std::span<const OccupancyGrid> g) { return prune_binary(g, threshold); });
}

} // namespace psc
