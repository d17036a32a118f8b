#pragma once

// Pseudo panoptic ground truth: DBSCAN over thing-class voxels, one segment
// per stuff class.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "psc/core.hpp"
#include "psc/detail/parallel.hpp"
#include "psc/error.hpp"

namespace psc {

enum class EpsilonUnits { meters, voxels };

struct DbscanParams {
    double epsilon = 1.0;
    std::size_t min_pts = 8;
    EpsilonUnits units = EpsilonUnits::meters;
};

inline void validate(const DbscanParams& p) {
    if (!(p.epsilon > 0.0)) {
        throw InvalidArgument("DbscanParams: epsilon must be positive");
    }
    if (p.min_pts < 1) {
        throw InvalidArgument("DbscanParams: min_pts must be >= 1");
    }
}

/// Squared neighborhood radius in voxel units. Distances are inclusive, with
/// a 1e-6 relative slack so that a radius meant to be a whole number of
/// voxels is not lost to the float voxel size.
inline double neighbor_radius_sq(float voxel_size, const DbscanParams& p) {
    const double r = p.units == EpsilonUnits::meters ? p.epsilon / static_cast<double>(voxel_size) : p.epsilon;
    return r * r * (1.0 + 1e-6);
}

inline std::int64_t squared_distance(const Coord& a, const Coord& b) noexcept {
    const std::int64_t dx = a.x - b.x;
    const std::int64_t dy = a.y - b.y;
    const std::int64_t dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}

namespace detail {

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
    std::size_t find(std::size_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) {
            parent[std::max(a, b)] = std::min(a, b);
        }
    }
};

// Hash grid with cubic cells of side ceil(radius); neighbors lie in the
// 27 surrounding cells.
class CellIndex {
public:
    CellIndex(std::span<const Coord> points, double radius_sq)
        : points_(points), cell_(std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(std::sqrt(radius_sq))))),
          radius_sq_(radius_sq) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            cells_[key(cell_of(points[i]))].push_back(i);
        }
    }

    template <class Fn>
    void for_each_neighbor(std::size_t i, Fn&& fn) const {
        const auto base = cell_of(points_[i]);
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    const auto it = cells_.find(key({base[0] + dx, base[1] + dy, base[2] + dz}));
                    if (it == cells_.end()) {
                        continue;
                    }
                    for (std::size_t j : it->second) {
                        if (static_cast<double>(squared_distance(points_[i], points_[j])) <= radius_sq_) {
                            fn(j);
                        }
                    }
                }
            }
        }
    }

private:
    using Cell = std::array<std::int64_t, 3>;

    [[nodiscard]] Cell cell_of(const Coord& c) const {
        const auto floor_div = [this](std::int64_t v) { return v >= 0 ? v / cell_ : -((-v + cell_ - 1) / cell_); };
        return {floor_div(c.x), floor_div(c.y), floor_div(c.z)};
    }
    static std::uint64_t key(const Cell& c) {
        // 21 bits per axis, offset so negative cells stay distinct.
        constexpr std::int64_t off = 1 << 20;
        return (static_cast<std::uint64_t>(c[0] + off) << 42U) | (static_cast<std::uint64_t>(c[1] + off) << 21U) |
               static_cast<std::uint64_t>(c[2] + off);
    }

    std::span<const Coord> points_;
    std::int64_t cell_;
    double radius_sq_;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

} // namespace detail

/// DBSCAN over voxel centers. Returns a cluster id per input point, 0 for
/// noise.
///
/// Core points have at least min_pts neighbors within epsilon, themselves
/// included. Core points within epsilon of each other share a cluster. A
/// border point joins the adjacent cluster whose smallest core coordinate is
/// lexicographically smallest. Clusters are numbered 1..n by their smallest
/// member coordinate, so the labeling does not depend on input order.
inline std::vector<std::uint32_t> dbscan(std::span<const Coord> points, float voxel_size, const DbscanParams& params = {}) {
    validate(params);
    const std::size_t n = points.size();
    const double r2 = neighbor_radius_sq(voxel_size, params);
    const detail::CellIndex index(points, r2);

    std::vector<char> core(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t count = 0;
        index.for_each_neighbor(i, [&](std::size_t) { ++count; });
        core[i] = count >= params.min_pts ? 1 : 0;
    }

    detail::UnionFind uf(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i] == 0) {
            continue;
        }
        index.for_each_neighbor(i, [&](std::size_t j) {
            if (core[j] != 0) {
                uf.unite(i, j);
            }
        });
    }

    // Smallest core coordinate per component root.
    std::map<std::size_t, Coord> component_key;
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i] == 0) {
            continue;
        }
        const auto root = uf.find(i);
        auto [it, inserted] = component_key.emplace(root, points[i]);
        if (!inserted && points[i] < it->second) {
            it->second = points[i];
        }
    }

    constexpr auto none = static_cast<std::size_t>(-1);
    std::vector<std::size_t> component(n, none);
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i] != 0) {
            component[i] = uf.find(i);
            continue;
        }
        index.for_each_neighbor(i, [&](std::size_t j) {
            if (core[j] == 0) {
                return;
            }
            const auto root = uf.find(j);
            if (component[i] == none || component_key.at(root) < component_key.at(component[i])) {
                component[i] = root;
            }
        });
    }

    std::map<std::size_t, Coord> smallest_member;
    for (std::size_t i = 0; i < n; ++i) {
        if (component[i] == none) {
            continue;
        }
        auto [it, inserted] = smallest_member.emplace(component[i], points[i]);
        if (!inserted && points[i] < it->second) {
            it->second = points[i];
        }
    }
    std::vector<std::pair<Coord, std::size_t>> ranked;
    ranked.reserve(smallest_member.size());
    for (const auto& [root, c] : smallest_member) {
        ranked.emplace_back(c, root);
    }
    std::ranges::sort(ranked);
    std::unordered_map<std::size_t, std::uint32_t> id_of;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        id_of[ranked[r].second] = static_cast<std::uint32_t>(r + 1);
    }
    std::vector<std::uint32_t> labels(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (component[i] != none) {
            labels[i] = id_of.at(component[i]);
        }
    }
    return labels;
}

/// Panoptic labels from a semantic grid. Each thing class is clustered with
/// DBSCAN; clusters become instances numbered consecutively across thing
/// classes in class-id order, so an instance id never spans two classes.
/// Noise keeps its class with instance 0 (void for matching). Every stuff
/// class forms one instance-0 segment.
inline PanopticGrid generate_panoptic_labels(const SparseVoxelGrid& gt, const ClassTaxonomy& tax,
                                             const DbscanParams& params = {}, unsigned threads = 1) {
    validate(params);
    std::vector<std::vector<std::size_t>> members(tax.size());
    for (std::size_t i = 0; i < gt.sites.size(); ++i) {
        const ClassId label = gt.sites[i].label;
        if (!tax.is_class(label)) {
            throw InvalidArgument("generate_panoptic_labels: unknown class id " + std::to_string(label));
        }
        members[label].push_back(i);
    }
    std::vector<ClassId> thing_classes;
    for (const auto& c : tax.classes()) {
        if (c.kind == ClassKind::thing && !members[c.id].empty()) {
            thing_classes.push_back(c.id);
        }
    }
    std::vector<std::vector<std::uint32_t>> clusters(thing_classes.size());
    detail::parallel_for(thing_classes.size(), threads, [&](std::size_t t) {
        const auto& idx = members[thing_classes[t]];
        std::vector<Coord> pts;
        pts.reserve(idx.size());
        for (std::size_t i : idx) {
            pts.push_back(gt.sites[i].coord);
        }
        clusters[t] = dbscan(pts, gt.voxel_size, params);
    });

    PanopticGrid out{gt.dims, gt.voxel_size, {}, gt.invalid};
    out.sites.reserve(gt.sites.size());
    for (const auto& s : gt.sites) {
        out.sites.push_back({s.coord, s.label, 0});
    }
    InstanceId offset = 0;
    for (std::size_t t = 0; t < thing_classes.size(); ++t) {
        const auto& idx = members[thing_classes[t]];
        std::uint32_t max_id = 0;
        for (std::size_t n = 0; n < idx.size(); ++n) {
            const auto id = clusters[t][n];
            if (id != 0) {
                out.sites[idx[n]].instance = offset + id;
                max_id = std::max(max_id, id);
            }
        }
        offset += max_id;
    }
    return out;
}

} // namespace psc
