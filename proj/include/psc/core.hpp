#pragma once

// Sparse voxel grids, class taxonomy and scale-change utilities.
//
// Every grid keeps its sites sorted lexicographically by (x, y, z). This is
// the same order as the dense linear index x*(Y*Z) + y*Z + z, and every
// per-site array in the toolkit (mask scores, probabilities) is indexed by it.

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psc/error.hpp"

namespace psc {

using ClassId = std::uint16_t;
using InstanceId = std::uint32_t;

inline constexpr ClassId kDefaultUnlabeledId = 255;

struct Coord {
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::int32_t z = 0;

    friend constexpr auto operator<=>(const Coord&, const Coord&) = default;
};

struct Dims {
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::int32_t z = 0;

    friend constexpr bool operator==(const Dims&, const Dims&) = default;

    [[nodiscard]] constexpr std::size_t volume() const noexcept {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
    }

    [[nodiscard]] constexpr bool contains(const Coord& c) const noexcept {
        return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < x && c.y < y && c.z < z;
    }

    [[nodiscard]] constexpr std::size_t linear_index(const Coord& c) const noexcept {
        return (static_cast<std::size_t>(c.x) * static_cast<std::size_t>(y) + static_cast<std::size_t>(c.y)) *
                   static_cast<std::size_t>(z) +
               static_cast<std::size_t>(c.z);
    }

    [[nodiscard]] constexpr Coord coord_of(std::size_t index) const noexcept {
        const auto yz = static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
        return {static_cast<std::int32_t>(index / yz), static_cast<std::int32_t>((index % yz) / static_cast<std::size_t>(z)),
                static_cast<std::int32_t>(index % static_cast<std::size_t>(z))};
    }
};

inline std::string to_string(const Coord& c) {
    return "(" + std::to_string(c.x) + "," + std::to_string(c.y) + "," + std::to_string(c.z) + ")";
}

inline std::string to_string(const Dims& d) {
    return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

// ---------------------------------------------------------------------------
// Taxonomy

enum class ClassKind { thing, stuff };

struct ClassInfo {
    ClassId id = 0;
    std::string name;
    ClassKind kind = ClassKind::stuff;
};

/// Ordered class list with the thing/stuff split.
///
/// Ids are dense from 0. The empty class is one of the listed stuff classes;
/// the unlabeled id lies outside the list and marks voxels that losses and
/// metrics skip.
class ClassTaxonomy {
public:
    ClassTaxonomy(std::vector<ClassInfo> classes, ClassId empty_class_id, ClassId unlabeled_id = kDefaultUnlabeledId)
        : classes_(std::move(classes)), empty_(empty_class_id), unlabeled_(unlabeled_id) {
        for (std::size_t i = 0; i < classes_.size(); ++i) {
            if (classes_[i].id != i) {
                throw InvalidArgument("taxonomy: class ids must be dense from 0 (got id " +
                                      std::to_string(classes_[i].id) + " at position " + std::to_string(i) + ")");
            }
        }
        if (empty_ >= classes_.size() || classes_[empty_].kind != ClassKind::stuff) {
            throw InvalidArgument("taxonomy: empty class must be a listed stuff class");
        }
        if (unlabeled_ < classes_.size()) {
            throw InvalidArgument("taxonomy: unlabeled id collides with a class id");
        }
        const auto things = std::count_if(classes_.begin(), classes_.end(),
                                          [](const ClassInfo& c) { return c.kind == ClassKind::thing; });
        if (things == 0 || things == static_cast<std::ptrdiff_t>(classes_.size())) {
            throw InvalidArgument("taxonomy: needs at least one thing and one stuff class");
        }
    }

    /// Number of real classes, empty included. Mask sets carry one extra
    /// no-object column after these.
    [[nodiscard]] std::size_t size() const noexcept { return classes_.size(); }
    [[nodiscard]] const std::vector<ClassInfo>& classes() const noexcept { return classes_; }
    [[nodiscard]] const ClassInfo& at(ClassId id) const { return classes_.at(id); }
    [[nodiscard]] ClassId empty_class_id() const noexcept { return empty_; }
    [[nodiscard]] ClassId unlabeled_id() const noexcept { return unlabeled_; }
    /// Column index of the no-object class in a mask set's probabilities.
    [[nodiscard]] std::size_t null_class_index() const noexcept { return classes_.size(); }

    [[nodiscard]] bool is_class(std::size_t id) const noexcept { return id < classes_.size(); }
    [[nodiscard]] bool is_thing(ClassId id) const noexcept {
        return id < classes_.size() && classes_[id].kind == ClassKind::thing;
    }
    [[nodiscard]] bool is_stuff(ClassId id) const noexcept {
        return id < classes_.size() && classes_[id].kind == ClassKind::stuff;
    }

private:
    std::vector<ClassInfo> classes_;
    ClassId empty_;
    ClassId unlabeled_;
};

// ---------------------------------------------------------------------------
// Grids

struct LabeledSite {
    Coord coord;
    ClassId label = 0;

    friend constexpr bool operator==(const LabeledSite&, const LabeledSite&) = default;
};

struct PanopticSite {
    Coord coord;
    ClassId label = 0;
    InstanceId instance = 0;

    friend constexpr bool operator==(const PanopticSite&, const PanopticSite&) = default;
};

/// Semantic grid. Absent coords are empty; `invalid` coords carry no label
/// and are skipped by losses and metrics. Sites and invalid coords are
/// disjoint and both sorted.
struct SparseVoxelGrid {
    Dims dims;
    float voxel_size = 0.2F;
    std::vector<LabeledSite> sites;
    std::vector<Coord> invalid;

    friend bool operator==(const SparseVoxelGrid&, const SparseVoxelGrid&) = default;
};

/// Panoptic grid: per-site (class, instance). Instance 0 is used by stuff
/// segments; a thing-class site with instance 0 is void (e.g. clustering noise).
struct PanopticGrid {
    Dims dims;
    float voxel_size = 0.2F;
    std::vector<PanopticSite> sites;
    std::vector<Coord> invalid;

    friend bool operator==(const PanopticGrid&, const PanopticGrid&) = default;
};

namespace detail {

template <class Site>
void sort_and_check_sites(std::vector<Site>& sites, std::vector<Coord>& invalid, const Dims& dims) {
    std::sort(sites.begin(), sites.end(), [](const Site& a, const Site& b) { return a.coord < b.coord; });
    std::sort(invalid.begin(), invalid.end());
    for (std::size_t i = 0; i < sites.size(); ++i) {
        if (!dims.contains(sites[i].coord)) {
            throw InvalidArgument("grid: site " + to_string(sites[i].coord) + " outside dims " + to_string(dims));
        }
        if (i > 0 && sites[i - 1].coord == sites[i].coord) {
            throw InvalidArgument("grid: duplicate site " + to_string(sites[i].coord));
        }
    }
    for (std::size_t i = 0; i < invalid.size(); ++i) {
        if (!dims.contains(invalid[i])) {
            throw InvalidArgument("grid: invalid coord " + to_string(invalid[i]) + " outside dims " + to_string(dims));
        }
        if (i > 0 && invalid[i - 1] == invalid[i]) {
            throw InvalidArgument("grid: duplicate invalid coord " + to_string(invalid[i]));
        }
    }
    // Sorted merge for disjointness.
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < sites.size() && j < invalid.size()) {
        if (sites[i].coord < invalid[j]) {
            ++i;
        } else if (invalid[j] < sites[i].coord) {
            ++j;
        } else {
            throw InvalidArgument("grid: coord " + to_string(invalid[j]) + " is both labeled and invalid");
        }
    }
}

inline void check_dims(const Dims& dims) {
    if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) {
        throw InvalidArgument("grid: dims must be positive, got " + to_string(dims));
    }
}

} // namespace detail

/// Builds a grid, sorting sites and checking the structural invariants.
/// When `tax` is given, labels are also checked against it.
inline SparseVoxelGrid make_sparse_grid(Dims dims, float voxel_size, std::vector<LabeledSite> sites,
                                        std::vector<Coord> invalid = {}, const ClassTaxonomy* tax = nullptr) {
    detail::check_dims(dims);
    detail::sort_and_check_sites(sites, invalid, dims);
    if (tax != nullptr) {
        for (const auto& s : sites) {
            if (!tax->is_class(s.label)) {
                throw InvalidArgument("grid: unknown class id " + std::to_string(s.label));
            }
            if (s.label == tax->empty_class_id()) {
                throw InvalidArgument("grid: explicit empty label at " + to_string(s.coord));
            }
        }
    }
    return {dims, voxel_size, std::move(sites), std::move(invalid)};
}

inline PanopticGrid make_panoptic_grid(Dims dims, float voxel_size, std::vector<PanopticSite> sites,
                                       std::vector<Coord> invalid = {}, const ClassTaxonomy* tax = nullptr) {
    detail::check_dims(dims);
    detail::sort_and_check_sites(sites, invalid, dims);
    if (tax != nullptr) {
        std::map<InstanceId, ClassId> owner;
        for (const auto& s : sites) {
            if (!tax->is_class(s.label) || s.label == tax->empty_class_id()) {
                throw InvalidArgument("panoptic grid: bad class id " + std::to_string(s.label) + " at " +
                                      to_string(s.coord));
            }
            if (tax->is_stuff(s.label) && s.instance != 0) {
                throw InvalidArgument("panoptic grid: stuff site with instance id at " + to_string(s.coord));
            }
            if (s.instance != 0) {
                auto [it, inserted] = owner.emplace(s.instance, s.label);
                if (!inserted && it->second != s.label) {
                    throw InvalidArgument("panoptic grid: instance " + std::to_string(s.instance) +
                                          " spans two classes");
                }
            }
        }
    }
    return {dims, voxel_size, std::move(sites), std::move(invalid)};
}

/// Semantic view of a panoptic grid (instance ids dropped).
inline SparseVoxelGrid semantic_of(const PanopticGrid& grid) {
    SparseVoxelGrid out{grid.dims, grid.voxel_size, {}, grid.invalid};
    out.sites.reserve(grid.sites.size());
    for (const auto& s : grid.sites) {
        out.sites.push_back({s.coord, s.label});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Operations

/// Sorted coordinates of the non-empty sites.
inline std::vector<Coord> nonempty_sites(const SparseVoxelGrid& grid) {
    std::vector<Coord> out;
    out.reserve(grid.sites.size());
    for (const auto& s : grid.sites) {
        out.push_back(s.coord);
    }
    return out;
}

/// Dense label array in linear-index order. Missing sites take the empty
/// class, invalid voxels take the unlabeled id.
inline std::vector<ClassId> densify(const SparseVoxelGrid& grid, const ClassTaxonomy& tax) {
    std::vector<ClassId> dense(grid.dims.volume(), tax.empty_class_id());
    for (const auto& s : grid.sites) {
        dense[grid.dims.linear_index(s.coord)] = s.label;
    }
    for (const auto& c : grid.invalid) {
        dense[grid.dims.linear_index(c)] = tax.unlabeled_id();
    }
    return dense;
}

/// Inverse of densify.
inline SparseVoxelGrid sparsify(std::span<const ClassId> dense, Dims dims, float voxel_size, const ClassTaxonomy& tax) {
    if (dense.size() != dims.volume()) {
        throw InvalidArgument("sparsify: array has " + std::to_string(dense.size()) + " entries, dims " +
                              to_string(dims) + " need " + std::to_string(dims.volume()));
    }
    SparseVoxelGrid out{dims, voxel_size, {}, {}};
    for (std::size_t i = 0; i < dense.size(); ++i) {
        if (dense[i] == tax.unlabeled_id()) {
            out.invalid.push_back(dims.coord_of(i));
        } else if (dense[i] != tax.empty_class_id()) {
            out.sites.push_back({dims.coord_of(i), dense[i]});
        }
    }
    return out;
}

/// Majority pooling by a power-of-two factor.
///
/// A pooled voxel takes the most frequent non-empty class among its valid
/// children (smallest id on ties) and is empty when no valid child is
/// labeled. It is invalid only when every child is invalid.
inline SparseVoxelGrid majority_pool(const SparseVoxelGrid& grid, int factor) {
    if (factor < 1 || (factor & (factor - 1)) != 0) {
        throw InvalidArgument("majority_pool: factor must be a power of two, got " + std::to_string(factor));
    }
    const Dims& d = grid.dims;
    if (d.x % factor != 0 || d.y % factor != 0 || d.z % factor != 0) {
        throw InvalidArgument("majority_pool: dims " + to_string(d) + " not divisible by " + std::to_string(factor));
    }
    const Dims out_dims{d.x / factor, d.y / factor, d.z / factor};
    const auto parent = [factor](const Coord& c) { return Coord{c.x / factor, c.y / factor, c.z / factor}; };

    std::map<Coord, std::map<ClassId, std::size_t>> votes;
    for (const auto& s : grid.sites) {
        ++votes[parent(s.coord)][s.label];
    }
    std::map<Coord, std::size_t> invalid_children;
    for (const auto& c : grid.invalid) {
        ++invalid_children[parent(c)];
    }

    SparseVoxelGrid out{out_dims, grid.voxel_size * static_cast<float>(factor), {}, {}};
    out.sites.reserve(votes.size());
    for (const auto& [coord, counts] : votes) {
        // std::map iterates ids ascending, so strict '>' keeps the smallest id on ties.
        ClassId best = counts.begin()->first;
        std::size_t best_count = 0;
        for (const auto& [label, n] : counts) {
            if (n > best_count) {
                best = label;
                best_count = n;
            }
        }
        out.sites.push_back({coord, best});
    }
    const auto block = static_cast<std::size_t>(factor) * static_cast<std::size_t>(factor) * static_cast<std::size_t>(factor);
    for (const auto& [coord, n] : invalid_children) {
        if (n == block) {
            out.invalid.push_back(coord);
        }
    }
    return out;
}

} // namespace psc
