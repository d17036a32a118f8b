#pragma once

// Random instances for property tests.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "psc/assignment.hpp"
#include "psc/core.hpp"
#include "psc/masks.hpp"
#include "psc/pruning.hpp"

namespace psc::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng) { return static_cast<double>(rng() >> 11U) * 0x1.0p-53; }

/// Uniform integer in [lo, hi].
inline std::int64_t randint(Rng& rng, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

/// 0 empty, 1 car, 2 person (things), 3 road, 4 building (stuff).
inline ClassTaxonomy small_taxonomy() {
    return ClassTaxonomy({{0, "empty", ClassKind::stuff},
                          {1, "car", ClassKind::thing},
                          {2, "person", ClassKind::thing},
                          {3, "road", ClassKind::stuff},
                          {4, "building", ClassKind::stuff}},
                         0);
}

inline Coord random_coord(Rng& rng, const Dims& d) {
    return {static_cast<std::int32_t>(randint(rng, 0, d.x - 1)), static_cast<std::int32_t>(randint(rng, 0, d.y - 1)),
            static_cast<std::int32_t>(randint(rng, 0, d.z - 1))};
}

/// `count` distinct sorted coords (capped at the volume).
inline std::vector<Coord> random_coords(Rng& rng, const Dims& d, std::size_t count) {
    count = std::min(count, d.volume());
    std::set<Coord> picked;
    while (picked.size() < count) {
        picked.insert(random_coord(rng, d));
    }
    return {picked.begin(), picked.end()};
}

inline std::vector<double> random_simplex(Rng& rng, std::size_t n) {
    std::vector<double> p(n);
    double total = 0.0;
    for (auto& v : p) {
        v = uniform(rng) + 1e-3;
        total += v;
    }
    for (auto& v : p) {
        v /= total;
    }
    return p;
}

inline CostMatrix random_cost(Rng& rng, std::size_t k, bool integer_valued) {
    CostMatrix c(k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            c(i, j) = integer_valued ? static_cast<double>(randint(rng, 0, 9)) : uniform(rng) * 10.0 - 5.0;
        }
    }
    return c;
}

/// Mask set with random probabilities and scores; about a third of the
/// scores are exactly zero.
inline MaskSet random_maskset(Rng& rng, const Dims& dims, std::size_t sites, std::size_t k, std::size_t classes) {
    MaskSet ms{dims, 0.2F, random_coords(rng, dims, sites), k, classes, {}, {}};
    for (std::size_t q = 0; q < k; ++q) {
        const auto p = random_simplex(rng, classes + 1);
        ms.class_probs.insert(ms.class_probs.end(), p.begin(), p.end());
    }
    ms.mask_scores.resize(k * ms.sites.size());
    for (auto& m : ms.mask_scores) {
        m = uniform(rng) < 0.33 ? 0.0 : uniform(rng);
    }
    return ms;
}

/// Mask set whose queries own disjoint site blocks (scores in [0.6,1]) with
/// weak noise elsewhere, and whose class argmax is a real class. Distinct
/// queries barely overlap, so self-matching is the unique optimum.
inline MaskSet structured_maskset(Rng& rng, const ClassTaxonomy& tax, const Dims& dims, std::size_t k,
                                  std::size_t sites_per_query) {
    const std::size_t n = std::min(dims.volume(), k * sites_per_query + randint(rng, 0, 10));
    MaskSet ms{dims, 0.2F, random_coords(rng, dims, n), k, tax.size(), {}, {}};
    std::vector<std::size_t> owner(ms.sites.size());
    for (std::size_t i = 0; i < owner.size(); ++i) {
        owner[i] = i % (k + 1); // k means nobody
    }
    std::shuffle(owner.begin(), owner.end(), rng);
    for (std::size_t q = 0; q < k; ++q) {
        auto p = random_simplex(rng, tax.size() + 1);
        auto label = static_cast<std::size_t>(randint(rng, 1, static_cast<std::int64_t>(tax.size()) - 1));
        if (label == tax.empty_class_id()) {
            label = 1;
        }
        const double boost = 2.0 + 3.0 * uniform(rng);
        p[label] += boost;
        for (auto& v : p) {
            v /= 1.0 + boost;
        }
        ms.class_probs.insert(ms.class_probs.end(), p.begin(), p.end());
    }
    ms.mask_scores.assign(k * ms.sites.size(), 0.0);
    for (std::size_t q = 0; q < k; ++q) {
        for (std::size_t i = 0; i < ms.sites.size(); ++i) {
            ms.mask_scores[q * ms.sites.size() + i] =
                owner[i] == q ? 0.6 + 0.4 * uniform(rng) : (uniform(rng) < 0.2 ? 0.1 * uniform(rng) : 0.0);
        }
    }
    return ms;
}

/// Semantic grid with labels drawn from the real non-empty classes.
inline SparseVoxelGrid random_sparse_grid(Rng& rng, const ClassTaxonomy& tax, const Dims& dims, double fill,
                                          double invalid_fraction = 0.0) {
    std::vector<LabeledSite> sites;
    std::vector<Coord> invalid;
    for (std::size_t i = 0; i < dims.volume(); ++i) {
        const double u = uniform(rng);
        if (u < fill) {
            auto label = static_cast<ClassId>(randint(rng, 0, static_cast<std::int64_t>(tax.size()) - 1));
            if (label == tax.empty_class_id()) {
                label = static_cast<ClassId>((label + 1) % tax.size());
            }
            sites.push_back({dims.coord_of(i), label});
        } else if (u < fill + invalid_fraction) {
            invalid.push_back(dims.coord_of(i));
        }
    }
    return make_sparse_grid(dims, 0.2F, std::move(sites), std::move(invalid));
}

/// Panoptic grid: random stuff voxels plus a few box-shaped thing instances,
/// with optional void (thing class, instance 0) and invalid voxels.
inline PanopticGrid random_panoptic(Rng& rng, const ClassTaxonomy& tax, const Dims& dims, std::size_t instances,
                                    double stuff_fill, double void_fraction = 0.0, double invalid_fraction = 0.0) {
    std::vector<ClassId> things;
    std::vector<ClassId> stuff;
    for (const auto& c : tax.classes()) {
        if (c.id != tax.empty_class_id()) {
            (c.kind == ClassKind::thing ? things : stuff).push_back(c.id);
        }
    }
    std::vector<PanopticSite> dense(dims.volume(), {{}, tax.empty_class_id(), 0});
    std::vector<char> invalid(dims.volume(), 0);
    for (std::size_t i = 0; i < dims.volume(); ++i) {
        const double u = uniform(rng);
        if (u < stuff_fill) {
            dense[i].label = stuff[static_cast<std::size_t>(randint(rng, 0, static_cast<std::int64_t>(stuff.size()) - 1))];
        } else if (u < stuff_fill + invalid_fraction) {
            invalid[i] = 1;
        }
    }
    for (std::size_t n = 1; n <= instances; ++n) {
        const ClassId label = things[static_cast<std::size_t>(randint(rng, 0, static_cast<std::int64_t>(things.size()) - 1))];
        const Coord lo = random_coord(rng, dims);
        const Coord ext{static_cast<std::int32_t>(randint(rng, 1, 3)), static_cast<std::int32_t>(randint(rng, 1, 3)),
                        static_cast<std::int32_t>(randint(rng, 1, 3))};
        for (std::int32_t x = lo.x; x < std::min(dims.x, lo.x + ext.x); ++x) {
            for (std::int32_t y = lo.y; y < std::min(dims.y, lo.y + ext.y); ++y) {
                for (std::int32_t z = lo.z; z < std::min(dims.z, lo.z + ext.z); ++z) {
                    const std::size_t i = dims.linear_index({x, y, z});
                    dense[i].label = label;
                    dense[i].instance = uniform(rng) < void_fraction ? 0 : static_cast<InstanceId>(n);
                    invalid[i] = 0;
                }
            }
        }
    }
    std::vector<PanopticSite> sites;
    std::vector<Coord> inv;
    for (std::size_t i = 0; i < dims.volume(); ++i) {
        if (invalid[i] != 0) {
            inv.push_back(dims.coord_of(i));
        } else if (dense[i].label != tax.empty_class_id()) {
            sites.push_back({dims.coord_of(i), dense[i].label, dense[i].instance});
        }
    }
    return make_panoptic_grid(dims, 0.2F, std::move(sites), std::move(inv));
}

/// A noisy copy of `gt`: each segment is eroded or grown at random, some
/// labels are swapped, and a few spurious thing blobs are added.
inline PanopticGrid perturb_panoptic(Rng& rng, const ClassTaxonomy& tax, const PanopticGrid& gt, double flip) {
    std::vector<PanopticSite> sites;
    for (const auto& s : gt.sites) {
        const double u = uniform(rng);
        if (u < flip) {
            continue;
        }
        PanopticSite out = s;
        if (u < 1.5 * flip) {
            out.label = static_cast<ClassId>(1 + (s.label % (tax.size() - 1)));
            out.instance = tax.is_thing(out.label) ? 1000 + s.instance : 0;
        } else if (tax.is_thing(out.label) && out.instance == 0) {
            out.instance = 999;
        }
        if (!tax.is_thing(out.label)) {
            out.instance = 0;
        }
        sites.push_back(out);
    }
    auto result = make_panoptic_grid(gt.dims, gt.voxel_size, std::move(sites), {});
    // Spurious voxels on unused coords.
    std::set<Coord> used;
    for (const auto& s : result.sites) {
        used.insert(s.coord);
    }
    for (int i = 0; i < 6; ++i) {
        const Coord c = random_coord(rng, gt.dims);
        if (used.insert(c).second) {
            result.sites.push_back({c, 1, 5000});
        }
    }
    return make_panoptic_grid(gt.dims, gt.voxel_size, std::move(result.sites), {});
}

/// Stack of `levels` scales (factors 2^(levels-1) .. 1) with `m` random
/// subnets each; the coarsest grid has dims `coarse`.
inline ScaleStack random_scale_stack(Rng& rng, const ClassTaxonomy& tax, const Dims& coarse, std::size_t levels,
                                     std::size_t m, double fill) {
    ScaleStack stack;
    Dims d = coarse;
    int factor = 1 << (levels - 1);
    for (std::size_t l = 0; l < levels; ++l) {
        ScaleStack::Level level{factor, {}};
        for (std::size_t i = 0; i < m; ++i) {
            level.subnets.push_back(random_sparse_grid(rng, tax, d, fill));
        }
        stack.levels.push_back(std::move(level));
        d = {2 * d.x, 2 * d.y, 2 * d.z};
        factor /= 2;
    }
    return stack;
}

} // namespace psc::testing
