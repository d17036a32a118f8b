#pragma once

// Deterministic synthetic street scene with noisy multi-subnet mask-set
// predictions, used for demos and end-to-end runs.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "psc/core.hpp"
#include "psc/error.hpp"
#include "psc/masks.hpp"

namespace psc {

struct SyntheticConfig {
    /// Grid edge length; the layout is designed for 64.
    std::int32_t size = 64;
    std::size_t subnets = 3;
    std::size_t queries = 20;
    std::uint64_t seed = 7;
    float voxel_size = 0.2F;
};

struct SyntheticScene {
    SparseVoxelGrid semantic;
    /// Ground-truth instances as drawn.
    PanopticGrid panoptic;
    std::vector<MaskSet> subnets;
};

namespace detail {

// Uniform in [0,1) from raw engine bits; std distributions are not
// portable across standard libraries.
inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11U) * 0x1.0p-53; }

inline std::size_t below(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(unit(rng) * static_cast<double>(n));
}

struct Box {
    Coord lo;
    Coord hi; // exclusive
};

} // namespace detail

inline SyntheticScene make_synthetic_scene(const ClassTaxonomy& tax, const SyntheticConfig& cfg = {}) {
    if (cfg.size < 32 || cfg.size % 2 != 0) {
        throw InvalidArgument("synthetic scene: size must be even and >= 32");
    }
    std::vector<ClassId> things;
    std::vector<ClassId> stuff;
    for (const auto& c : tax.classes()) {
        if (c.id == tax.empty_class_id()) {
            continue;
        }
        (c.kind == ClassKind::thing ? things : stuff).push_back(c.id);
    }
    const std::int32_t s = cfg.size;
    const Dims dims{s, s, s};
    const ClassId road = stuff[0];
    const ClassId sidewalk = stuff[2 % stuff.size()];
    const ClassId building = stuff[4 % stuff.size()];
    const ClassId vegetation = stuff[6 % stuff.size()];
    const ClassId car = things[0];
    const ClassId person = things[std::min<std::size_t>(5, things.size() - 1)];

    struct Segment {
        ClassId label;
        InstanceId instance;
        std::vector<detail::Box> boxes;
    };
    std::vector<Segment> segments;
    segments.push_back({road, 0, {{{0, 0, 0}, {s / 2, s, 1}}}});
    segments.push_back({sidewalk, 0, {{{s / 2, 0, 0}, {s, s, 1}}}});
    segments.push_back({building, 0, {{{s * 3 / 4, 2, 1}, {s - 4, s / 4 + 2, s / 4 + 1}}}});
    segments.push_back({vegetation, 0, {{{s / 2 + 4, s * 2 / 3, 1}, {s * 3 / 4 - 2, s - 4, 5}}}});
    InstanceId next = 1;
    for (std::int32_t i = 0; 4 + 12 * i + 4 <= s - 4; ++i) {
        segments.push_back({car, next++, {{{4, 4 + 12 * i, 1}, {12, 8 + 12 * i, 4}}}});
    }
    for (std::int32_t i = 0; 10 + 12 * i + 4 <= s - 4; ++i) {
        segments.push_back({car, next++, {{{18, 10 + 12 * i, 1}, {26, 14 + 12 * i, 4}}}});
    }
    for (std::int32_t i = 0; i < 3; ++i) {
        const std::int32_t x = s / 2 + 4 + 8 * i;
        segments.push_back({person, next++, {{{x, s / 2 + 8, 1}, {x + 2, s / 2 + 10, 6}}}});
    }

    // Later segments overwrite earlier ones where boxes touch.
    std::vector<std::size_t> owner(dims.volume(), static_cast<std::size_t>(-1));
    for (std::size_t g = 0; g < segments.size(); ++g) {
        for (const auto& b : segments[g].boxes) {
            for (std::int32_t x = b.lo.x; x < b.hi.x; ++x) {
                for (std::int32_t y = b.lo.y; y < b.hi.y; ++y) {
                    for (std::int32_t z = b.lo.z; z < b.hi.z; ++z) {
                        owner[dims.linear_index({x, y, z})] = g;
                    }
                }
            }
        }
    }
    SyntheticScene scene;
    scene.semantic = {dims, cfg.voxel_size, {}, {}};
    scene.panoptic = {dims, cfg.voxel_size, {}, {}};
    std::vector<std::vector<std::size_t>> members(segments.size());
    for (std::size_t i = 0; i < owner.size(); ++i) {
        const Coord c = dims.coord_of(i);
        const bool unobserved = c.z >= s - 4 && c.x < 8;
        if (owner[i] == static_cast<std::size_t>(-1)) {
            if (unobserved) {
                scene.semantic.invalid.push_back(c);
                scene.panoptic.invalid.push_back(c);
            }
            continue;
        }
        const auto& seg = segments[owner[i]];
        scene.semantic.sites.push_back({c, seg.label});
        scene.panoptic.sites.push_back({c, seg.label, seg.instance});
    }

    // Prediction support: every labeled voxel plus its 6-neighborhood.
    std::vector<char> in_support(dims.volume(), 0);
    for (const auto& site : scene.semantic.sites) {
        in_support[dims.linear_index(site.coord)] = 1;
        const Coord c = site.coord;
        const Coord nb[6] = {{c.x - 1, c.y, c.z}, {c.x + 1, c.y, c.z}, {c.x, c.y - 1, c.z},
                             {c.x, c.y + 1, c.z}, {c.x, c.y, c.z - 1}, {c.x, c.y, c.z + 1}};
        for (const auto& n : nb) {
            if (dims.contains(n)) {
                in_support[dims.linear_index(n)] = 1;
            }
        }
    }
    std::vector<Coord> support;
    std::vector<std::size_t> support_of(dims.volume(), static_cast<std::size_t>(-1));
    for (std::size_t i = 0; i < in_support.size(); ++i) {
        if (in_support[i] != 0) {
            support_of[i] = support.size();
            support.push_back(dims.coord_of(i));
        }
    }
    for (std::size_t i = 0; i < owner.size(); ++i) {
        if (owner[i] != static_cast<std::size_t>(-1)) {
            members[owner[i]].push_back(support_of[i]);
        }
    }
    const std::size_t n = support.size();
    const std::size_t c_real = tax.size();
    const std::size_t cols = c_real + 1;
    if (cfg.queries < segments.size()) {
        throw InvalidArgument("synthetic scene: need at least " + std::to_string(segments.size()) + " queries");
    }

    for (std::size_t m = 0; m < cfg.subnets; ++m) {
        std::mt19937_64 rng(cfg.seed * 1000003ULL + m);
        MaskSet ms{dims, cfg.voxel_size, support, cfg.queries, c_real, {}, {}};
        ms.class_probs.assign(cfg.queries * cols, 0.0);
        ms.mask_scores.assign(cfg.queries * n, 0.0);
        std::vector<std::size_t> order(cfg.queries);
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[detail::below(rng, i)]);
        }
        const auto fill_probs = [&](std::size_t q, std::size_t top, double p_top) {
            auto p = ms.probs(q);
            std::vector<double> w(cols);
            double total = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                w[j] = j == top ? 0.0 : detail::unit(rng) + 0.01;
                total += w[j];
            }
            for (std::size_t j = 0; j < cols; ++j) {
                p[j] = j == top ? p_top : (1.0 - p_top) * w[j] / total;
            }
        };
        for (std::size_t k = 0; k < cfg.queries; ++k) {
            const std::size_t q = order[k];
            auto scores = ms.scores(q);
            const bool detected = k < segments.size() && detail::unit(rng) >= 0.08;
            if (detected) {
                const auto& seg = segments[k];
                std::size_t top = seg.label;
                if (tax.is_thing(seg.label) && detail::unit(rng) < 0.1) {
                    top = seg.label == car ? person : car;
                }
                fill_probs(q, top, 0.55 + 0.4 * detail::unit(rng));
                for (std::size_t v : members[k]) {
                    scores[v] = detail::unit(rng) < 0.03 ? 0.3 * detail::unit(rng) : 0.55 + 0.44 * detail::unit(rng);
                    const Coord c = support[v];
                    const Coord nb[2] = {{c.x + 1, c.y, c.z}, {c.x, c.y + 1, c.z}};
                    for (const auto& nc : nb) {
                        if (dims.contains(nc)) {
                            const std::size_t u = support_of[dims.linear_index(nc)];
                            if (u != static_cast<std::size_t>(-1) && scores[u] == 0.0) {
                                scores[u] = 0.35 * detail::unit(rng);
                            }
                        }
                    }
                }
            } else {
                // Spurious query: mostly no-object over a small blob.
                fill_probs(q, detail::unit(rng) < 0.8 ? c_real : things[detail::below(rng, things.size())],
                           0.6 + 0.35 * detail::unit(rng));
                const std::size_t start = detail::below(rng, n);
                for (std::size_t v = start; v < std::min(n, start + 24); ++v) {
                    scores[v] = 0.7 * detail::unit(rng);
                }
            }
        }
        scene.subnets.push_back(std::move(ms));
    }
    return scene;
}

} // namespace psc
