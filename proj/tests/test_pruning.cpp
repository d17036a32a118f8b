#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "psc/pruning.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace psc;
using psc::testing::Rng;

namespace {

const ClassTaxonomy kTax = psc::testing::small_taxonomy();
constexpr ClassId kCar = 1;

OccupancyStack binarized(const ScaleStack& s) {
    OccupancyStack out;
    for (const auto& level : s.levels) {
        OccupancyStack::Level l{level.factor, {}};
        for (const auto& g : level.subnets) {
            l.subnets.push_back(to_occupancy(g));
        }
        out.levels.push_back(std::move(l));
    }
    return out;
}

// Per-voxel check at every scale: predicted by some subnet and, below the
// coarsest scale, the parent survived.
std::vector<CoordSet> brute_force_cascade(const ScaleStack& s) {
    std::vector<CoordSet> out;
    for (std::size_t l = 0; l < s.levels.size(); ++l) {
        const auto predicted = psc::testing::oracle::per_voxel_union(s.levels[l].subnets);
        CoordSet kept;
        for (const auto& c : predicted) {
            const Coord parent{c.x / 2, c.y / 2, c.z / 2};
            if (l == 0 || std::binary_search(out.back().begin(), out.back().end(), parent)) {
                kept.push_back(c);
            }
        }
        out.push_back(std::move(kept));
    }
    return out;
}

} // namespace

TEST(PruneUnion, AnySubnetKeepsVoxel) {
    const Dims d{2, 2, 2};
    const std::vector<SparseVoxelGrid> grids{make_sparse_grid(d, 0.2F, {}),
                                             make_sparse_grid(d, 0.2F, {{{1, 0, 1}, kCar}})};
    EXPECT_EQ(prune_union(grids), (CoordSet{{1, 0, 1}}));
    const std::vector<SparseVoxelGrid> none{make_sparse_grid(d, 0.2F, {}), make_sparse_grid(d, 0.2F, {})};
    EXPECT_TRUE(prune_union(none).empty());
}

TEST(PruneUnion, MatchesPerVoxelBruteForce) {
    Rng rng(81);
    for (int t = 0; t < 30; ++t) {
        std::vector<SparseVoxelGrid> grids;
        for (int m = 0; m < 3; ++m) {
            grids.push_back(psc::testing::random_sparse_grid(rng, kTax, {6, 5, 4}, 0.2, 0.05));
        }
        EXPECT_EQ(prune_union(grids), psc::testing::oracle::per_voxel_union(grids));
    }
}

TEST(PruneUnion, RejectsMismatch) {
    const std::vector<SparseVoxelGrid> grids{make_sparse_grid({2, 2, 2}, 0.2F, {}),
                                             make_sparse_grid({2, 2, 4}, 0.2F, {})};
    EXPECT_THROW(prune_union(grids), InvalidArgument);
    EXPECT_THROW(prune_union(std::vector<SparseVoxelGrid>{}), InvalidArgument);
}

TEST(PruneBinary, Threshold) {
    const Dims d{2, 2, 2};
    const std::vector<OccupancyGrid> grids{{d, 0.2F, {{0, 0, 0}, {1, 1, 1}}, {0.6, 0.4}},
                                           {d, 0.2F, {{1, 1, 1}}, {0.0}}};
    EXPECT_EQ(prune_binary(grids, 0.5), (CoordSet{{0, 0, 0}}));
    EXPECT_EQ(prune_binary(grids, 0.4), (CoordSet{{0, 0, 0}, {1, 1, 1}}));
    const std::vector<OccupancyGrid> zeros{{d, 0.2F, {{0, 0, 0}}, {0.0}}};
    EXPECT_TRUE(prune_binary(zeros).empty());
    const std::vector<OccupancyGrid> broken{{d, 0.2F, {{0, 0, 0}}, {}}};
    EXPECT_THROW(prune_binary(broken), InvalidArgument);
}

TEST(PruneBinary, MatchesBruteForce) {
    Rng rng(82);
    for (int t = 0; t < 20; ++t) {
        const Dims d{5, 5, 5};
        std::vector<OccupancyGrid> grids;
        std::set<Coord> expected;
        for (int m = 0; m < 3; ++m) {
            OccupancyGrid g{d, 0.2F, psc::testing::random_coords(rng, d, 40), {}};
            for (const auto& c : g.sites) {
                g.scores.push_back(psc::testing::uniform(rng));
                if (g.scores.back() >= 0.5) {
                    expected.insert(c);
                }
            }
            grids.push_back(std::move(g));
        }
        EXPECT_EQ(prune_binary(grids), CoordSet(expected.begin(), expected.end()));
    }
}

TEST(ExpandScale, EightChildrenEach) {
    const CoordSet one{{1, 2, 3}};
    const auto kids = expand_scale(one);
    ASSERT_EQ(kids.size(), 8U);
    EXPECT_EQ(kids.front(), (Coord{2, 4, 6}));
    EXPECT_EQ(kids.back(), (Coord{3, 5, 7}));
    EXPECT_TRUE(expand_scale(CoordSet{}).empty());

    Rng rng(83);
    const auto coarse = psc::testing::random_coords(rng, {6, 6, 6}, 30);
    const auto fine = expand_scale(coarse);
    EXPECT_EQ(fine.size(), 8 * coarse.size());
    EXPECT_TRUE(std::is_sorted(fine.begin(), fine.end()));
    for (const auto& c : fine) {
        EXPECT_TRUE(std::binary_search(coarse.begin(), coarse.end(), Coord{c.x / 2, c.y / 2, c.z / 2}));
    }
}

TEST(Cascade, FullPredictionsKeepEverything) {
    ScaleStack s;
    Dims d{1, 1, 1};
    for (int f = 8; f >= 1; f /= 2) {
        std::vector<LabeledSite> sites;
        for (std::size_t i = 0; i < d.volume(); ++i) {
            sites.push_back({d.coord_of(i), kCar});
        }
        s.levels.push_back({f, {make_sparse_grid(d, 0.2F * static_cast<float>(f), sites)}});
        d = {2 * d.x, 2 * d.y, 2 * d.z};
    }
    const auto r = cascade(s);
    ASSERT_EQ(r.stats.size(), 4U);
    EXPECT_EQ(r.stats.back().survivors, 512U);
    EXPECT_EQ(r.stats.back().fraction, 1.0);
    EXPECT_EQ(r.stats[0].factor, 8);
    EXPECT_EQ(r.stats[2].candidates, 64U);
}

TEST(Cascade, PrunedCoarseVoxelBlocksAllDescendants) {
    // Coarse 2x1x1 grid: only voxel (0,0,0) predicted. The finest scale
    // predicts everything, yet none of the 512 descendants of (1,0,0) survive.
    ScaleStack s;
    Dims d{2, 1, 1};
    for (int f = 8; f >= 1; f /= 2) {
        std::vector<LabeledSite> sites;
        for (std::size_t i = 0; i < d.volume(); ++i) {
            if (f < 8 || i == 0) {
                sites.push_back({d.coord_of(i), kCar});
            }
        }
        s.levels.push_back({f, {make_sparse_grid(d, 0.2F, sites)}});
        d = {2 * d.x, 2 * d.y, 2 * d.z};
    }
    const auto r = cascade(s);
    EXPECT_EQ(r.survivors.back().size(), 512U);
    for (const auto& c : r.survivors.back()) {
        EXPECT_LT(c.x, 8);
    }
}

TEST(Cascade, RandomStacksSatisfyProperties) {
    Rng rng(84);
    for (int t = 0; t < 30; ++t) {
        const std::size_t m = static_cast<std::size_t>(psc::testing::randint(rng, 1, 4));
        const auto s = psc::testing::random_scale_stack(rng, kTax, {2, 2, 1}, 4, m, 0.5);
        const auto r = cascade(s);
        EXPECT_EQ(r.survivors, brute_force_cascade(s));
        EXPECT_EQ(cascade(binarized(s), 0.5).survivors, r.survivors);
        for (std::size_t l = 1; l < r.survivors.size(); ++l) {
            for (const auto& c : r.survivors[l]) {
                EXPECT_TRUE(std::binary_search(r.survivors[l - 1].begin(), r.survivors[l - 1].end(),
                                               Coord{c.x / 2, c.y / 2, c.z / 2}));
            }
        }
        // Adding a subnet never shrinks a survivor set.
        auto more = s;
        const auto extra = psc::testing::random_scale_stack(rng, kTax, {2, 2, 1}, 4, 1, 0.3);
        for (std::size_t l = 0; l < more.levels.size(); ++l) {
            more.levels[l].subnets.push_back(extra.levels[l].subnets.front());
        }
        const auto bigger = cascade(more);
        for (std::size_t l = 0; l < r.survivors.size(); ++l) {
            EXPECT_TRUE(std::includes(bigger.survivors[l].begin(), bigger.survivors[l].end(), r.survivors[l].begin(),
                                      r.survivors[l].end()));
        }
    }
}

TEST(Cascade, SingleSubnetIsUnionOfOne) {
    Rng rng(85);
    const auto s = psc::testing::random_scale_stack(rng, kTax, {2, 2, 2}, 3, 1, 0.6);
    const auto r = cascade(s);
    EXPECT_EQ(r.survivors.front(), nonempty_sites(s.levels.front().subnets.front()));
}

TEST(Cascade, RejectsInconsistentStacks) {
    EXPECT_THROW(cascade(ScaleStack{}), InvalidArgument);
    Rng rng(86);
    auto s = psc::testing::random_scale_stack(rng, kTax, {2, 2, 2}, 3, 2, 0.5);
    auto bad_dims = s;
    bad_dims.levels[1].subnets[1] = make_sparse_grid({4, 4, 2}, 0.2F, {});
    EXPECT_THROW(cascade(bad_dims), InvalidArgument);
    auto bad_count = s;
    bad_count.levels[2].subnets.pop_back();
    EXPECT_THROW(cascade(bad_count), InvalidArgument);
    auto bad_factor = s;
    bad_factor.levels[1].factor = 3;
    EXPECT_THROW(cascade(bad_factor), InvalidArgument);
}
