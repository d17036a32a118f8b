#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "psc/core.hpp"
#include "support/generators.hpp"

using namespace psc;
using psc::testing::Rng;

namespace {

const ClassTaxonomy kTax = psc::testing::small_taxonomy();
constexpr ClassId kCar = 1;
constexpr ClassId kPerson = 2;
constexpr ClassId kRoad = 3;

SparseVoxelGrid block(std::vector<LabeledSite> sites, std::vector<Coord> invalid = {}) {
    return make_sparse_grid({2, 2, 2}, 0.2F, std::move(sites), std::move(invalid));
}

std::vector<Coord> all_children() {
    std::vector<Coord> out;
    for (int i = 0; i < 8; ++i) {
        out.push_back({i >> 2, (i >> 1) & 1, i & 1});
    }
    return out;
}

} // namespace

TEST(Taxonomy, ReportsKindsAndSizes) {
    EXPECT_EQ(kTax.size(), 5U);
    EXPECT_EQ(kTax.null_class_index(), 5U);
    EXPECT_TRUE(kTax.is_thing(kCar));
    EXPECT_TRUE(kTax.is_stuff(kRoad));
    EXPECT_TRUE(kTax.is_stuff(kTax.empty_class_id()));
    EXPECT_FALSE(kTax.is_class(kTax.unlabeled_id()));
}

TEST(Taxonomy, RejectsBrokenDefinitions) {
    EXPECT_THROW(ClassTaxonomy({{0, "empty", ClassKind::stuff}, {2, "car", ClassKind::thing}}, 0), InvalidArgument);
    EXPECT_THROW(ClassTaxonomy({{0, "empty", ClassKind::thing}, {1, "road", ClassKind::stuff}}, 0), InvalidArgument);
    EXPECT_THROW(ClassTaxonomy({{0, "empty", ClassKind::stuff}, {1, "road", ClassKind::stuff}}, 0), InvalidArgument);
    EXPECT_THROW(ClassTaxonomy({{0, "empty", ClassKind::stuff}, {1, "car", ClassKind::thing}}, 0, 1), InvalidArgument);
    EXPECT_THROW(ClassTaxonomy({{0, "empty", ClassKind::stuff}, {1, "car", ClassKind::thing}}, 7), InvalidArgument);
}

TEST(Grid, BuilderSortsAndValidates) {
    const auto g = make_sparse_grid({3, 3, 3}, 0.2F, {{{2, 1, 0}, kCar}, {{0, 0, 0}, kRoad}});
    ASSERT_EQ(g.sites.size(), 2U);
    EXPECT_EQ(g.sites[0].coord, (Coord{0, 0, 0}));
    EXPECT_THROW(make_sparse_grid({3, 3, 3}, 0.2F, {{{3, 0, 0}, kCar}}), InvalidArgument);
    EXPECT_THROW(make_sparse_grid({3, 3, 3}, 0.2F, {{{1, 0, 0}, kCar}, {{1, 0, 0}, kRoad}}), InvalidArgument);
    EXPECT_THROW(make_sparse_grid({3, 3, 3}, 0.2F, {{{1, 0, 0}, kCar}}, {{1, 0, 0}}), InvalidArgument);
    EXPECT_THROW(make_sparse_grid({3, 3, 3}, 0.2F, {{{1, 0, 0}, 0}}, {}, &kTax), InvalidArgument);
    EXPECT_THROW(make_sparse_grid({0, 3, 3}, 0.2F, {}), InvalidArgument);
}

TEST(Grid, PanopticBuilderChecksInstances) {
    EXPECT_THROW(make_panoptic_grid({2, 2, 2}, 0.2F, {{{0, 0, 0}, kRoad, 3}}, {}, &kTax), InvalidArgument);
    EXPECT_THROW(make_panoptic_grid({2, 2, 2}, 0.2F, {{{0, 0, 0}, kCar, 1}, {{0, 0, 1}, kPerson, 1}}, {}, &kTax),
                 InvalidArgument);
    EXPECT_NO_THROW(make_panoptic_grid({2, 2, 2}, 0.2F, {{{0, 0, 0}, kCar, 1}, {{0, 0, 1}, kPerson, 2}}, {}, &kTax));
}

TEST(NonemptySites, ListsSitesInOrder) {
    const auto g = make_sparse_grid({3, 3, 3}, 0.2F, {{{2, 1, 0}, kCar}, {{0, 0, 0}, kRoad}});
    EXPECT_EQ(nonempty_sites(g), (std::vector<Coord>{{0, 0, 0}, {2, 1, 0}}));
    EXPECT_TRUE(nonempty_sites(make_sparse_grid({3, 3, 3}, 0.2F, {})).empty());
}

TEST(NonemptySites, MatchesNaiveSortOnRandomGrid) {
    Rng rng(11);
    const Dims dims{20, 20, 20};
    auto coords = psc::testing::random_coords(rng, dims, 1000);
    std::shuffle(coords.begin(), coords.end(), rng);
    std::vector<LabeledSite> sites;
    for (const auto& c : coords) {
        sites.push_back({c, kCar});
    }
    const auto got = nonempty_sites(make_sparse_grid(dims, 0.2F, sites));
    // Insertion sort as the reference.
    std::vector<Coord> ref;
    for (const auto& c : coords) {
        auto it = ref.begin();
        while (it != ref.end() && *it < c) {
            ++it;
        }
        ref.insert(it, c);
    }
    EXPECT_EQ(got, ref);
}

TEST(Densify, UsesLinearLayout) {
    const auto g = make_sparse_grid({1, 1, 2}, 0.2F, {{{0, 0, 1}, kCar}});
    EXPECT_EQ(densify(g, kTax), (std::vector<ClassId>{0, kCar}));
    const auto e = make_sparse_grid({2, 1, 2}, 0.2F, {}, {{1, 0, 0}});
    EXPECT_EQ(densify(e, kTax), (std::vector<ClassId>{0, 0, kTax.unlabeled_id(), 0}));
}

TEST(Densify, SparsifyRoundtripsRandomGrids) {
    Rng rng(12);
    for (int t = 0; t < 100; ++t) {
        const Dims dims{static_cast<std::int32_t>(psc::testing::randint(rng, 1, 6)),
                        static_cast<std::int32_t>(psc::testing::randint(rng, 1, 6)),
                        static_cast<std::int32_t>(psc::testing::randint(rng, 1, 6))};
        const auto g = psc::testing::random_sparse_grid(rng, kTax, dims, 0.4, 0.1);
        const auto dense = densify(g, kTax);
        EXPECT_EQ(sparsify(dense, dims, g.voxel_size, kTax), g);
    }
}

TEST(Sparsify, RejectsWrongLength) {
    const std::vector<ClassId> dense(5, 0);
    EXPECT_THROW(sparsify(dense, {2, 2, 2}, 0.2F, kTax), InvalidArgument);
}

TEST(MajorityPool, EmptyBlockStaysEmpty) {
    const auto p = majority_pool(block({}), 2);
    EXPECT_EQ(p.dims, (Dims{1, 1, 1}));
    EXPECT_TRUE(p.sites.empty());
    EXPECT_TRUE(p.invalid.empty());
    EXPECT_FLOAT_EQ(p.voxel_size, 0.4F);
}

TEST(MajorityPool, MostFrequentClassWins) {
    const auto c = all_children();
    std::vector<LabeledSite> sites;
    for (int i = 0; i < 8; ++i) {
        sites.push_back({c[static_cast<std::size_t>(i)], i < 5 ? kRoad : kCar});
    }
    const auto p = majority_pool(block(sites), 2);
    ASSERT_EQ(p.sites.size(), 1U);
    EXPECT_EQ(p.sites[0].label, kRoad);
}

TEST(MajorityPool, NonEmptyBeatsEmpty) {
    const auto c = all_children();
    std::vector<LabeledSite> sites;
    for (std::size_t i = 0; i < 4; ++i) {
        sites.push_back({c[i], kRoad});
    }
    const auto p = majority_pool(block(sites), 2);
    ASSERT_EQ(p.sites.size(), 1U);
    EXPECT_EQ(p.sites[0].label, kRoad);

    const auto one = majority_pool(block({{c[7], kPerson}}), 2);
    ASSERT_EQ(one.sites.size(), 1U);
    EXPECT_EQ(one.sites[0].label, kPerson);
}

TEST(MajorityPool, TiesGoToSmallestId) {
    const auto c = all_children();
    const auto p = majority_pool(block({{c[0], kRoad}, {c[1], kRoad}, {c[2], kCar}, {c[3], kCar}}), 2);
    ASSERT_EQ(p.sites.size(), 1U);
    EXPECT_EQ(p.sites[0].label, kCar);
}

TEST(MajorityPool, InvalidChildrenDoNotVote) {
    const auto c = all_children();
    const std::vector<Coord> inv(c.begin() + 1, c.end());
    const auto p = majority_pool(block({{c[0], kCar}}, inv), 2);
    ASSERT_EQ(p.sites.size(), 1U);
    EXPECT_EQ(p.sites[0].label, kCar);
    EXPECT_TRUE(p.invalid.empty());

    const auto all_invalid = majority_pool(block({}, c), 2);
    EXPECT_TRUE(all_invalid.sites.empty());
    EXPECT_EQ(all_invalid.invalid, (std::vector<Coord>{{0, 0, 0}}));

    // Some invalid, rest empty: empty, not invalid.
    const auto partial = majority_pool(block({}, inv), 2);
    EXPECT_TRUE(partial.sites.empty());
    EXPECT_TRUE(partial.invalid.empty());
}

TEST(MajorityPool, FactorOneIsIdentity) {
    Rng rng(13);
    const auto g = psc::testing::random_sparse_grid(rng, kTax, {4, 4, 4}, 0.5, 0.1);
    EXPECT_EQ(majority_pool(g, 1), g);
}

TEST(MajorityPool, PooledLabelsOccurAmongChildren) {
    Rng rng(14);
    for (int t = 0; t < 30; ++t) {
        const auto g = psc::testing::random_sparse_grid(rng, kTax, {8, 8, 4}, 0.3, 0.2);
        for (int f : {2, 4}) {
            const auto p = majority_pool(g, f);
            const auto dense = densify(g, kTax);
            for (const auto& s : p.sites) {
                bool found = false;
                for (std::int32_t dx = 0; dx < f; ++dx) {
                    for (std::int32_t dy = 0; dy < f; ++dy) {
                        for (std::int32_t dz = 0; dz < f; ++dz) {
                            const Coord child{s.coord.x * f + dx, s.coord.y * f + dy, s.coord.z * f + dz};
                            found = found || dense[g.dims.linear_index(child)] == s.label;
                        }
                    }
                }
                EXPECT_TRUE(found);
            }
        }
    }
}

TEST(MajorityPool, RejectsBadFactors) {
    const auto g = make_sparse_grid({4, 4, 6}, 0.2F, {});
    EXPECT_THROW(majority_pool(g, 3), InvalidArgument);
    EXPECT_THROW(majority_pool(g, 4), InvalidArgument);
    EXPECT_THROW(majority_pool(g, 0), InvalidArgument);
    EXPECT_NO_THROW(majority_pool(g, 2));
}
