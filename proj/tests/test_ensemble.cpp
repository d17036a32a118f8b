#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "psc/ensemble.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace psc;
using psc::testing::Rng;

namespace {

const ClassTaxonomy kTax = psc::testing::small_taxonomy();

// Two queries over three sites, distinct masks.
MaskSet two_query_set() {
    return MaskSet{{1, 1, 3},
                   0.2F,
                   {{0, 0, 0}, {0, 0, 1}, {0, 0, 2}},
                   2,
                   2,
                   {0.8, 0.1, 0.1, 0.2, 0.7, 0.1},
                   {0.9, 0.8, 0.0, 0.0, 0.1, 0.95}};
}

std::vector<std::size_t> random_order(Rng& rng, std::size_t k) {
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

// Instance ids renumbered by first appearance so assemblies can be compared
// up to relabeling.
PanopticGrid canonical_instances(PanopticGrid g) {
    std::map<InstanceId, InstanceId> renum;
    for (auto& s : g.sites) {
        if (s.instance == 0) {
            continue;
        }
        const auto [it, fresh] = renum.try_emplace(s.instance, static_cast<InstanceId>(renum.size() + 1));
        s.instance = it->second;
    }
    return g;
}

} // namespace

TEST(AlignPair, IdentityWhenEqual) {
    const auto a = two_query_set();
    EXPECT_EQ(align_pair(a, a), a);
}

TEST(AlignPair, RecoversReversedQueries) {
    const auto a = two_query_set();
    const std::vector<std::size_t> rev{1, 0};
    const auto b = permute_queries(a, rev);
    EXPECT_NE(b, a);
    EXPECT_EQ(solve_assignment(soft_iou_cost(a, b)).mapping, rev);
    EXPECT_EQ(align_pair(a, b), a);
}

TEST(AlignPair, ExtendsSupportToUnion) {
    const MaskSet ref{{1, 1, 3}, 0.2F, {{0, 0, 0}, {0, 0, 1}}, 1, 1, {0.9, 0.1}, {1.0, 0.5}};
    const MaskSet other{{1, 1, 3}, 0.2F, {{0, 0, 1}, {0, 0, 2}}, 1, 1, {0.6, 0.4}, {0.3, 0.7}};
    const auto out = align_pair(ref, other);
    EXPECT_EQ(out.sites, (std::vector<Coord>{{0, 0, 0}, {0, 0, 1}, {0, 0, 2}}));
    EXPECT_EQ(out.mask_scores, (std::vector<double>{0.0, 0.3, 0.7}));
}

TEST(AlignPair, MatchesBruteForceAssignment) {
    Rng rng(31);
    for (int t = 0; t < 40; ++t) {
        const auto a = psc::testing::random_maskset(rng, {4, 4, 4}, 30, 5, 3);
        const auto b = psc::testing::random_maskset(rng, {4, 4, 4}, 30, 5, 3);
        const auto best = brute_force_assignment(soft_iou_cost(a, b)).mapping;
        const auto expected = permute_queries(extend_support(b, union_sites(a.sites, b.sites)), best);
        EXPECT_EQ(align_pair(a, b), expected);
    }
}

TEST(AlignPair, RejectsMismatchedShapes) {
    const auto a = two_query_set();
    auto b = a;
    b.dims = {2, 1, 3};
    EXPECT_THROW(align_pair(a, b), InvalidArgument);
    EXPECT_THROW(align_pair(a, pad_to(a, 3)), InvalidArgument);
}

TEST(Ensemble, MeanOfAlignedRows) {
    const MaskSet a{{1, 1, 1}, 0.2F, {{0, 0, 0}}, 1, 1, {0.8, 0.2}, {1.0}};
    const MaskSet b{{1, 1, 1}, 0.2F, {{0, 0, 0}}, 1, 1, {0.6, 0.4}, {0.5}};
    const std::vector<MaskSet> sets{a, b};
    const auto out = ensemble(sets);
    EXPECT_NEAR(out.class_probs[0], 0.7, 1e-15);
    EXPECT_NEAR(out.class_probs[1], 0.3, 1e-15);
    EXPECT_NEAR(out.mask_scores[0], 0.75, 1e-15);
}

TEST(Ensemble, SingleSetIsReturnedUnchanged) {
    Rng rng(32);
    const std::vector<MaskSet> one{psc::testing::random_maskset(rng, {5, 5, 5}, 40, 6, 4)};
    EXPECT_EQ(ensemble(one), one.front());
}

TEST(Ensemble, IdenticalSetsReproduceInput) {
    Rng rng(33);
    const auto a = psc::testing::structured_maskset(rng, kTax, {6, 6, 6}, 8, 6);
    const std::vector<MaskSet> sets(4, a);
    const auto out = ensemble(sets);
    ASSERT_EQ(out.sites, a.sites);
    for (std::size_t i = 0; i < a.class_probs.size(); ++i) {
        EXPECT_NEAR(out.class_probs[i], a.class_probs[i], 1e-12);
    }
    for (std::size_t i = 0; i < a.mask_scores.size(); ++i) {
        EXPECT_NEAR(out.mask_scores[i], a.mask_scores[i], 1e-12);
    }
}

TEST(Ensemble, EmptySequenceThrows) {
    EXPECT_THROW(ensemble(std::vector<MaskSet>{}), InvalidArgument);
}

TEST(Ensemble, PermutedCopiesAssembleLikeTheOriginal) {
    Rng rng(34);
    for (int t = 0; t < 10; ++t) {
        const std::size_t k = static_cast<std::size_t>(psc::testing::randint(rng, 2, 12));
        const auto a = psc::testing::structured_maskset(rng, kTax, {8, 8, 8}, k, 8);
        std::vector<MaskSet> sets;
        for (int m = 0; m < 3; ++m) {
            sets.push_back(permute_queries(a, random_order(rng, k)));
        }
        const auto out = ensemble(sets);
        EXPECT_EQ(canonical_instances(assemble_panoptic(out, kTax)), canonical_instances(assemble_panoptic(a, kTax)))
            << "case " << t;
    }
}

TEST(Ensemble, InvariantToPermutingOneInput) {
    Rng rng(35);
    for (int t = 0; t < 10; ++t) {
        const auto a = psc::testing::structured_maskset(rng, kTax, {6, 6, 6}, 6, 6);
        const auto b = psc::testing::structured_maskset(rng, kTax, {6, 6, 6}, 6, 6);
        const std::vector<MaskSet> plain{a, b};
        const std::vector<MaskSet> shuffled{a, permute_queries(b, random_order(rng, 6))};
        const auto c = soft_iou_cost(a, b);
        // Only meaningful when the optimum is unique.
        const auto best = solve_assignment(c);
        bool unique = true;
        std::vector<std::size_t> perm(6);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        do {
            if (perm != best.mapping && assignment_cost(c, perm) == best.total_cost) {
                unique = false;
            }
        } while (unique && std::next_permutation(perm.begin(), perm.end()));
        if (unique) {
            EXPECT_EQ(ensemble(plain), ensemble(shuffled));
        }
    }
}

TEST(Ensemble, RowsStayOnSimplexAndScoresInRange) {
    Rng rng(36);
    for (int t = 0; t < 20; ++t) {
        std::vector<MaskSet> sets;
        for (int m = 0; m < 3; ++m) {
            sets.push_back(psc::testing::random_maskset(rng, {4, 4, 4}, 25, 5, 3));
        }
        const auto out = ensemble(sets);
        EXPECT_NO_THROW(validate(out));
        for (std::size_t q = 0; q < out.queries; ++q) {
            const auto row = out.probs(q);
            EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-6);
        }
        for (double m : out.mask_scores) {
            EXPECT_GE(m, 0.0);
            EXPECT_LE(m, 1.0);
        }
    }
}

TEST(Ensemble, SoftAndHardAgreeOnBinaryMasks) {
    Rng rng(37);
    for (int t = 0; t < 20; ++t) {
        std::vector<MaskSet> sets;
        for (int m = 0; m < 3; ++m) {
            auto s = psc::testing::random_maskset(rng, {4, 4, 4}, 30, 5, 3);
            for (auto& v : s.mask_scores) {
                v = v >= 0.5 ? 1.0 : 0.0;
            }
            sets.push_back(s);
        }
        EXPECT_EQ(soft_iou_cost(sets[0], sets[1]), hard_iou_cost(sets[0], sets[1]));
        const auto soft = ensemble(sets, {CostMode::soft, 0.5, 1});
        const auto hard = ensemble(sets, {CostMode::hard, 0.5, 1});
        EXPECT_EQ(soft, hard);
    }
}

TEST(Ensemble, ThreadCountDoesNotChangeOutput) {
    Rng rng(38);
    std::vector<MaskSet> sets;
    for (int m = 0; m < 6; ++m) {
        sets.push_back(psc::testing::random_maskset(rng, {6, 6, 6}, 80, 8, 4));
    }
    const auto one = ensemble(sets, {CostMode::soft, 0.5, 1});
    EXPECT_EQ(ensemble(sets, {CostMode::soft, 0.5, 4}), one);
    EXPECT_EQ(ensemble(sets, {CostMode::soft, 0.5, 0}), one);
}
