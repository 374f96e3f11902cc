#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "affectvlm/affectloss.hpp"
#include "affectvlm/gradcheck.hpp"
#include "fixtures.hpp"

using namespace avlm;

namespace {

Mat random_unit_columns(int d, int n, std::uint64_t seed) {
    Rng rng{seed};
    Mat E(d, n);
    for (Eigen::Index i = 0; i < E.size(); ++i) E.data()[i] = rng.uniform(-1, 1);
    E.colwise().normalize();
    return E;
}

Vec unit(int d, int i) {
    Vec v = Vec::Zero(d);
    v[i] = 1;
    return v;
}

// Two samples of different emotions, three views each.
std::vector<BatchItem> two_sample_batch() {
    std::vector<BatchItem> items;
    for (std::uint32_t s = 0; s < 2; ++s)
        for (auto v : kAllViews) items.push_back({s == 0 ? Emotion::happy : Emotion::sad, v, s});
    return items;
}

// Random batch: n samples with three views and two prompts each.
std::pair<std::vector<BatchItem>, Mat> random_batch(std::size_t n, std::uint64_t seed) {
    std::vector<BatchItem> items;
    for (std::uint32_t s = 0; s < n; ++s)
        for (auto v : kAllViews) items.push_back({kAllEmotions[s % kNumEmotions], v, s});
    for (std::uint32_t s = 0; s < n; ++s)
        for (int k = 0; k < 2; ++k) items.push_back({kAllEmotions[s % kNumEmotions], std::nullopt, s});
    return {items, random_unit_columns(8, static_cast<int>(items.size()), seed)};
}

}  // namespace

TEST(Similarity, Identities) {
    const Vec a = unit(4, 0), b = unit(4, 1);
    EXPECT_EQ(similarity(a, a, SimilarityKind::cosine), 1.0);
    EXPECT_EQ(similarity(a, b, SimilarityKind::cosine), 0.0);
    EXPECT_DOUBLE_EQ(similarity(a, b, SimilarityKind::negative_euclidean), -std::sqrt(2.0));
    EXPECT_EQ(parse_similarity("negative-euclidean"), SimilarityKind::negative_euclidean);
    EXPECT_THROW(parse_similarity("l1"), InvalidInput);
}

TEST(MinePairs, CountsForTwoSamples) {
    const auto items = two_sample_batch();
    const auto pairs = mine_pairs(items, 1);
    EXPECT_EQ(pairs.positives.size(), 6u);
    EXPECT_EQ(pairs.negatives.size(), 9u);
    EXPECT_EQ(pairs.triplets.size(), 2u);
}

TEST(MinePairs, LabelPartitionAndTripletRoles) {
    const auto [items, E] = random_batch(7, 2);
    const auto pairs = mine_pairs(items, 3);
    std::set<std::pair<std::size_t, std::size_t>> pos(pairs.positives.begin(), pairs.positives.end());
    for (const auto& [i, j] : pairs.positives) {
        EXPECT_NE(i, j);
        EXPECT_EQ(items[i].emotion, items[j].emotion);
    }
    for (const auto& pr : pairs.negatives) {
        EXPECT_NE(items[pr.first].emotion, items[pr.second].emotion);
        EXPECT_FALSE(pos.count(pr));
        EXPECT_FALSE(items[pr.first].is_text() && items[pr.second].is_text());
    }
    EXPECT_EQ(pairs.triplets.size(), 7u);
    for (const auto& t : pairs.triplets) {
        EXPECT_EQ(items[t.anchor].view, ViewName::frontal);
        EXPECT_EQ(items[t.anchor].emotion, items[t.positive].emotion);
        EXPECT_NE(items[t.anchor].emotion, items[t.negative].emotion);
        EXPECT_NE(t.anchor, t.positive);
    }
    const auto again = mine_pairs(items, 3);
    EXPECT_EQ(again.triplets, pairs.triplets);
    EXPECT_EQ(again.positives, pairs.positives);
}

TEST(MinePairs, SingleEmotionIsProtocolError) {
    std::vector<BatchItem> items;
    for (auto v : kAllViews) items.push_back({Emotion::fear, v, 0});
    EXPECT_THROW(mine_pairs(items, 1), ProtocolError);
}

TEST(Loss, ScalarFixtureTotals) {
    // Columns: 0,1 positive pair with cos 0.5; 2,3 negative pair with cos 0.9;
    // triplet (e1, e2, e1).
    Mat E = Mat::Zero(3, 6);
    E.col(0) = unit(3, 0);
    E.col(1) << 0.5, std::sqrt(0.75), 0;
    E.col(2) = unit(3, 0);
    E.col(3) << 0.9, std::sqrt(1 - 0.81), 0;
    E.col(4) = unit(3, 0);
    E.col(5) = unit(3, 1);
    BatchPairs pairs;
    pairs.positives = {{0, 1}};
    pairs.negatives = {{2, 3}};
    pairs.triplets = {{4, 5, 4}};
    const auto b = loss_forward(E, pairs, 0.2, SimilarityKind::cosine);
    EXPECT_NEAR(b.l_mc_pos, 0.5, 1e-15);
    EXPECT_NEAR(b.l_mc_neg, 0.7, 1e-15);
    EXPECT_NEAR(b.l_mt, 2.2, 1e-15);
    EXPECT_NEAR(b.total, 3.4, 1e-15);
    EXPECT_EQ(b.active_neg_pairs, 1u);
    EXPECT_EQ(b.active_triplets, 1u);
}

TEST(Loss, InactiveTripletIsZero) {
    Mat E(2, 2);
    E.col(0) = unit(2, 0);
    E.col(1) = unit(2, 1);
    BatchPairs pairs;
    pairs.triplets = {{0, 0, 1}};
    const auto r = evaluate_loss(E, pairs, 0.5);
    EXPECT_EQ(r.breakdown.l_mt, 0.0);
    EXPECT_EQ(r.d_alpha, 0.0);
    EXPECT_EQ(r.d_embeddings, Mat::Zero(2, 2));
}

TEST(Loss, AllFloorsGiveExactZero) {
    // Two emotions on orthogonal axes; every view of an emotion identical.
    const auto items = two_sample_batch();
    Mat E(4, 6);
    for (int j = 0; j < 6; ++j) E.col(j) = unit(4, j < 3 ? 0 : 1);
    const auto pairs = mine_pairs(items, 1);
    const auto r = evaluate_loss(E, pairs, 0.2);
    EXPECT_EQ(r.breakdown.l_mc_pos, 0.0);
    EXPECT_EQ(r.breakdown.l_mc_neg, 0.0);
    EXPECT_EQ(r.breakdown.l_mt, 0.0);
    EXPECT_EQ(r.breakdown.total, 0.0);
    EXPECT_EQ(r.d_alpha, 0.0);
}

TEST(Loss, AlphaGradientCountsActiveHinges) {
    // Three active negative pairs and one active triplet.
    Mat E(2, 4);
    E.col(0) = unit(2, 0);
    E.col(1) << std::cos(0.1), std::sin(0.1);
    E.col(2) << std::cos(0.2), std::sin(0.2);
    E.col(3) = unit(2, 1);
    BatchPairs pairs;
    pairs.negatives = {{0, 1}, {0, 2}, {1, 2}, {0, 3}};
    pairs.triplets = {{0, 3, 1}, {0, 1, 3}};
    const auto r = evaluate_loss(E, pairs, 0.2);
    EXPECT_EQ(r.breakdown.active_neg_pairs, 3u);
    EXPECT_EQ(r.breakdown.active_triplets, 1u);
    EXPECT_EQ(r.d_alpha, -2.0);
}

TEST(Loss, InactiveNegativesContributeNoGradient) {
    Mat E(2, 2);
    E.col(0) = unit(2, 0);
    E.col(1) = unit(2, 1);
    BatchPairs pairs;
    pairs.negatives = {{0, 1}};
    const auto r = evaluate_loss(E, pairs, 0.2);
    EXPECT_EQ(r.d_embeddings, Mat::Zero(2, 2));
    EXPECT_EQ(r.d_alpha, 0.0);
}

TEST(Loss, ComponentsNonNegativeAndSumToTotal) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto [items, E] = random_batch(6, s);
        const auto b = loss_forward(E, mine_pairs(items, s), 0.3, SimilarityKind::cosine);
        EXPECT_GE(b.l_mc_pos, 0.0);
        EXPECT_GE(b.l_mc_neg, 0.0);
        EXPECT_GE(b.l_mt, 0.0);
        EXPECT_DOUBLE_EQ(b.total, b.l_mc_pos + b.l_mc_neg + b.l_mt);
    }
}

TEST(Loss, RotationInvariance) {
    const auto [items, E] = random_batch(6, 11);
    const auto pairs = mine_pairs(items, 4);
    const Mat Q = Eigen::HouseholderQR<Mat>(random_unit_columns(8, 8, 99)).householderQ();
    for (auto kind : {SimilarityKind::cosine, SimilarityKind::negative_euclidean}) {
        const auto a = loss_forward(E, pairs, 0.3, kind);
        const auto b = loss_forward(Mat(Q * E), pairs, 0.3, kind);
        EXPECT_NEAR(a.l_mc_pos, b.l_mc_pos, 1e-10);
        EXPECT_NEAR(a.l_mc_neg, b.l_mc_neg, 1e-10);
        EXPECT_NEAR(a.l_mt, b.l_mt, 1e-10);
    }
}

TEST(Loss, TripletTermViaSimilarityAgrees) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto [items, E] = random_batch(6, 100 + s);
        const auto pairs = mine_pairs(items, s);
        const double direct = loss_forward(E, pairs, 0.25, SimilarityKind::cosine).l_mt;
        EXPECT_NEAR(direct, triplet_term_via_similarity(E, pairs, 0.25), 1e-12);
    }
}

TEST(Loss, EmbeddingAndAlphaGradientsMatchFiniteDifferences) {
    for (auto kind : {SimilarityKind::cosine, SimilarityKind::negative_euclidean})
        for (double tau : {0.0, 0.05}) {
            const auto [items, E0] = random_batch(6, 21);
            Mat E = E0;
            const auto pairs = mine_pairs(items, 5);
            const double alpha = 0.3, h = 1e-5;
            const LossOptions opt{kind, tau};
            const auto r = evaluate_loss(E, pairs, alpha, opt);
            double worst = 0;
            for (Eigen::Index i = 0; i < E.size(); ++i) {
                const double v = E.data()[i];
                E.data()[i] = v + h;
                const double up = evaluate_loss(E, pairs, alpha, opt).breakdown.total;
                E.data()[i] = v - h;
                const double down = evaluate_loss(E, pairs, alpha, opt).breakdown.total;
                E.data()[i] = v;
                worst = std::max(worst, relative_error(r.d_embeddings.data()[i], (up - down) / (2 * h)));
            }
            const double da = (evaluate_loss(E, pairs, alpha + h, opt).breakdown.total -
                               evaluate_loss(E, pairs, alpha - h, opt).breakdown.total) /
                              (2 * h);
            EXPECT_LE(worst, 1e-4) << to_string(kind) << " tau " << tau;
            EXPECT_LE(relative_error(r.d_alpha, da), 1e-4);
        }
}

TEST(SmoothLoss, ConvergesToHinge) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto [items, E] = random_batch(6, 300 + s);
        const auto pairs = mine_pairs(items, s);
        const double exact = loss_forward(E, pairs, 0.3, SimilarityKind::cosine).total;
        const double smooth = smooth_variant(E, pairs, 0.3, 1e-4).total;
        EXPECT_NEAR(smooth, exact, 1e-3);
        EXPECT_GE(smooth, exact);
    }
}

TEST(SmoothLoss, PositiveAtKink) {
    Mat E(2, 2);
    E.col(0) = unit(2, 0);
    E.col(1) << 0.3, std::sqrt(1 - 0.09);
    BatchPairs pairs;
    pairs.negatives = {{0, 1}};
    const double tau = 0.01;
    EXPECT_NEAR(smooth_variant(E, pairs, 0.3, tau).l_mc_neg, tau * std::log(2.0), 1e-12);
    EXPECT_THROW(smooth_variant(E, pairs, 0.3, 0.0), InvalidInput);
    EXPECT_THROW(smooth_variant(E, pairs, 0.3, -1.0), InvalidInput);
}
