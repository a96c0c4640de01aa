#include <gtest/gtest.h>

#include "semivox/losses.hpp"
#include "testutil.hpp"

using namespace semivox;

TEST(SegLoss, PeakedLogitsNearZero) {
    RngEngine eng = make_engine(1);
    LabelMap target = testutil::random_labels({2, 2, 2}, 3, eng);
    Tensor4 logits = make_tensor(3, {2, 2, 2});
    const std::int64_t n = logits.spatial();
    for (std::int64_t i = 0; i < n; ++i)
        logits.v[target.data[i] * n + i] = 20.0f;  // margin 20 on the target class
    EXPECT_LE(seg_loss(logits, target), 1e-6);
}

TEST(SegLoss, UniformLogitsMatchHandComputation) {
    // 2x2x2, C = 2, three voxels of class 1. Uniform logits give p = 0.5
    // everywhere, CE = ln 2, and the Dice terms follow in closed form.
    LabelMap target = make_label_map({2, 2, 2}, 2);
    target.data[0] = target.data[3] = target.data[5] = 1;
    Tensor4 logits = make_tensor(2, {2, 2, 2});  // all zero -> uniform softmax
    const double eps = 1e-5;
    const double dice0 = (2.0 * 0.5 * 5.0 + eps) / (0.5 * 8.0 + 5.0 + eps);
    const double dice1 = (2.0 * 0.5 * 3.0 + eps) / (0.5 * 8.0 + 3.0 + eps);
    const double want = 0.5 * (1.0 - 0.5 * (dice0 + dice1)) + 0.5 * std::log(2.0);
    EXPECT_NEAR(seg_loss(logits, target), want, 1e-9);
}

TEST(SegLoss, EmptyKeepMaskGivesZero) {
    RngEngine eng = make_engine(2);
    LabelMap target = testutil::random_labels({2, 2, 2}, 2, eng);
    Tensor4 logits = testutil::random_tensor(2, {2, 2, 2}, eng);
    std::vector<std::uint8_t> keep(8, 0);
    Tensor4 grad;
    EXPECT_EQ(seg_loss(logits, target, keep, &grad), 0.0);
    for (float g : grad.v) EXPECT_EQ(g, 0.0f);
}

TEST(SegLoss, MaskRestrictsBothTerms) {
    RngEngine eng = make_engine(3);
    LabelMap target = testutil::random_labels({2, 2, 2}, 2, eng);
    Tensor4 logits = testutil::random_tensor(2, {2, 2, 2}, eng);
    std::vector<std::uint8_t> keep(8, 1);
    const double full = seg_loss(logits, target, keep);
    EXPECT_DOUBLE_EQ(full, seg_loss(logits, target));

    // restricting to one voxel must match an explicit 1-voxel instance
    std::fill(keep.begin(), keep.end(), 0);
    keep[5] = 1;
    const double masked = seg_loss(logits, target, keep);
    Tensor4 one = make_tensor(2, {1, 1, 1});
    one.v = {logits.v[5], logits.v[8 + 5]};
    LabelMap tone = make_label_map({1, 1, 1}, 2);
    tone.data[0] = target.data[5];
    EXPECT_NEAR(masked, seg_loss(one, tone), 1e-12);
}

TEST(SegLoss, NonNegativeOnRandomInstances) {
    RngEngine eng = make_engine(4);
    for (int trial = 0; trial < 50; ++trial) {
        const int C = 2 + int(rng_index(eng, 3));
        LabelMap target = testutil::random_labels({2, 2, 2}, C, eng);
        Tensor4 logits = testutil::random_tensor(C, {2, 2, 2}, eng, -3.0f, 3.0f);
        EXPECT_GE(seg_loss(logits, target), 0.0);
    }
}

TEST(SegLoss, ShapeAndLabelValidation) {
    LabelMap target = make_label_map({2, 2, 2}, 2);
    Tensor4 wrong = make_tensor(2, {2, 2, 3});
    EXPECT_THROW(seg_loss(wrong, target), std::invalid_argument);
    Tensor4 logits = make_tensor(2, {2, 2, 2});
    target.data[0] = 2;  // >= channel count
    EXPECT_THROW(seg_loss(logits, target), std::invalid_argument);
}

TEST(SegLoss, GradientMatchesFiniteDifferences) {
    RngEngine eng = make_engine(5);
    for (int trial = 0; trial < 4; ++trial) {
        LabelMap target = testutil::random_labels({2, 2, 2}, 2, eng);
        Tensor4 logits = testutil::random_tensor(2, {2, 2, 2}, eng, -2.0f, 2.0f);
        std::vector<std::uint8_t> keep(8, 1);
        if (trial % 2 == 1)
            for (auto& k : keep) k = rng_index(eng, 2) ? 1 : 0;
        keep[0] = 1;  // never fully empty
        Tensor4 grad;
        seg_loss(logits, target, keep, &grad);
        auto loss = [&]() { return seg_loss(logits, target, keep); };
        for (std::size_t j = 0; j < logits.v.size(); ++j) {
            const double numeric = testutil::central_diff(logits.v[j], loss, 1e-3);
            EXPECT_LE(testutil::rel_err(grad.v[j], numeric), 1e-4)
                << "trial " << trial << " slot " << j;
        }
    }
}

TEST(AuxKeepMask, AllOnesWhenRatiosAreOne) {
    RngEngine data = make_engine(6), mask_eng = make_engine(7);
    LabelMap target = testutil::random_labels({4, 4, 4}, 3, data);
    ImbalanceRatios ratios{{1.0, 1.0, 1.0}};
    auto mask = aux_keep_mask(target, ratios, mask_eng);
    for (auto m : mask) EXPECT_EQ(m, 1);
}

TEST(AuxKeepMask, KeepFractionTracksRatio) {
    LabelMap target = make_label_map({50, 50, 40}, 2);  // 100k voxels, all class 0
    ImbalanceRatios ratios{{0.5, 1.0}};
    RngEngine eng = make_engine(8);
    auto mask = aux_keep_mask(target, ratios, eng);
    double kept = 0;
    for (auto m : mask) kept += m;
    EXPECT_NEAR(kept / mask.size(), 0.5, 0.01);
}

TEST(AuxKeepMask, RarestClassAlwaysKeptAndDeterministic) {
    RngEngine data = make_engine(9);
    LabelMap target = testutil::random_labels({6, 6, 6}, 3, data);
    ImbalanceRatios ratios{{0.02, 0.3, 1.0}};
    RngEngine e1 = make_engine(10), e2 = make_engine(10);
    auto m1 = aux_keep_mask(target, ratios, e1);
    auto m2 = aux_keep_mask(target, ratios, e2);
    EXPECT_EQ(m1, m2);
    for (std::size_t i = 0; i < m1.size(); ++i)
        if (target.data[i] == 2) EXPECT_EQ(m1[i], 1);
}

TEST(AuxKeepMask, UndefinedRatiosRejected) {
    LabelMap target = make_label_map({2, 2, 2}, 3);
    ImbalanceRatios ratios{{1.0, 0.5}};  // only two classes defined
    RngEngine eng = make_engine(11);
    EXPECT_THROW(aux_keep_mask(target, ratios, eng), std::invalid_argument);
}

TEST(TotalLoss, WeightingAndLinearity) {
    EXPECT_DOUBLE_EQ(total_loss(1, 1, 1, 1, 1, 0.5), 4.0);
    EXPECT_DOUBLE_EQ(total_loss(0, 0, 0, 0, 0, 0.5), 0.0);
    EXPECT_DOUBLE_EQ(total_loss(2, 3, 5, 7, 11, 0.0), 16.0);  // lambda = 0 drops unsup terms

    RngEngine eng = make_engine(12);
    for (int trial = 0; trial < 20; ++trial) {
        double c[5];
        for (double& x : c) x = rng_uniform(eng, 0.0, 2.0);
        const double lambda = rng_uniform(eng, 0.0, 1.0);
        const double base = total_loss(c[0], c[1], c[2], c[3], c[4], lambda);
        EXPECT_NEAR(total_loss(c[0] + 1, c[1], c[2], c[3], c[4], lambda), base + 1.0, 1e-12);
        EXPECT_NEAR(total_loss(c[0], c[1], c[2] + 1, c[3], c[4], lambda), base + lambda, 1e-12);
    }
}

TEST(TotalLoss, NonFiniteTermNamed) {
    try {
        total_loss(1.0, std::nan(""), 0, 0, 0, 0.5);
        FAIL() << "expected error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("sup_aux"), std::string::npos);
    }
    try {
        total_loss(0, 0, 0, 0, std::numeric_limits<double>::infinity(), 0.5);
        FAIL() << "expected error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("distill"), std::string::npos);
    }
}

TEST(LossBreakdown, InvariantHolds) {
    LossBreakdown b = make_breakdown(0.1, 0.2, 0.3, 0.4, 0.5, 0.5);
    EXPECT_NEAR(b.total, b.sup + b.sup_aux + b.distill + 0.5 * (b.unsup + b.unsup_aux), 1e-12);
}
