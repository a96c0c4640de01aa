#include <gtest/gtest.h>

#include <sstream>

#include "semivox/losses.hpp"
#include "semivox/sampling.hpp"
#include "testutil.hpp"

using namespace semivox;

namespace {

ClassStats stats_from_counts(std::vector<std::uint64_t> counts) {
    ClassStats s;
    s.total_voxels = 0;
    for (auto c : counts) s.total_voxels += c;
    s.counts = std::move(counts);
    return s;
}

}  // namespace

TEST(ImbalanceRatios, SymmetricCounts) {
    auto r = imbalance_ratios(stats_from_counts({10, 10}));
    EXPECT_DOUBLE_EQ(r.ratios[0], 1.0);
    EXPECT_DOUBLE_EQ(r.ratios[1], 1.0);
}

TEST(ImbalanceRatios, HandEvaluated) {
    auto r = imbalance_ratios(stats_from_counts({1000, 100, 10}));
    EXPECT_NEAR(r.ratios[0], 0.01, 1e-12);
    EXPECT_NEAR(r.ratios[1], 0.1, 1e-12);
    EXPECT_NEAR(r.ratios[2], 1.0, 1e-12);
}

TEST(ImbalanceRatios, ZeroCountClassExcludedFromMin) {
    auto r = imbalance_ratios(stats_from_counts({10, 0}));
    EXPECT_DOUBLE_EQ(r.ratios[0], 1.0);
    EXPECT_DOUBLE_EQ(r.ratios[1], 0.0);
}

TEST(ImbalanceRatios, AllZeroRejected) {
    EXPECT_THROW(imbalance_ratios(stats_from_counts({0, 0})), std::invalid_argument);
}

TEST(BalancedDistribution, GammaZeroIsUniformOverSupport) {
    ImbalanceRatios r{{0.01, 0.1, 1.0}};
    auto p = balanced_distribution(r, 0.0);
    for (double v : p.probs) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);

    ImbalanceRatios with_zero{{0.5, 0.0, 1.0}};
    auto q = balanced_distribution(with_zero, 0.0);
    EXPECT_NEAR(q.probs[0], 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(q.probs[1], 0.0);
    EXPECT_NEAR(q.probs[2], 0.5, 1e-12);
}

TEST(BalancedDistribution, HandEvaluatedGammaOneAndTwo) {
    ImbalanceRatios r{{0.01, 0.1, 1.0}};
    auto p1 = balanced_distribution(r, 1.0);
    EXPECT_NEAR(p1.probs[0], 0.01 / 1.11, 1e-12);
    EXPECT_NEAR(p1.probs[1], 0.10 / 1.11, 1e-12);
    EXPECT_NEAR(p1.probs[2], 1.00 / 1.11, 1e-12);

    auto p2 = balanced_distribution(r, 2.0);
    EXPECT_NEAR(p2.probs[0], 0.0001 / 1.0101, 1e-12);
    EXPECT_NEAR(p2.probs[1], 0.01 / 1.0101, 1e-12);
    EXPECT_NEAR(p2.probs[2], 1.0 / 1.0101, 1e-12);
}

TEST(BalancedDistribution, SharperGammaFavorsRarest) {
    ImbalanceRatios r{{0.2, 0.6, 1.0}};
    for (double gamma : {0.5, 1.0, 2.0, 4.0}) {
        auto p = balanced_distribution(r, gamma);
        double sum = 0;
        for (double v : p.probs) {
            EXPECT_GE(v, 0.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
        const auto argmax = std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin();
        EXPECT_EQ(argmax, 2);  // the rarest class
    }
}

TEST(ProgressiveDistribution, Endpoints) {
    ImbalanceRatios r{{0.01, 0.1, 1.0}};
    auto bal = balanced_distribution(r, 1.0);
    MixSchedule sched{1.0, 2.0 / 3.0, 1500};

    auto p0 = progressive_distribution(bal, 0, sched);
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(p0.probs[c], bal.probs[c]);

    auto p_end = progressive_distribution(bal, 1000, sched);  // eta * E_max = 1000
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(p_end.probs[c], 1.0 / 3.0);
    auto p_past = progressive_distribution(bal, 1499, sched);
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(p_past.probs[c], 1.0 / 3.0);
}

TEST(ProgressiveDistribution, HandEvaluatedMidpoint) {
    ImbalanceRatios r{{0.01, 0.1, 1.0}};
    auto bal = balanced_distribution(r, 1.0);
    MixSchedule sched{1.0, 2.0 / 3.0, 1500};
    auto p = progressive_distribution(bal, 500, sched);
    EXPECT_NEAR(progress_alpha(500, sched), 0.5, 1e-12);
    EXPECT_NEAR(p.probs[0], 0.171171, 1e-6);
    EXPECT_NEAR(p.probs[1], 0.211712, 1e-6);
    EXPECT_NEAR(p.probs[2], 0.617117, 1e-6);
}

TEST(ProgressiveDistribution, EtaSentinels) {
    ImbalanceRatios r{{0.5, 1.0}};
    auto bal = balanced_distribution(r, 1.0);
    MixSchedule inf_sched{1.0, std::numeric_limits<double>::infinity(), 100};
    auto p = progressive_distribution(bal, 99, inf_sched);
    for (int c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(p.probs[c], bal.probs[c]);

    MixSchedule zero_sched{1.0, 0.0, 100};
    auto q = progressive_distribution(bal, 0, zero_sched);
    for (int c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(q.probs[c], 0.5);
}

TEST(ProgressiveDistribution, UniformDistanceNonIncreasing) {
    ImbalanceRatios r{{0.02, 0.3, 1.0, 0.15}};
    auto bal = balanced_distribution(r, 1.5);
    MixSchedule sched{1.5, 0.5, 200};
    auto uni = uniform_over_support(bal);
    double prev = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < 200; epoch += 5) {
        auto p = progressive_distribution(bal, epoch, sched);
        double l1 = 0, sum = 0;
        for (int c = 0; c < 4; ++c) {
            l1 += std::abs(p.probs[c] - uni.probs[c]);
            sum += p.probs[c];
            EXPECT_GE(p.probs[c], 0.0);
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
        EXPECT_LE(l1, prev + 1e-12);
        prev = l1;
    }
}

TEST(SampleCenter, PointMassReturnsThatClass) {
    RngEngine eng = make_engine(21);
    LabelMap labels = testutil::random_labels({4, 4, 4}, 3, eng);
    labels.data[9] = 2;  // ensure presence
    SamplingDistribution point{{0.0, 0.0, 1.0}};
    for (int i = 0; i < 20; ++i) {
        CenterSample s = sample_center(point, labels, eng);
        EXPECT_EQ(s.class_id, 2);
        EXPECT_EQ(labels.at(s.voxel.d, s.voxel.h, s.voxel.w), 2);
    }
}

TEST(SampleCenter, AbsentClassFallsBackToPresent) {
    LabelMap labels = make_label_map({2, 2, 2}, 2);  // all class 0, class 1 absent
    SamplingDistribution half{{0.5, 0.5}};
    RngEngine eng = make_engine(33);
    for (int i = 0; i < 50; ++i) {
        CenterSample s = sample_center(half, labels, eng);
        EXPECT_EQ(s.class_id, 0);
    }
}

TEST(SampleCenter, DeterministicGivenEngineState) {
    RngEngine eng1 = make_engine(5);
    RngEngine eng2 = make_engine(5);
    RngEngine data = make_engine(6);
    LabelMap labels = testutil::random_labels({5, 5, 5}, 4, data);
    SamplingDistribution p{{0.1, 0.2, 0.3, 0.4}};
    for (int i = 0; i < 10; ++i) {
        CenterSample a = sample_center(p, labels, eng1);
        CenterSample b = sample_center(p, labels, eng2);
        EXPECT_EQ(a.class_id, b.class_id);
        EXPECT_EQ(a.voxel, b.voxel);
    }
}

TEST(SampleCenter, NoSampleableClassRejected) {
    LabelMap labels = make_label_map({2, 2, 2}, 3);  // only class 0 present
    SamplingDistribution p{{0.0, 0.5, 0.5}};
    RngEngine eng = make_engine(1);
    EXPECT_THROW(sample_center(p, labels, eng), std::invalid_argument);
}

TEST(SampleCenter, EmpiricalFrequencyMatchesDistribution) {
    RngEngine eng = make_engine(99);
    SamplingDistribution p{{0.4, 0.3, 0.2, 0.1}};
    std::vector<std::uint64_t> hits(4, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++hits[draw_class(eng, p)];
    double l1 = 0;
    for (int c = 0; c < 4; ++c) l1 += std::abs(double(hits[c]) / n - p.probs[c]);
    EXPECT_LE(l1, 0.02);
}

TEST(CutmixPaste, FullPatchCopiesEverything) {
    RngEngine eng = make_engine(40);
    Volume lv = testutil::random_volume({4, 4, 4}, eng);
    LabelMap lg = testutil::random_labels({4, 4, 4}, 3, eng);
    Volume uv = testutil::random_volume({4, 4, 4}, eng);
    LabelMap ps = testutil::random_labels({4, 4, 4}, 3, eng);
    MixResult mix = cutmix_paste(lv, lg, uv, ps, {2, 2, 2}, PatchSpec{{4, 4, 4}});
    EXPECT_EQ(mix.image.data, lv.data);
    EXPECT_EQ(mix.target.data, lg.data);
    for (auto m : mix.mask) EXPECT_EQ(m, 1);
}

TEST(CutmixPaste, CornerCenterShiftsBoxWithoutShrinking) {
    RngEngine eng = make_engine(41);
    Volume lv = testutil::random_volume({8, 8, 8}, eng);
    LabelMap lg = testutil::random_labels({8, 8, 8}, 2, eng);
    Volume uv = testutil::random_volume({8, 8, 8}, eng);
    LabelMap ps = testutil::random_labels({8, 8, 8}, 2, eng);
    MixResult mix = cutmix_paste(lv, lg, uv, ps, {0, 0, 0}, PatchSpec{{4, 4, 4}});
    EXPECT_EQ(mix.box_origin, (Coord3{0, 0, 0}));
    EXPECT_EQ(mix.box_dims, (Dims3{4, 4, 4}));
    std::uint64_t inside = 0;
    for (auto m : mix.mask) inside += m;
    EXPECT_EQ(inside, 64u);
}

TEST(CutmixPaste, InsideOutsideIdentityExhaustive) {
    RngEngine eng = make_engine(42);
    for (int trial = 0; trial < 200; ++trial) {
        const Dims3 dims{8, 8, 8};
        Volume lv = testutil::random_volume(dims, eng);
        LabelMap lg = testutil::random_labels(dims, 4, eng);
        Volume uv = testutil::random_volume(dims, eng);
        LabelMap ps = testutil::random_labels(dims, 4, eng);
        const Coord3 center{int(rng_index(eng, 8)), int(rng_index(eng, 8)), int(rng_index(eng, 8))};
        const PatchSpec patch{{1 + int(rng_index(eng, 8)), 1 + int(rng_index(eng, 8)),
                               1 + int(rng_index(eng, 8))}};
        MixResult mix = cutmix_paste(lv, lg, uv, ps, center, patch);
        std::uint64_t inside = 0;
        for (std::int64_t i = 0; i < dims.voxels(); ++i) {
            if (mix.mask[i]) {
                ++inside;
                ASSERT_EQ(mix.image.data[i], lv.data[i]);
                ASSERT_EQ(mix.target.data[i], lg.data[i]);
            } else {
                ASSERT_EQ(mix.image.data[i], uv.data[i]);
                ASSERT_EQ(mix.target.data[i], ps.data[i]);
            }
        }
        ASSERT_EQ(inside, std::uint64_t(patch.dims.voxels()));
    }
}

TEST(CutmixPaste, PatchLargerThanVolumeRejected) {
    Volume lv = make_volume({4, 4, 4});
    LabelMap lg = make_label_map({4, 4, 4}, 2);
    EXPECT_THROW(cutmix_paste(lv, lg, lv, lg, {0, 0, 0}, PatchSpec{{5, 4, 4}}),
                 std::invalid_argument);
}

TEST(ScheduleCsv, RowCountAndHeader) {
    ImbalanceRatios r{{0.25, 1.0}};
    auto bal = balanced_distribution(r, 1.0);
    MixSchedule sched{1.0, 0.5, 12};
    std::ostringstream os;
    write_schedule_csv(os, bal, sched);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "epoch,alpha,p0,p1");
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 12);
}
