#include <gtest/gtest.h>

#include "semivox/augment.hpp"
#include "testutil.hpp"

using namespace semivox;

TEST(WeakAug, FullCropWithoutFlipsIsIdentity) {
    RngEngine eng = make_engine(1);
    Volume v = testutil::random_volume({4, 5, 6}, eng);
    WeakAugOptions opts;
    opts.flips_enabled = false;
    WeakView view = apply_weak(v, nullptr, 99, v.dims, opts);
    EXPECT_EQ(view.image.data, v.data);
    EXPECT_EQ(view.record.origin, (Coord3{0, 0, 0}));
    EXPECT_FALSE(view.record.flip[0] || view.record.flip[1] || view.record.flip[2]);
}

TEST(WeakAug, DeterministicForFixedSeed) {
    RngEngine eng = make_engine(2);
    Volume v = testutil::random_volume({8, 9, 10}, eng);
    LabelMap l = testutil::random_labels({8, 9, 10}, 3, eng);
    WeakView a = apply_weak(v, &l, 1234, {4, 4, 4});
    WeakView b = apply_weak(v, &l, 1234, {4, 4, 4});
    EXPECT_EQ(a.image.data, b.image.data);
    EXPECT_EQ(a.labels->data, b.labels->data);
    EXPECT_EQ(a.record.origin, b.record.origin);
    for (int ax = 0; ax < 3; ++ax) EXPECT_EQ(a.record.flip[ax], b.record.flip[ax]);
}

TEST(WeakAug, RecordMapsOutputToInputCoordinates) {
    RngEngine eng = make_engine(3);
    Volume v = testutil::random_volume({9, 11, 7}, eng);
    LabelMap l = testutil::random_labels({9, 11, 7}, 5, eng);
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        WeakView view = apply_weak(v, &l, seed, {4, 6, 5});
        for (int trial = 0; trial < 100; ++trial) {
            Coord3 p{int(rng_index(eng, 4)), int(rng_index(eng, 6)), int(rng_index(eng, 5))};
            const Coord3 src = view.record.map_to_input(p);
            EXPECT_EQ(view.labels->at(p.d, p.h, p.w), l.at(src.d, src.h, src.w));
            EXPECT_EQ(view.image.at(p.d, p.h, p.w), v.at(src.d, src.h, src.w));
        }
    }
}

TEST(WeakAug, CropLargerThanVolumeNamesAxis) {
    Volume v = make_volume({4, 4, 4});
    try {
        apply_weak(v, nullptr, 0, {4, 5, 4});
        FAIL() << "expected crop error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos);
    }
}

TEST(StrongAug, GammaOneIsNormalizedIdentity) {
    RngEngine eng = make_engine(4);
    Volume v = testutil::random_volume({3, 4, 5}, eng, 0.2f, 0.9f);
    StrongView s = apply_strong(v, 7, {1.0, 1.0});
    EXPECT_DOUBLE_EQ(s.record.gamma, 1.0);
    const auto [mn, mx] = std::minmax_element(v.data.begin(), v.data.end());
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const float want = (v.data[i] - *mn) / (*mx - *mn);
        EXPECT_NEAR(s.image.data[i], want, 1e-6f);
    }
}

TEST(StrongAug, PreservesIntensityOrder) {
    RngEngine eng = make_engine(5);
    Volume v = testutil::random_volume({4, 4, 4}, eng);
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        StrongView s = apply_strong(v, seed, {0.7, 1.5});
        EXPECT_EQ(s.image.dims, v.dims);
        for (std::size_t i = 0; i < v.data.size(); ++i)
            for (std::size_t j = i + 1; j < v.data.size(); ++j)
                if (v.data[i] < v.data[j])
                    EXPECT_LE(s.image.data[i], s.image.data[j]);
    }
}

TEST(StrongAug, HandEvaluatedGammaTwo) {
    Volume v = make_volume({1, 1, 3});
    v.data = {0.0f, 0.25f, 1.0f};
    StrongView s = apply_strong(v, 0, {2.0, 2.0});
    EXPECT_NEAR(s.image.data[0], 0.0f, 1e-7f);
    EXPECT_NEAR(s.image.data[1], 0.0625f, 1e-6f);
    EXPECT_NEAR(s.image.data[2], 1.0f, 1e-7f);
}

TEST(StrongAug, ConstantInputDegradesToZeroView) {
    Volume v = make_volume({2, 2, 2}, 0.7f);
    StrongView s = apply_strong(v, 3, {0.7, 1.5});
    for (float x : s.image.data) EXPECT_EQ(x, 0.0f);
}

TEST(StrongAug, GammaDrawnWithinRangeAndLogged) {
    Volume v = make_volume({2, 2, 2});
    v.data = {0, 0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        StrongView s = apply_strong(v, seed, {0.7, 1.5});
        EXPECT_GE(s.record.gamma, 0.7);
        EXPECT_LE(s.record.gamma, 1.5);
    }
}
