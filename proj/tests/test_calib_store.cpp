#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include "calibdb/calib_store.hpp"
#include "calibdb/errors.hpp"
#include "support.hpp"

namespace calibdb {
namespace {

namespace fs = std::filesystem;
using testing::schedule_views;
using testing::temp_dir;
using testing::webcam_profile;

auto key_for(ImageSize size, double zoom = 0.0) -> CameraKey {
    return {"Integrated Webcam (0bda:58f4)", "Linux x86_64", size, zoom};
}

// Cheap record without running a calibration.
auto stub_record(ImageSize size, double fx = 1430.0) -> CalibrationRecord {
    CalibrationRecord r;
    r.key = key_for(size);
    r.result.intrinsics = {fx, fx, 0.5 * size.width, 0.5 * size.height};
    r.result.distortion = {DistortionModel::Rectilinear, {-0.1, 0.02, 0.0}};
    r.result.img_size = size;
    r.result.avg_reprojection_error = 0.2;
    r.result.per_view_poses = {Pose{}};
    r.result.n_views = 1;
    ViewObservation v;
    v.img_size = size;
    v.points = {{0, {10.0, 20.0}}, {1, {30.5, 40.25}}};
    r.keypoints = {v};
    return r;
}

auto real_record(const SimCameraProfile& p, std::uint64_t seed) -> CalibrationRecord {
    const BoardSpec b;
    CalibrationRecord r;
    r.key = p.camera_key;
    r.keypoints = schedule_views(p, b, 10, seed);
    r.result = calibrate(r.keypoints, b, p.distortion.model, p.img_size);
    r.board = b;
    return r;
}

class StoreTest : public ::testing::Test {
  protected:
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_ = temp_dir("store");
};

TEST_F(StoreTest, PutThenGet) {
    CalibStore store(dir_);
    const auto id = store.put_record(stub_record({1920, 1080}));
    const auto got = store.get_records(key_for({1920, 1080}), MatchMode::Exact);
    ASSERT_EQ(got.size(), 1u);
    EXPECT_EQ(got[0].record_id, id);
    EXPECT_FALSE(got[0].created_at.empty());
    EXPECT_EQ(got[0].keypoints[0].points[1].px, Point2(30.5, 40.25));
    EXPECT_TRUE(fs::exists(dir_ / "records" / (id + ".json")));
}

TEST_F(StoreTest, IdenticalPutsGetDistinctIds) {
    CalibStore store(dir_);
    const auto a = store.put_record(stub_record({1920, 1080}));
    const auto b = store.put_record(stub_record({1920, 1080}));
    EXPECT_NE(a, b);
    EXPECT_EQ(store.size(), 2u);
}

TEST_F(StoreTest, MismatchedImageSizeIsRejected) {
    CalibStore store(dir_);
    auto r = stub_record({1920, 1080});
    r.result.img_size = {1280, 720};
    try {
        (void)store.put_record(r);
        ADD_FAILURE();
    } catch (const CalibError& e) {
        EXPECT_EQ(e.code(), ErrorCode::PreconditionViolation);
    }
    EXPECT_EQ(store.size(), 0u);
}

TEST(ResolutionDistance, MatchesLogFormula) {
    EXPECT_NEAR(resolution_distance({1920, 1080}, {1280, 720}), std::log(1.5), 1e-12);
    EXPECT_NEAR(resolution_distance({1920, 1080}, {640, 480}),
                std::log(3.0) + std::log((16.0 / 9.0) / (4.0 / 3.0)), 1e-12);
    EXPECT_NEAR(resolution_distance({1920, 1080}, {1280, 720}), 0.405, 5e-4);
    EXPECT_NEAR(std::log(3.0), 1.099, 5e-4);
    EXPECT_DOUBLE_EQ(resolution_distance({1280, 720}, {2560, 1440}),
                     resolution_distance({1280, 720}, {640, 360}));
    EXPECT_EQ(resolution_distance({800, 600}, {800, 600}), 0.0);
}

TEST_F(StoreTest, ClosestResolutionPicksNearestSize) {
    CalibStore store(dir_);
    store.put_record(stub_record({1280, 720}));
    store.put_record(stub_record({1280, 720}));
    store.put_record(stub_record({640, 480}));
    const auto got = store.get_records(key_for({1920, 1080}), MatchMode::ClosestResolution);
    ASSERT_EQ(got.size(), 2u);
    for (const auto& r : got) {
        EXPECT_EQ(r.key.img_size, (ImageSize{1280, 720}));
    }
}

TEST_F(StoreTest, ClosestResolutionTiesGoToLargerSize) {
    CalibStore store(dir_);
    store.put_record(stub_record({640, 360}));
    store.put_record(stub_record({2560, 1440}));
    const auto got = store.get_records(key_for({1280, 720}), MatchMode::ClosestResolution);
    ASSERT_EQ(got.size(), 1u);
    EXPECT_EQ(got[0].key.img_size, (ImageSize{2560, 1440}));
}

TEST_F(StoreTest, ExactAndMissingKeys) {
    CalibStore store(dir_);
    store.put_record(stub_record({1280, 720}));
    store.put_record(stub_record({640, 480}));
    auto zoomed = stub_record({1280, 720});
    zoomed.key.zoom = 2.0;
    store.put_record(zoomed);

    const auto exact = store.get_records(key_for({640, 480}), MatchMode::Exact);
    ASSERT_EQ(exact.size(), 1u);
    EXPECT_EQ(exact[0].key, key_for({640, 480}));
    EXPECT_TRUE(store.get_records(key_for({1920, 1080}), MatchMode::Exact).empty());

    CameraKey other = key_for({1280, 720});
    other.camera = "Other Cam";
    EXPECT_TRUE(store.get_records(other, MatchMode::Exact).empty());
    EXPECT_TRUE(store.get_records(other, MatchMode::ClosestResolution).empty());
    const auto z = store.get_records(key_for({1920, 1080}, 2.0), MatchMode::ClosestResolution);
    ASSERT_EQ(z.size(), 1u);
    EXPECT_EQ(z[0].key.zoom, 2.0);
}

TEST_F(StoreTest, RecordsSurviveReopen) {
    std::string id;
    {
        CalibStore store(dir_);
        id = store.put_record(stub_record({1280, 720}, 1111.5));
    }
    CalibStore reopened(dir_);
    const auto got = reopened.get_records(key_for({1280, 720}), MatchMode::Exact);
    ASSERT_EQ(got.size(), 1u);
    EXPECT_EQ(got[0].record_id, id);
    EXPECT_EQ(got[0].result.intrinsics.fx, 1111.5);
    EXPECT_EQ(reopened.put_record(stub_record({1280, 720})).size(), id.size());
    EXPECT_EQ(reopened.size(), 2u);
}

TEST_F(StoreTest, CorruptDocumentFailsOpen) {
    fs::create_directories(dir_ / "records");
    std::ofstream(dir_ / "records" / "bad.json") << "{ not json";
    try {
        CalibStore store(dir_);
        ADD_FAILURE();
    } catch (const CalibError& e) {
        EXPECT_EQ(e.code(), ErrorCode::StorageFailure);
    }
}

TEST_F(StoreTest, ConcurrentWritersAndReaders) {
    CalibStore store(dir_);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&] {
            for (int i = 0; i < 10; ++i) {
                store.put_record(stub_record({1280, 720}));
                const auto got = store.get_records(key_for({1280, 720}), MatchMode::Exact);
                for (const auto& r : got) {
                    EXPECT_EQ(r.keypoints.size(), 1u);
                }
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    const auto all = store.get_records(key_for({1280, 720}), MatchMode::Exact);
    EXPECT_EQ(all.size(), 40u);
    std::set<std::string> ids;
    for (const auto& r : all) {
        ids.insert(r.record_id);
    }
    EXPECT_EQ(ids.size(), 40u);
}

TEST(Reliability, FiveIdenticalRecordsAreReliable) {
    const std::vector<CalibrationRecord> recs(5, stub_record({1920, 1080}));
    const auto rep = reliability(recs);
    EXPECT_TRUE(rep.reliable);
    EXPECT_EQ(rep.count, 5);
    EXPECT_EQ(rep.fx.stddev, 0.0);
    EXPECT_EQ(rep.fx.relative_spread, 0.0);
    EXPECT_EQ(rep.k[0].stddev, 0.0);
}

TEST(Reliability, FourRecordsAreNotEnough) {
    const std::vector<CalibrationRecord> recs(4, stub_record({1920, 1080}));
    EXPECT_FALSE(reliability(recs).reliable);
}

TEST(Reliability, FocalSpreadFails) {
    std::vector<CalibrationRecord> recs;
    const std::vector<double> fx{1300, 1350, 1430, 1500, 1560};
    for (double f : fx) {
        recs.push_back(stub_record({1920, 1080}, f));
    }
    double mean = 0.0;
    for (double f : fx) {
        mean += f / 5.0;
    }
    double var = 0.0;
    for (double f : fx) {
        var += (f - mean) * (f - mean) / 5.0;
    }
    const auto rep = reliability(recs);
    EXPECT_NEAR(rep.fx.mean, mean, 1e-9);
    EXPECT_NEAR(rep.fx.relative_spread, std::sqrt(var) / mean, 1e-12);
    EXPECT_GT(rep.fx.relative_spread, 0.06);
    EXPECT_FALSE(rep.reliable);
}

TEST(Reliability, PrincipalPointAndCoefficientGates) {
    std::vector<CalibrationRecord> recs(5, stub_record({1000, 800}));
    // Population std of {-a, a, -a, a, 0} is a * sqrt(4/5).
    const std::array<double, 5> sign{-1, 1, -1, 1, 0};
    const double a_ok = 9.9 / std::sqrt(0.8);
    const double a_bad = 10.1 / std::sqrt(0.8);
    for (std::size_t i = 0; i < 5; ++i) {
        recs[i].result.intrinsics.cx += sign[i] * a_ok;
    }
    EXPECT_TRUE(reliability(recs).reliable);
    for (std::size_t i = 0; i < 5; ++i) {
        recs[i].result.intrinsics.cx = 500.0 + sign[i] * a_bad;
    }
    EXPECT_FALSE(reliability(recs).reliable);

    recs.assign(5, stub_record({1000, 800}));
    for (std::size_t i = 0; i < 5; ++i) {
        recs[i].result.distortion.k[2] = sign[i] * 0.021 / std::sqrt(0.8);
    }
    EXPECT_FALSE(reliability(recs).reliable);
}

TEST(Reliability, AddingIdenticalRecordsNeverUnsettles) {
    std::vector<CalibrationRecord> recs;
    bool was = false;
    for (int n = 1; n <= 10; ++n) {
        recs.push_back(stub_record({1920, 1080}));
        const bool now = reliability(recs).reliable;
        EXPECT_FALSE(was && !now);
        was = now;
    }
    EXPECT_TRUE(was);
}

TEST(PooledResult, SingleRecordEqualsRefit) {
    const auto rec = real_record(webcam_profile(0.2), 1);
    const std::vector<CalibrationRecord> recs{rec};
    const auto pooled = pooled_result(recs, rec.board, DistortionModel::Rectilinear);
    const auto direct = refit(rec.keypoints, rec.board, DistortionModel::Rectilinear, rec.key.img_size);
    EXPECT_NEAR(pooled.intrinsics.fx, direct.intrinsics.fx, 1e-9 * direct.intrinsics.fx);
    EXPECT_NEAR(pooled.avg_reprojection_error, direct.avg_reprojection_error, 1e-12);
}

TEST(PooledResult, OtherModelRequested) {
    const auto rec = real_record(webcam_profile(0.2), 2);
    const std::vector<CalibrationRecord> recs{rec};
    const auto pooled = pooled_result(recs, rec.board, DistortionModel::Fisheye);
    EXPECT_EQ(pooled.distortion.model, DistortionModel::Fisheye);
}

TEST(PooledResult, MismatchedRecordsAreRejected) {
    const auto rec = real_record(webcam_profile(0.2), 3);
    auto other = rec;
    other.key.img_size = {1280, 720};
    const std::vector<CalibrationRecord> recs{rec, other};
    EXPECT_THROW((void)pooled_result(recs, rec.board, DistortionModel::Rectilinear), CalibError);
    auto board_other = rec;
    board_other.board.square_length *= 2.0;
    const std::vector<CalibrationRecord> recs2{rec, board_other};
    EXPECT_THROW((void)pooled_result(recs2, rec.board, DistortionModel::Rectilinear), CalibError);
}

TEST(PooledResult, AtLeastAsAccurateAsMedianRecord) {
    const auto truth = webcam_profile(0.5);
    int wins = 0;
    constexpr int kTrials = 8;
    for (int trial = 0; trial < kTrials; ++trial) {
        std::vector<CalibrationRecord> recs;
        std::vector<double> errs;
        for (int i = 0; i < 5; ++i) {
            recs.push_back(real_record(truth, 1000 + 10 * trial + i));
            errs.push_back(std::abs(recs.back().result.intrinsics.fx - truth.intrinsics.fx));
        }
        std::nth_element(errs.begin(), errs.begin() + 2, errs.end());
        const auto pooled = pooled_result(recs, recs[0].board, DistortionModel::Rectilinear);
        wins += std::abs(pooled.intrinsics.fx - truth.intrinsics.fx) <= errs[2] ? 1 : 0;
    }
    EXPECT_GE(wins, kTrials - 1);
}

}  // namespace
}  // namespace calibdb
