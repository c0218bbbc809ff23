#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "calibdb/errors.hpp"
#include "calibdb/service.hpp"
#include "calibdb/wire.hpp"
#include "support.hpp"

namespace calibdb {
namespace {

namespace fs = std::filesystem;
using wire::json;

constexpr auto kToken = "test-token";

auto test_config(const fs::path& dir) -> ServerConfig {
    ServerConfig c;
    c.port = 0;
    c.tokens = {{kToken, "tests"}, {"second-token", "other"}};
    c.storage_path = dir;
    c.guidance_page_url = "http://calib.example/calibrate";
    c.log_requests = false;
    return c;
}

auto create_body(const SimCameraProfile& p, const std::string& token = kToken) -> std::string {
    json j = wire::to_json(wire::QueryRequest{p.camera_key, p.distortion.model});
    j["token"] = token;
    return j.dump();
}

auto body_of(const ApiResponse& r) -> json { return json::parse(r.body); }

class ServiceTest : public ::testing::Test {
  protected:
    void TearDown() override { fs::remove_all(dir_); }

    auto open_session(const SimCameraProfile& p) -> std::string {
        const auto r = service_.create_session(create_body(p));
        EXPECT_EQ(r.status, 201) << r.body;
        return body_of(r).at("session_id").get<std::string>();
    }

    auto current_target(const std::string& id) -> TargetPose {
        const auto r = service_.get_target(id);
        EXPECT_EQ(r.status, 200);
        return wire::target_from_json(body_of(r));
    }

    auto submit(const std::string& id, const ViewObservation& v) -> ApiResponse {
        return service_.submit_keypoints(id, wire::observation_to_json(v).dump());
    }

    /// Compliant capture loop; returns the final response.
    auto drive(const SimCameraProfile& p) -> ApiResponse {
        const auto id = open_session(p);
        const BoardSpec b = service_.config().board;
        for (int i = 0;; ++i) {
            const auto t = current_target(id);
            const auto r = submit(id, simulate_target_view(p, b, t, p.seed * 100 + i));
            if (r.status != 200 || body_of(r).at("status") != "need_more") {
                return r;
            }
        }
    }

    fs::path dir_ = testing::temp_dir("service");
    CalibService service_{test_config(dir_)};
};

TEST(ServerConfigJson, RoundTripAndDefaults) {
    const json j{{"tokens", {{{"token", "t"}}}}, {"guidance", {{"n_targets", 12}}}};
    const auto c = server_config_from_json(j);
    EXPECT_EQ(c.guidance.n_targets, 12);
    EXPECT_EQ(c.port, 8080);
    EXPECT_EQ(c.reliability.min_count, 5);
    EXPECT_EQ(c.guidance_page_url, "/calibrate");
    const auto back = server_config_from_json(server_config_to_json(c));
    EXPECT_EQ(server_config_to_json(back), server_config_to_json(c));
}

TEST(ServerConfigJson, InvalidSettingsAreRejected) {
    EXPECT_THROW((void)server_config_from_json(json{{"tokens", json::array()}}), CalibError);
    EXPECT_THROW((void)server_config_from_json(json::object()), CalibError);
    EXPECT_THROW((void)server_config_from_json(
                     json{{"tokens", {{{"token", "t"}}}}, {"guidance", {{"n_targets", 2}}}}),
                 CalibError);
    EXPECT_THROW((void)server_config_from_json(
                     json{{"tokens", {{{"token", "t"}}}}, {"listen", {{"port", 70000}}}}),
                 CalibError);
}

TEST(ServerConfigJson, ShippedConfigLoads) {
    const auto c = load_server_config(fs::path(CALIBDB_SOURCE_DIR) / "config" / "server.json");
    EXPECT_EQ(c.guidance.n_targets, 10);
    EXPECT_EQ(c.guidance.tau_px_720p, 20.0);
    EXPECT_EQ(c.reliability.min_count, 5);
    EXPECT_EQ(c.tokens.size(), 1u);
}

TEST_F(ServiceTest, CreateSessionChecksBodyAndToken) {
    const auto p = testing::webcam_profile(0.2);
    EXPECT_EQ(service_.create_session("not json").status, 400);
    EXPECT_EQ(service_.create_session("[]").status, 400);
    EXPECT_EQ(service_.create_session(create_body(p, "wrong")).status, 401);
    json no_token = wire::to_json(wire::QueryRequest{p.camera_key, std::nullopt});
    EXPECT_EQ(service_.create_session(no_token.dump()).status, 401);
    json bad_key = json::parse(create_body(p));
    bad_key.erase("zoom");
    EXPECT_EQ(service_.create_session(bad_key.dump()).status, 400);
    EXPECT_EQ(service_.session_count(), 0u);

    const auto r = service_.create_session(create_body(p, "second-token"));
    ASSERT_EQ(r.status, 201);
    const auto j = body_of(r);
    EXPECT_EQ(j.at("n_targets"), 10);
    EXPECT_EQ(j.at("session_id").get<std::string>().size(), 32u);
    EXPECT_EQ(wire::board_from_json(j.at("board")), BoardSpec{});
    EXPECT_EQ(service_.session_count(), 1u);
}

TEST_F(ServiceTest, UnknownSessionIs404) {
    EXPECT_EQ(service_.get_target("nope").status, 404);
    EXPECT_EQ(service_.submit_keypoints("nope", "{}").status, 404);
}

TEST_F(ServiceTest, InvalidObservationsAre422AndLeaveSessionUnchanged) {
    const auto p = testing::webcam_profile(0.2);
    const auto id = open_session(p);
    const auto t = current_target(id);
    const auto good = simulate_target_view(p, BoardSpec{}, t, 1);

    EXPECT_EQ(service_.submit_keypoints(id, "{oops").status, 400);
    auto extra = wire::observation_to_json(good);
    extra["extra"] = 1;
    EXPECT_EQ(service_.submit_keypoints(id, extra.dump()).status, 422);
    auto dup = good;
    dup.points.push_back(dup.points.front());
    EXPECT_EQ(submit(id, dup).status, 422);
    auto size = good;
    size.img_size = {1280, 720};
    for (auto& kp : size.points) {
        kp.px = kp.px.cwiseMin(Point2(1279, 719));
    }
    EXPECT_EQ(submit(id, size).status, 422);
    auto off_board = good;
    off_board.points.push_back({BoardSpec{}.corner_count(), {5.0, 5.0}});
    EXPECT_EQ(submit(id, off_board).status, 422);

    EXPECT_EQ(current_target(id).index, 0);
    const auto r = submit(id, good);
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(body_of(r), (json{{"status", "need_more"}, {"remaining", 9}}));
}

TEST_F(ServiceTest, MismatchedPoseDoesNotAdvance) {
    const auto p = testing::webcam_profile(0.2);
    const auto id = open_session(p);
    const auto t = current_target(id);
    Pose far = align_pose_to_target(BoardSpec{}, t, p.intrinsics, p.distortion);
    far.translation *= 2.0;
    const auto v = simulate_detection(BoardSpec{}, far, p.intrinsics, p.distortion, 0.2, 3, p.img_size);
    const auto r = submit(id, v);
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(body_of(r).at("status"), "pose_mismatch");
    EXPECT_EQ(body_of(r).at("remaining"), 10);
    EXPECT_EQ(current_target(id).index, 0);
}

TEST_F(ServiceTest, FullSessionPersistsOneRecord) {
    const auto p = testing::webcam_profile(0.2, 11);
    const auto r = drive(p);
    ASSERT_EQ(r.status, 200) << r.body;
    const auto j = body_of(r);
    EXPECT_EQ(j.at("status"), "done");
    const auto cal = wire::parse_calibration_response(j.at("calibration"));
    EXPECT_LT(std::abs(cal.intrinsics.fx / 1430.0 - 1.0), 0.005);
    EXPECT_LT(std::abs(cal.intrinsics.fy / 1430.0 - 1.0), 0.005);
    EXPECT_EQ(service_.store().size(), 1u);
    const auto recs = service_.store().get_records(p.camera_key, MatchMode::Exact);
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].record_id, j.at("record_id"));
    EXPECT_EQ(recs[0].keypoints.size(), 10u);
}

TEST_F(ServiceTest, CompletedSessionRejectsFurtherInput) {
    const auto p = testing::webcam_profile(0.2, 12);
    const auto id = open_session(p);
    const BoardSpec b;
    ViewObservation last;
    for (int i = 0; i < 10; ++i) {
        last = simulate_target_view(p, b, current_target(id), 500 + i);
        ASSERT_EQ(submit(id, last).status, 200);
    }
    EXPECT_EQ(submit(id, last).status, 409);
    const auto t = service_.get_target(id);
    EXPECT_EQ(t.status, 200);
    EXPECT_EQ(body_of(t), (json{{"status", "complete"}}));
}

TEST_F(ServiceTest, SessionsAreIsolated) {
    const auto p = testing::webcam_profile(0.2, 13);
    const auto a = open_session(p);
    const auto b = open_session(p);
    ASSERT_NE(a, b);
    const auto r = submit(a, simulate_target_view(p, BoardSpec{}, current_target(a), 1));
    EXPECT_EQ(body_of(r).at("status"), "need_more");
    EXPECT_EQ(current_target(a).index, 1);
    EXPECT_EQ(current_target(b).index, 0);
}

TEST_F(ServiceTest, IdleSessionsAreCollected) {
    const auto p = testing::webcam_profile(0.2);
    open_session(p);
    open_session(p);
    EXPECT_EQ(service_.collect_idle_sessions(), 0u);
    EXPECT_EQ(service_.session_count(), 2u);
    const auto later = CalibService::Clock::now() + std::chrono::minutes(31);
    EXPECT_EQ(service_.collect_idle_sessions(later), 2u);
    EXPECT_EQ(service_.session_count(), 0u);
}

TEST_F(ServiceTest, ConcurrentSubmissionsToOneSessionAreSerialized) {
    const auto p = testing::webcam_profile(0.2, 14);
    const auto id = open_session(p);
    const auto v = simulate_target_view(p, BoardSpec{}, current_target(id), 1);
    const std::string body = wire::observation_to_json(v).dump();
    std::atomic<int> accepted{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&] {
            const auto r = service_.submit_keypoints(id, body);
            if (json::parse(r.body).at("status") == "need_more") {
                ++accepted;
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    // The same view can only match the first target; later copies miss target 1.
    EXPECT_EQ(accepted.load(), 1);
    EXPECT_EQ(current_target(id).index, 1);
}

TEST_F(ServiceTest, ConcurrentSessionsAllComplete) {
    std::vector<std::thread> threads;
    std::atomic<int> done{0};
    for (int i = 0; i < 4; ++i) {
        threads.emplace_back([&, i] {
            const auto r = drive(testing::webcam_profile(0.2, 40 + static_cast<std::uint64_t>(i)));
            if (r.status == 200 && json::parse(r.body).at("status") == "done") {
                ++done;
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    EXPECT_EQ(done.load(), 4);
    EXPECT_EQ(service_.store().size(), 4u);
}

TEST_F(ServiceTest, QueryValidatesBody) {
    EXPECT_EQ(service_.query("nope").status, 400);
    EXPECT_EQ(service_.query(R"({"camera":"c","platform":"p","img_size":[640,480]})").status, 400);
    EXPECT_EQ(
        service_.query(R"({"camera":"c","host":"p","img_size":[640,480],"zoom":0})").status, 400);
}

auto location_of(const ApiResponse& r) -> std::string {
    for (const auto& [k, v] : r.headers) {
        if (k == "Location") {
            return v;
        }
    }
    return {};
}

TEST_F(ServiceTest, QueryRedirectsUntilFiveConsistentRecords) {
    const auto p = testing::webcam_profile(0.05, 21);
    const std::string q = wire::to_json(wire::QueryRequest{p.camera_key, std::nullopt}).dump();

    auto r = service_.query(q);
    EXPECT_EQ(r.status, 307);
    EXPECT_EQ(location_of(r), "http://calib.example/calibrate");
    EXPECT_EQ(body_of(r).at("location"), "http://calib.example/calibrate");

    for (int i = 0; i < 4; ++i) {
        auto sp = p;
        sp.seed = 100 + static_cast<std::uint64_t>(i);
        ASSERT_EQ(drive(sp).status, 200);
    }
    r = service_.query(q);
    EXPECT_EQ(r.status, 307);
    EXPECT_EQ(location_of(r), "http://calib.example/calibrate");

    auto sp = p;
    sp.seed = 200;
    ASSERT_EQ(drive(sp).status, 200);
    r = service_.query(q);
    ASSERT_EQ(r.status, 200) << r.body;
    EXPECT_TRUE(location_of(r).empty());
    const auto cal = wire::parse_calibration_response(body_of(r));
    EXPECT_EQ(cal.distortion.model, DistortionModel::Rectilinear);
    EXPECT_LT(std::abs(cal.intrinsics.fx / 1430.0 - 1.0), 0.005);
    EXPECT_EQ(body_of(r).at("camera_matrix")[2], json::array({0.0, 0.0, 1.0}));

    // A different resolution of the same camera falls back to the stored one.
    auto other = p.camera_key;
    other.img_size = {1280, 720};
    const auto fallback =
        service_.query(wire::to_json(wire::QueryRequest{other, std::nullopt}).dump());
    ASSERT_EQ(fallback.status, 200);
    EXPECT_EQ(body_of(fallback).at("img_size"), json::array({1920, 1080}));
}

TEST_F(ServiceTest, DivergentFocalLengthsStayRedirected) {
    const auto p = testing::webcam_profile(0.05, 31);
    for (int i = 0; i < 6; ++i) {
        auto sp = p;
        sp.seed = 300 + static_cast<std::uint64_t>(i);
        const double scale = i % 2 == 0 ? 1.1 : 0.9;
        sp.intrinsics.fx *= scale;
        sp.intrinsics.fy *= scale;
        ASSERT_EQ(drive(sp).status, 200);
    }
    const auto r = service_.query(wire::to_json(wire::QueryRequest{p.camera_key, std::nullopt}).dump());
    EXPECT_EQ(r.status, 307);
}

TEST_F(ServiceTest, CrossModelQueryServesElevatedError) {
    const auto p = testing::fisheye_wide_profile(0.1);
    for (std::uint64_t s = 0; s < 5; ++s) {
        service_.store().put_record(testing::wide_field_record(p, 50 + s));
    }
    const auto ask = [&](std::optional<DistortionModel> m) {
        const auto r = service_.query(wire::to_json(wire::QueryRequest{p.camera_key, m}).dump());
        EXPECT_EQ(r.status, 200) << r.body;
        return wire::parse_calibration_response(body_of(r));
    };
    const auto fish = ask(std::nullopt);
    EXPECT_EQ(fish.distortion.model, DistortionModel::Fisheye);
    const auto rect = ask(DistortionModel::Rectilinear);
    EXPECT_EQ(rect.distortion.model, DistortionModel::Rectilinear);
    EXPECT_GE(rect.avg_reprojection_error, 5.0 * fish.avg_reprojection_error);
    // Served again from the cache, unchanged.
    EXPECT_EQ(ask(DistortionModel::Rectilinear).avg_reprojection_error, rect.avg_reprojection_error);
}

}  // namespace
}  // namespace calibdb
