#include "calibdb/sim_client.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "calibdb/errors.hpp"
#include "calibdb/wire.hpp"

namespace calibdb {

using wire::json;

namespace {

constexpr auto kJson = "application/json";

auto make_client(const std::string& server_url) -> httplib::Client {
    httplib::Client client(server_url);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(60, 0);
    client.set_follow_location(false);
    return client;
}

auto expect(const httplib::Result& res, std::initializer_list<int> allowed, const char* what)
    -> const httplib::Response& {
    if (!res) {
        fail(ErrorCode::ProtocolError,
             std::string(what) + ": request failed: " + httplib::to_string(res.error()));
    }
    for (int s : allowed) {
        if (res->status == s) {
            return *res;
        }
    }
    fail(ErrorCode::ProtocolError, std::string(what) + ": unexpected status " +
                                       std::to_string(res->status) + ": " + res->body);
}

auto parse(const std::string& body, const char* what) -> json {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail(ErrorCode::ProtocolError, std::string(what) + ": response is not a JSON object");
    }
    return j;
}

// A board pose twice as far away as the compliant one: the pattern shrinks
// toward the image center and misses the overlay.
auto off_target_view(const SimCameraProfile& profile, const BoardSpec& board,
                     const TargetPose& target, std::uint64_t seed) -> ViewObservation {
    Pose pose = align_pose_to_target(board, target, profile.intrinsics, profile.distortion);
    pose.translation *= 2.0;
    return simulate_detection(board, pose, profile.intrinsics, profile.distortion,
                              profile.noise_sigma, seed, profile.img_size);
}

}  // namespace

auto compare_to_truth(const CalibrationResult& result, const SimCameraProfile& truth)
    -> ParamErrors {
    const auto& K = result.intrinsics;
    const auto& T = truth.intrinsics;
    ParamErrors e;
    e.fx_rel = std::abs(K.fx - T.fx) / T.fx;
    e.fy_rel = std::abs(K.fy - T.fy) / T.fy;
    e.cx_abs = std::abs(K.cx - T.cx);
    e.cy_abs = std::abs(K.cy - T.cy);
    for (std::size_t i = 0; i < 3; ++i) {
        e.k_abs[i] = std::abs(result.distortion.k[i] - truth.distortion.k[i]);
    }
    return e;
}

auto run_session(const SimCameraProfile& profile, const std::string& server_url,
                 const std::string& token, const SessionOptions& options) -> SessionReport {
    const auto started = std::chrono::steady_clock::now();
    auto client = make_client(server_url);

    json create = wire::to_json(wire::QueryRequest{profile.camera_key, profile.distortion.model});
    create["token"] = token;
    const auto created = parse(
        expect(client.Post("/api/v1/sessions", create.dump(), kJson), {201}, "create session")
            .body,
        "create session");

    SessionReport report;
    report.session_id = created.at("session_id").get<std::string>();
    const BoardSpec board = wire::board_from_json(created.at("board"));
    const std::string base = "/api/v1/sessions/" + report.session_id;
    bool wrong_pose_pending = options.inject_wrong_pose;

    for (;;) {
        const auto target_json =
            parse(expect(client.Get(base + "/target"), {200}, "get target").body, "get target");
        if (target_json.contains("status")) {
            fail(ErrorCode::ProtocolError, "session ended before a calibration was returned");
        }
        const TargetPose target = wire::target_from_json(target_json);
        const std::uint64_t seed =
            profile.seed * 1'000'003ULL + static_cast<std::uint64_t>(report.n_submissions);
        const ViewObservation obs = wrong_pose_pending
                                        ? off_target_view(profile, board, target, seed)
                                        : simulate_target_view(profile, board, target, seed);
        wrong_pose_pending = false;

        const auto reply = parse(expect(client.Post(base + "/keypoints",
                                                    wire::observation_to_json(obs).dump(), kJson),
                                        {200}, "submit keypoints")
                                     .body,
                                 "submit keypoints");
        ++report.n_submissions;
        const auto status = reply.at("status").get<std::string>();
        if (status == "pose_mismatch") {
            ++report.n_mismatches;
        } else if (status == "need_more") {
            ++report.n_accepted;
        } else if (status == "done") {
            ++report.n_accepted;
            report.calibration = wire::parse_calibration_response(reply.at("calibration"));
            report.record_id = reply.value("record_id", "");
            break;
        } else {
            fail(ErrorCode::ProtocolError, "unexpected submission status '" + status + "'");
        }
    }
    report.errors = compare_to_truth(report.calibration, profile);
    report.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

auto query_calibration(const CameraKey& key, const std::string& server_url,
                       std::optional<DistortionModel> model) -> QueryReply {
    auto client = make_client(server_url);
    const auto body = wire::to_json(wire::QueryRequest{key, model}).dump();
    const auto result = client.Post("/api/v1/calibrations/query", body, kJson);
    const auto& res = expect(result, {200, 307}, "query");
    QueryReply reply;
    reply.status = res.status;
    reply.body = res.body;
    if (res.has_header("Location")) {
        reply.location = res.get_header_value("Location");
    }
    if (res.status == 200) {
        reply.calibration = wire::parse_calibration_response(parse(res.body, "query"));
    }
    return reply;
}

auto seed_reliability(const SimCameraProfile& profile, const std::string& server_url,
                      const std::string& token, int n_sessions, const SeedOptions& options)
    -> SeedSummary {
    require(n_sessions >= 1, "seed: n_sessions must be at least 1");
    require(options.parallel >= 1, "seed: parallel must be at least 1");
    require(options.focal_alternation >= 0.0 && options.focal_alternation < 1.0,
            "seed: focal_alternation must be in [0, 1)");

    SeedSummary summary;
    summary.sessions.resize(static_cast<std::size_t>(n_sessions));
    const auto session_profile = [&](int i) {
        SimCameraProfile p = profile;
        p.seed = profile.seed + 7919ULL * static_cast<std::uint64_t>(i + 1);
        const double scale = 1.0 + (i % 2 == 0 ? 1.0 : -1.0) * options.focal_alternation;
        p.intrinsics.fx *= scale;
        p.intrinsics.fy *= scale;
        return p;
    };

    std::mutex error_mutex;
    std::exception_ptr first_error;
    const auto worker = [&](int start) {
        for (int i = start; i < n_sessions; i += options.parallel) {
            try {
                summary.sessions[static_cast<std::size_t>(i)] =
                    run_session(session_profile(i), server_url, token);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
                return;
            }
        }
    };
    if (options.parallel == 1) {
        worker(0);
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < options.parallel; ++t) {
            threads.emplace_back(worker, t);
        }
        for (auto& t : threads) {
            t.join();
        }
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
    summary.query = query_calibration(profile.camera_key, server_url, options.query_model);
    return summary;
}

auto to_json(const ParamErrors& e) -> json {
    return json{{"fx_rel", e.fx_rel},
                {"fy_rel", e.fy_rel},
                {"cx_abs", e.cx_abs},
                {"cy_abs", e.cy_abs},
                {"k_abs", json::array({e.k_abs[0], e.k_abs[1], e.k_abs[2]})}};
}

auto to_json(const SessionReport& r) -> json {
    return json{{"session_id", r.session_id},
                {"record_id", r.record_id},
                {"calibration", wire::calibration_response(r.calibration)},
                {"n_submissions", r.n_submissions},
                {"n_accepted", r.n_accepted},
                {"n_mismatches", r.n_mismatches},
                {"errors", to_json(r.errors)},
                {"elapsed_s", r.elapsed_s}};
}

auto to_json(const QueryReply& q) -> json {
    json j{{"status", q.status}};
    if (q.location) {
        j["location"] = *q.location;
    }
    if (q.calibration) {
        j["calibration"] = wire::calibration_response(*q.calibration);
    }
    return j;
}

auto to_json(const SeedSummary& s) -> json {
    json sessions = json::array();
    for (const auto& r : s.sessions) {
        sessions.push_back(to_json(r));
    }
    return json{{"sessions", std::move(sessions)}, {"query", to_json(s.query)}};
}

}  // namespace calibdb
