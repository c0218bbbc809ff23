#include "calibdb/wire.hpp"

#include <cmath>
#include <initializer_list>
#include <limits>
#include <set>
#include <string_view>

#include "calibdb/errors.hpp"

namespace calibdb::wire {

namespace {

[[noreturn]] void bad(const std::string& what) { fail(ErrorCode::ProtocolError, what); }

void expect_object(const json& j, std::string_view ctx) {
    if (!j.is_object()) {
        bad(std::string(ctx) + ": expected a JSON object");
    }
}

// Rejects unknown fields and missing required ones.
void check_fields(const json& j, std::string_view ctx, std::initializer_list<const char*> required,
                  std::initializer_list<const char*> optional = {}) {
    expect_object(j, ctx);
    std::set<std::string, std::less<>> allowed;
    for (const char* f : required) {
        allowed.emplace(f);
        if (!j.contains(f)) {
            bad(std::string(ctx) + ": missing field '" + f + "'");
        }
    }
    for (const char* f : optional) {
        allowed.emplace(f);
    }
    for (const auto& [name, value] : j.items()) {
        if (!allowed.contains(name)) {
            bad(std::string(ctx) + ": unexpected field '" + name + "'");
        }
    }
}

auto number(const json& j, std::string_view ctx) -> double {
    if (!j.is_number()) {
        bad(std::string(ctx) + ": expected a number");
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
        bad(std::string(ctx) + ": expected a finite number");
    }
    return v;
}

auto string_field(const json& j, const char* name, std::string_view ctx) -> std::string {
    const auto& v = j.at(name);
    if (!v.is_string()) {
        bad(std::string(ctx) + ": '" + name + "' must be a string");
    }
    return v.get<std::string>();
}

auto integer(const json& j, std::string_view ctx) -> long long {
    if (!j.is_number_integer()) {
        bad(std::string(ctx) + ": expected an integer");
    }
    return j.get<long long>();
}

auto vec_from_json(const json& j, std::size_t n, std::string_view ctx) -> std::vector<double> {
    if (!j.is_array() || j.size() != n) {
        bad(std::string(ctx) + ": expected an array of " + std::to_string(n) + " numbers");
    }
    std::vector<double> out;
    out.reserve(n);
    for (const auto& v : j) {
        out.push_back(number(v, ctx));
    }
    return out;
}

auto point_to_json(const Point2& p) -> json { return json::array({p.x(), p.y()}); }

auto point_from_json(const json& j, std::string_view ctx) -> Point2 {
    const auto v = vec_from_json(j, 2, ctx);
    return {v[0], v[1]};
}

}  // namespace

auto canonical(const json& j) -> std::string { return j.dump(2) + "\n"; }

auto image_size_to_json(ImageSize s) -> json { return json::array({s.width, s.height}); }

auto image_size_from_json(const json& j) -> ImageSize {
    if (!j.is_array() || j.size() != 2) {
        bad("img_size: expected [width, height]");
    }
    const long long w = integer(j[0], "img_size");
    const long long h = integer(j[1], "img_size");
    if (w <= 0 || h <= 0 || w > 1'000'000 || h > 1'000'000) {
        bad("img_size: dimensions must be positive");
    }
    return {static_cast<int>(w), static_cast<int>(h)};
}

auto parse_distortion_model_field(const json& j) -> DistortionModel {
    if (!j.is_string()) {
        bad("distortion_model: expected a string");
    }
    const auto model = parse_distortion_model(j.get<std::string>());
    if (!model) {
        bad("distortion_model: unknown model '" + j.get<std::string>() + "'");
    }
    return *model;
}

auto camera_key_to_json(const CameraKey& k) -> json {
    return json{{"camera", k.camera},
                {"platform", k.platform},
                {"img_size", image_size_to_json(k.img_size)},
                {"zoom", k.zoom}};
}

auto camera_key_from_json(const json& j) -> CameraKey {
    check_fields(j, "camera key", {"camera", "platform", "img_size", "zoom"});
    CameraKey k;
    k.camera = string_field(j, "camera", "camera key");
    k.platform = string_field(j, "platform", "camera key");
    k.img_size = image_size_from_json(j.at("img_size"));
    k.zoom = number(j.at("zoom"), "zoom");
    if (!k.valid()) {
        bad("camera key: camera and platform must be non-empty and zoom >= 0");
    }
    return k;
}

auto parse_query_request(const json& j) -> QueryRequest {
    check_fields(j, "calibration request", {"camera", "platform", "img_size", "zoom"},
                 {"distortion_model"});
    QueryRequest q;
    json key_part = j;
    key_part.erase("distortion_model");
    q.key = camera_key_from_json(key_part);
    if (j.contains("distortion_model")) {
        q.distortion_model = parse_distortion_model_field(j.at("distortion_model"));
    }
    return q;
}

auto to_json(const QueryRequest& q) -> json {
    json j = camera_key_to_json(q.key);
    if (q.distortion_model) {
        j["distortion_model"] = std::string(to_string(*q.distortion_model));
    }
    return j;
}

auto calibration_response(const CalibrationResult& r) -> json {
    const auto& K = r.intrinsics;
    return json{
        {"img_size", image_size_to_json(r.img_size)},
        {"camera_matrix",
         json::array({json::array({K.fx, 0.0, K.cx}), json::array({0.0, K.fy, K.cy}),
                      json::array({0.0, 0.0, 1.0})})},
        {"distortion_coefficients",
         json::array({r.distortion.k[0], r.distortion.k[1], r.distortion.k[2]})},
        {"distortion_model", std::string(to_string(r.distortion.model))},
        {"avg_reprojection_error", r.avg_reprojection_error},
    };
}

auto parse_calibration_response(const json& j) -> CalibrationResult {
    check_fields(j, "calibration response",
                 {"img_size", "camera_matrix", "distortion_coefficients", "distortion_model",
                  "avg_reprojection_error"});
    CalibrationResult r;
    r.img_size = image_size_from_json(j.at("img_size"));
    const auto& m = j.at("camera_matrix");
    if (!m.is_array() || m.size() != 3) {
        bad("camera_matrix: expected 3 rows");
    }
    Eigen::Matrix3d K;
    for (int row = 0; row < 3; ++row) {
        const auto v = vec_from_json(m[static_cast<std::size_t>(row)], 3, "camera_matrix");
        K.row(row) << v[0], v[1], v[2];
    }
    if (K(0, 1) != 0.0 || K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(2, 2) != 1.0) {
        bad("camera_matrix: expected zero skew and bottom row [0, 0, 1]");
    }
    r.intrinsics = {K(0, 0), K(1, 1), K(0, 2), K(1, 2)};
    const auto k = vec_from_json(j.at("distortion_coefficients"), 3, "distortion_coefficients");
    r.distortion.model = parse_distortion_model_field(j.at("distortion_model"));
    r.distortion.k = {k[0], k[1], k[2]};
    r.avg_reprojection_error = number(j.at("avg_reprojection_error"), "avg_reprojection_error");
    if (r.avg_reprojection_error < 0.0) {
        bad("avg_reprojection_error: must be non-negative");
    }
    return r;
}

auto pose_to_json(const Pose& p) -> json {
    const auto& q = p.rotation;
    return json{{"q", json::array({q.w(), q.x(), q.y(), q.z()})},
                {"t", json::array({p.translation.x(), p.translation.y(), p.translation.z()})}};
}

auto pose_from_json(const json& j) -> Pose {
    check_fields(j, "pose", {"q", "t"});
    const auto q = vec_from_json(j.at("q"), 4, "pose.q");
    const auto t = vec_from_json(j.at("t"), 3, "pose.t");
    Pose p;
    p.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
    if (std::abs(p.rotation.norm() - 1.0) > 1e-6) {
        bad("pose.q: quaternion must have unit norm");
    }
    if (std::abs(p.rotation.norm() - 1.0) > 4.0 * std::numeric_limits<double>::epsilon()) {
        p.rotation.normalize();
    }
    p.translation = Eigen::Vector3d(t[0], t[1], t[2]);
    return p;
}

auto board_to_json(const BoardSpec& b) -> json {
    return json{{"squares_x", b.squares_x},
                {"squares_y", b.squares_y},
                {"square_length", b.square_length}};
}

auto board_from_json(const json& j) -> BoardSpec {
    check_fields(j, "board", {"squares_x", "squares_y", "square_length"});
    BoardSpec b;
    b.squares_x = static_cast<int>(integer(j.at("squares_x"), "board.squares_x"));
    b.squares_y = static_cast<int>(integer(j.at("squares_y"), "board.squares_y"));
    b.square_length = number(j.at("square_length"), "board.square_length");
    if (!b.valid()) {
        bad("board: needs at least 3x3 squares and a positive square length");
    }
    return b;
}

auto observation_to_json(const ViewObservation& v) -> json {
    json pts = json::array();
    for (const auto& kp : v.points) {
        pts.push_back(json{{"id", kp.id}, {"x", kp.px.x()}, {"y", kp.px.y()}});
    }
    return json{{"img_size", image_size_to_json(v.img_size)}, {"points", std::move(pts)}};
}

auto observation_from_json(const json& j) -> ViewObservation {
    check_fields(j, "observation", {"img_size", "points"});
    ViewObservation v;
    v.img_size = image_size_from_json(j.at("img_size"));
    const auto& pts = j.at("points");
    if (!pts.is_array()) {
        bad("observation.points: expected an array");
    }
    v.points.reserve(pts.size());
    for (const auto& p : pts) {
        check_fields(p, "observation point", {"id", "x", "y"});
        const long long id = integer(p.at("id"), "point.id");
        if (id < 0 || id > 1'000'000) {
            bad("point.id: out of range");
        }
        v.points.push_back(
            {static_cast<int>(id), Point2(number(p.at("x"), "point.x"), number(p.at("y"), "point.y"))});
    }
    return v;
}

auto target_to_json(const TargetPose& t) -> json {
    json outline = json::array();
    for (const auto& p : t.outline_px) {
        outline.push_back(point_to_json(p));
    }
    json corners = json::object();
    for (const auto& [id, px] : t.corner_targets) {
        corners[std::to_string(id)] = point_to_json(px);
    }
    return json{{"index", t.index},
                {"outline_px", std::move(outline)},
                {"corner_targets", std::move(corners)},
                {"pose", pose_to_json(t.pose)}};
}

auto target_from_json(const json& j) -> TargetPose {
    check_fields(j, "target", {"index", "outline_px", "corner_targets", "pose"});
    TargetPose t;
    t.index = static_cast<int>(integer(j.at("index"), "target.index"));
    const auto& outline = j.at("outline_px");
    if (!outline.is_array() || outline.size() != 4) {
        bad("target.outline_px: expected 4 vertices");
    }
    for (std::size_t i = 0; i < 4; ++i) {
        t.outline_px[i] = point_from_json(outline[i], "target.outline_px");
    }
    const auto& corners = j.at("corner_targets");
    expect_object(corners, "target.corner_targets");
    for (const auto& [key, value] : corners.items()) {
        int id = 0;
        try {
            std::size_t used = 0;
            id = std::stoi(key, &used);
            if (used != key.size() || id < 0) {
                bad("target.corner_targets: bad corner id '" + key + "'");
            }
        } catch (const std::logic_error&) {
            bad("target.corner_targets: bad corner id '" + key + "'");
        }
        t.corner_targets.emplace(id, point_from_json(value, "target.corner_targets"));
    }
    t.pose = pose_from_json(j.at("pose"));
    return t;
}

auto intrinsics_to_json(const CameraIntrinsics& K) -> json {
    return json{{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}};
}

auto intrinsics_from_json(const json& j) -> CameraIntrinsics {
    check_fields(j, "intrinsics", {"fx", "fy", "cx", "cy"});
    CameraIntrinsics K{number(j.at("fx"), "fx"), number(j.at("fy"), "fy"),
                       number(j.at("cx"), "cx"), number(j.at("cy"), "cy")};
    if (!K.valid()) {
        bad("intrinsics: focal lengths must be positive");
    }
    return K;
}

auto distortion_to_json(const DistortionParams& d) -> json {
    return json{{"model", std::string(to_string(d.model))},
                {"coefficients", json::array({d.k[0], d.k[1], d.k[2]})}};
}

auto distortion_from_json(const json& j) -> DistortionParams {
    check_fields(j, "distortion", {"model", "coefficients"});
    DistortionParams d;
    d.model = parse_distortion_model_field(j.at("model"));
    const auto k = vec_from_json(j.at("coefficients"), 3, "distortion.coefficients");
    d.k = {k[0], k[1], k[2]};
    return d;
}

auto result_to_json(const CalibrationResult& r) -> json {
    json poses = json::array();
    for (const auto& p : r.per_view_poses) {
        poses.push_back(pose_to_json(p));
    }
    return json{{"intrinsics", intrinsics_to_json(r.intrinsics)},
                {"distortion", distortion_to_json(r.distortion)},
                {"img_size", image_size_to_json(r.img_size)},
                {"avg_reprojection_error", r.avg_reprojection_error},
                {"per_view_poses", std::move(poses)},
                {"n_views", r.n_views}};
}

auto result_from_json(const json& j) -> CalibrationResult {
    check_fields(j, "result",
                 {"intrinsics", "distortion", "img_size", "avg_reprojection_error",
                  "per_view_poses", "n_views"});
    CalibrationResult r;
    r.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    r.distortion = distortion_from_json(j.at("distortion"));
    r.img_size = image_size_from_json(j.at("img_size"));
    r.avg_reprojection_error = number(j.at("avg_reprojection_error"), "avg_reprojection_error");
    const auto& poses = j.at("per_view_poses");
    if (!poses.is_array()) {
        bad("result.per_view_poses: expected an array");
    }
    for (const auto& p : poses) {
        r.per_view_poses.push_back(pose_from_json(p));
    }
    r.n_views = static_cast<int>(integer(j.at("n_views"), "n_views"));
    return r;
}

auto record_to_json(const CalibrationRecord& rec) -> json {
    json views = json::array();
    for (const auto& v : rec.keypoints) {
        views.push_back(observation_to_json(v));
    }
    return json{{"record_id", rec.record_id},
                {"key", camera_key_to_json(rec.key)},
                {"result", result_to_json(rec.result)},
                {"keypoints", std::move(views)},
                {"board", board_to_json(rec.board)},
                {"created_at", rec.created_at}};
}

auto record_from_json(const json& j) -> CalibrationRecord {
    check_fields(j, "record", {"record_id", "key", "result", "keypoints", "board", "created_at"});
    CalibrationRecord rec;
    rec.record_id = string_field(j, "record_id", "record");
    rec.key = camera_key_from_json(j.at("key"));
    rec.result = result_from_json(j.at("result"));
    const auto& views = j.at("keypoints");
    if (!views.is_array()) {
        bad("record.keypoints: expected an array");
    }
    for (const auto& v : views) {
        rec.keypoints.push_back(observation_from_json(v));
    }
    rec.board = board_from_json(j.at("board"));
    rec.created_at = string_field(j, "created_at", "record");
    return rec;
}

auto profile_to_json(const SimCameraProfile& p) -> json {
    return json{{"intrinsics", intrinsics_to_json(p.intrinsics)},
                {"distortion", distortion_to_json(p.distortion)},
                {"img_size", image_size_to_json(p.img_size)},
                {"noise_sigma", p.noise_sigma},
                {"seed", p.seed},
                {"camera_key", camera_key_to_json(p.camera_key)}};
}

auto profile_from_json(const json& j) -> SimCameraProfile {
    check_fields(j, "profile", {"intrinsics", "distortion", "img_size"},
                 {"noise_sigma", "seed", "camera_key"});
    SimCameraProfile p;
    p.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    p.distortion = distortion_from_json(j.at("distortion"));
    p.img_size = image_size_from_json(j.at("img_size"));
    if (j.contains("noise_sigma")) {
        p.noise_sigma = number(j.at("noise_sigma"), "noise_sigma");
        if (p.noise_sigma < 0.0) {
            bad("profile.noise_sigma: must be non-negative");
        }
    }
    if (j.contains("seed")) {
        const auto& s = j.at("seed");
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
            bad("profile.seed: expected a non-negative integer");
        }
        p.seed = s.get<std::uint64_t>();
    }
    if (j.contains("camera_key")) {
        p.camera_key = camera_key_from_json(j.at("camera_key"));
        if (!(p.camera_key.img_size == p.img_size)) {
            bad("profile.camera_key.img_size must equal profile.img_size");
        }
    } else {
        p.camera_key = CameraKey{"Simulated Camera", "calibdb-sim", p.img_size, 0.0};
    }
    return p;
}

}  // namespace calibdb::wire
