#include "calibdb/guidance.hpp"

#include <cmath>
#include <numbers>

#include "calibdb/errors.hpp"

namespace calibdb {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Placement {
    Eigen::Matrix3d rotation;  // applied about the board center
    double fill = 0.5;         // fraction of the image the fronto board would span
    Point2 offset_frac{0.0, 0.0};  // board-center offset from the principal point, in image sizes
};

auto rot_x(double a) -> Eigen::Matrix3d {
    return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix();
}

auto rot_y(double a) -> Eigen::Matrix3d {
    return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix();
}

auto placement_for(int index) -> Placement {
    const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
    switch (index) {
        case 0:
            return {I, 0.85, {0.0, 0.0}};
        case 1:
            return {I, 0.6, {0.0, 0.0}};
        case 2:
            return {I, 0.4, {0.0, 0.0}};
        case 3:
            return {rot_x(35.0 * kDeg), 0.9, {0.0, 0.0}};
        case 4:
            return {rot_y(35.0 * kDeg), 0.9, {0.0, 0.0}};
        case 5:
            return {rot_x(-35.0 * kDeg), 0.9, {0.0, 0.0}};
        case 6:
            return {rot_y(-35.0 * kDeg), 0.9, {0.0, 0.0}};
        default:
            break;
    }
    static constexpr std::array<std::array<double, 2>, 4> quadrants{
        {{-1.0, -1.0}, {1.0, 1.0}, {1.0, -1.0}, {-1.0, 1.0}}};
    if (index < 11) {
        const auto& q = quadrants[static_cast<std::size_t>(index - 7)];
        return {rot_y(-q[0] * 40.0 * kDeg) * rot_x(q[1] * 40.0 * kDeg), 0.6,
                {0.28 * q[0], 0.28 * q[1]}};
    }
    // Beyond the base schedule: diagonal-axis tilts at varying depth.
    const int k = index - 11;
    const double axis_angle = std::numbers::pi / 4.0 + k * std::numbers::pi / 2.0;
    const Eigen::Vector3d axis(std::cos(axis_angle), std::sin(axis_angle), 0.0);
    const double fill = 0.4 + 0.1 * ((k / 4) % 3);
    return {Eigen::AngleAxisd(25.0 * kDeg, axis).toRotationMatrix(), fill, {0.0, 0.0}};
}

auto visible_fraction(const BoardSpec& board, const Pose& pose, const CameraIntrinsics& K,
                      ImageSize img_size) -> double {
    const DistortionParams none;
    int visible = 0;
    const auto corners = corner_object_points(board);
    for (const auto& c : corners) {
        const Point3 Xc = pose.transform(c.position);
        if (Xc.z() > 0.0 && img_size.contains(project(Xc, K, none))) {
            ++visible;
        }
    }
    return static_cast<double>(visible) / static_cast<double>(corners.size());
}

}  // namespace

auto default_k_guess(ImageSize img_size, double hfov_deg) -> CameraIntrinsics {
    require(img_size.valid(), "k_guess: img_size must be positive");
    require(hfov_deg > 0.0 && hfov_deg < 180.0, "k_guess: field of view out of range");
    const double f = 0.5 * img_size.width / std::tan(0.5 * hfov_deg * kDeg);
    return {f, f, 0.5 * img_size.width, 0.5 * img_size.height};
}

auto scaled_tau(ImageSize img_size, double tau_px_720p) -> double {
    return tau_px_720p * static_cast<double>(img_size.height) / 720.0;
}

auto make_target(const BoardSpec& board, ImageSize img_size, int index, const Pose& pose,
                 const CameraIntrinsics& K_guess) -> TargetPose {
    const DistortionParams none;
    TargetPose target;
    target.index = index;
    target.pose = pose;
    const auto outline = board_outline(board);
    for (std::size_t i = 0; i < outline.size(); ++i) {
        target.outline_px[i] = project(pose.transform(outline[i]), K_guess, none);
    }
    for (const auto& c : corner_object_points(board)) {
        const Point3 Xc = pose.transform(c.position);
        if (Xc.z() <= 0.0) {
            continue;
        }
        const Point2 px = project(Xc, K_guess, none);
        if (img_size.contains(px)) {
            target.corner_targets.emplace(c.id, px);
        }
    }
    return target;
}

auto make_schedule(const BoardSpec& board, ImageSize img_size, int n_targets,
                   const CameraIntrinsics& K_guess, const GuidanceParams& params)
    -> std::vector<TargetPose> {
    require(n_targets >= 3, "schedule: needs at least 3 targets");
    require(board.valid(), "schedule: invalid board");
    require(img_size.valid() && K_guess.valid(), "schedule: invalid camera guess");

    const Point3 center(0.5 * board.width(), 0.5 * board.height(), 0.0);
    std::vector<TargetPose> schedule;
    schedule.reserve(static_cast<std::size_t>(n_targets));
    for (int index = 0; index < n_targets; ++index) {
        const Placement pl = placement_for(index);
        double depth = std::max(K_guess.fx * board.width() / (pl.fill * img_size.width),
                                K_guess.fy * board.height() / (pl.fill * img_size.height));
        // Ray through the requested pixel offset; the board center rides on it.
        const Eigen::Vector3d ray(pl.offset_frac.x() * img_size.width / K_guess.fx,
                                  pl.offset_frac.y() * img_size.height / K_guess.fy, 1.0);
        Pose pose;
        pose.rotation = Eigen::Quaterniond(pl.rotation);
        for (;;) {
            if (depth > params.max_depth) {
                fail(ErrorCode::InfeasibleTarget,
                     "schedule: target " + std::to_string(index) +
                         " cannot keep the board visible within the depth limit");
            }
            pose.translation = depth * ray - pl.rotation * center;
            if (visible_fraction(board, pose, K_guess, img_size) >= params.min_visible_fraction) {
                break;
            }
            depth *= 1.1;
        }
        schedule.push_back(make_target(board, img_size, index, pose, K_guess));
    }
    return schedule;
}

auto pose_reached(const ViewObservation& current, const TargetPose& target, double tau) -> bool {
    require(tau > 0.0, "pose_reached: tau must be positive");
    if (target.corner_targets.empty()) {
        return false;
    }
    std::size_t shared = 0;
    double dist_sum = 0.0;
    for (const auto& kp : current.points) {
        const auto it = target.corner_targets.find(kp.id);
        if (it != target.corner_targets.end()) {
            ++shared;
            dist_sum += (kp.px - it->second).norm();
        }
    }
    if (2 * shared < target.corner_targets.size()) {
        return false;
    }
    return dist_sum / static_cast<double>(shared) <= tau;
}

auto to_string(SessionStatus status) -> const char* {
    switch (status) {
        case SessionStatus::Capturing:
            return "capturing";
        case SessionStatus::Complete:
            return "complete";
        case SessionStatus::Failed:
            return "failed";
    }
    return "unknown";
}

auto to_string(AdvanceOutcome outcome) -> const char* {
    switch (outcome) {
        case AdvanceOutcome::Accepted:
            return "accepted";
        case AdvanceOutcome::RejectedPoseMismatch:
            return "rejected_pose_mismatch";
        case AdvanceOutcome::SessionComplete:
            return "session_complete";
    }
    return "unknown";
}

auto advance(const SessionState& state, const ViewObservation& obs, double tau) -> AdvanceResult {
    if (state.status != SessionStatus::Capturing) {
        fail(ErrorCode::SessionNotCapturing, "session " + state.session_id + " is not capturing");
    }
    require(state.next_index < static_cast<int>(state.schedule.size()),
            "session schedule is exhausted");

    AdvanceResult out{state, AdvanceOutcome::RejectedPoseMismatch};
    if (!pose_reached(obs, state.schedule[static_cast<std::size_t>(state.next_index)], tau)) {
        return out;
    }
    out.state.collected.push_back(obs);
    ++out.state.next_index;
    if (out.state.next_index >= static_cast<int>(out.state.schedule.size())) {
        out.state.status = SessionStatus::Complete;
        out.outcome = AdvanceOutcome::SessionComplete;
    } else {
        out.outcome = AdvanceOutcome::Accepted;
    }
    return out;
}

}  // namespace calibdb
