#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "calibdb/board.hpp"
#include "calibdb/camera_key.hpp"
#include "calibdb/camera_model.hpp"

namespace calibdb {

struct TargetPose {
    int index = 0;
    Pose pose;
    std::array<Point2, 4> outline_px;
    std::map<int, Point2> corner_targets;  // in-frame corners only
};

struct GuidanceParams {
    int n_targets = 10;
    double tau_px_720p = 20.0;          // pose-reached threshold at 720 rows
    double min_visible_fraction = 0.6;  // of board corners, under K_guess
    double max_depth = 10.0;            // meters
};

/// Pinhole guess for an unknown camera: square pixels, centered principal
/// point, given horizontal field of view.
[[nodiscard]] auto default_k_guess(ImageSize img_size, double hfov_deg = 60.0) -> CameraIntrinsics;

/// Pose-reached threshold scaled linearly with image height.
[[nodiscard]] auto scaled_tau(ImageSize img_size, double tau_px_720p) -> double;

/// Deterministic target sequence: fronto-parallel near/mid/far, +-35 degree
/// tilts about x and y, then off-center placements toward each quadrant.
[[nodiscard]] auto make_schedule(const BoardSpec& board, ImageSize img_size, int n_targets,
                                 const CameraIntrinsics& K_guess,
                                 const GuidanceParams& params = {}) -> std::vector<TargetPose>;

[[nodiscard]] auto make_target(const BoardSpec& board, ImageSize img_size, int index,
                               const Pose& pose, const CameraIntrinsics& K_guess) -> TargetPose;

[[nodiscard]] auto pose_reached(const ViewObservation& current, const TargetPose& target,
                                double tau) -> bool;

enum class SessionStatus { Capturing, Complete, Failed };
enum class AdvanceOutcome { Accepted, RejectedPoseMismatch, SessionComplete };

[[nodiscard]] auto to_string(SessionStatus status) -> const char*;
[[nodiscard]] auto to_string(AdvanceOutcome outcome) -> const char*;

struct SessionState {
    std::string session_id;
    CameraKey camera_key;
    std::vector<TargetPose> schedule;
    int next_index = 0;
    std::vector<ViewObservation> collected;
    SessionStatus status = SessionStatus::Capturing;

    [[nodiscard]] auto remaining() const -> int {
        return static_cast<int>(schedule.size()) - next_index;
    }
};

struct AdvanceResult {
    SessionState state;
    AdvanceOutcome outcome = AdvanceOutcome::RejectedPoseMismatch;
};

/// Pure capture-loop transition. Throws SessionNotCapturing unless the
/// session is still capturing.
[[nodiscard]] auto advance(const SessionState& state, const ViewObservation& obs, double tau)
    -> AdvanceResult;

}  // namespace calibdb
