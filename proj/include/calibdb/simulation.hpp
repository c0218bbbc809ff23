#pragma once

#include <cstdint>

#include "calibdb/board.hpp"
#include "calibdb/camera_key.hpp"
#include "calibdb/camera_model.hpp"
#include "calibdb/guidance.hpp"

namespace calibdb {

/// Ground truth for a simulated camera.
struct SimCameraProfile {
    CameraIntrinsics intrinsics;
    DistortionParams distortion;
    ImageSize img_size;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    CameraKey camera_key;
};

/// Board pose at which the true camera sees the board where the overlay
/// asks for it: least-squares fit of projected corners to the target pixels.
/// Models a compliant user steering the board onto the overlay.
[[nodiscard]] auto align_pose_to_target(const BoardSpec& board, const TargetPose& target,
                                        const CameraIntrinsics& K, const DistortionParams& d)
    -> Pose;

/// Detection of the board held at the aligned pose for `target`.
[[nodiscard]] auto simulate_target_view(const SimCameraProfile& profile, const BoardSpec& board,
                                        const TargetPose& target, std::uint64_t seed)
    -> ViewObservation;

}  // namespace calibdb
