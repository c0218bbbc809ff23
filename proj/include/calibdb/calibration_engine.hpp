#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "calibdb/board.hpp"
#include "calibdb/camera_model.hpp"

namespace calibdb {

struct CalibrationResult {
    CameraIntrinsics intrinsics;
    DistortionParams distortion;
    ImageSize img_size;
    double avg_reprojection_error = 0.0;  // RMS of per-corner residual norms, pixels
    std::vector<Pose> per_view_poses;
    int n_views = 0;
};

/// Plane-to-image projective map, scaled so that H(2, 2) == 1.
struct Homography {
    Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();

    [[nodiscard]] auto apply(const Point2& p) const -> Point2 {
        const Eigen::Vector3d q = matrix * p.homogeneous();
        return q.hnormalized();
    }
};

struct LmOptions {
    int max_iter = 100;
    double gradient_tol = 1e-12;
    double lambda_init = 1e-3;
    double function_tol = 1e-15;  // relative cost decrease
    double step_tol = 1e-14;      // relative parameter change
};

enum class LmTermination { Gradient, CostStalled, StepSize, DampingExhausted, MaxIterations };

struct RefineReport {
    CalibrationResult result;
    std::vector<double> cost_history;  // sum of squared residuals, one entry per accepted state
    int iterations = 0;
    LmTermination termination = LmTermination::MaxIterations;
};

/// Normalized DLT. Needs at least 4 non-collinear correspondences.
[[nodiscard]] auto estimate_homography(std::span<const Point2> object_xy,
                                       std::span<const Point2> image_px) -> Homography;

/// Closed-form zero-skew intrinsics from three or more plane homographies.
[[nodiscard]] auto init_intrinsics_zhang(std::span<const Homography> homographies,
                                         ImageSize img_size) -> CameraIntrinsics;

[[nodiscard]] auto estimate_view_pose(const Homography& H, const CameraIntrinsics& K) -> Pose;

[[nodiscard]] auto refine_lm_report(std::span<const ViewObservation> views, const BoardSpec& board,
                                    const CalibrationResult& init, DistortionModel model,
                                    const LmOptions& opts = {}) -> RefineReport;

[[nodiscard]] auto refine_lm(std::span<const ViewObservation> views, const BoardSpec& board,
                             const CalibrationResult& init, DistortionModel model,
                             const LmOptions& opts = {}) -> CalibrationResult;

/// Homographies, Zhang initialization, per-view poses, then joint LM.
/// Views with fewer than kMinCornersPerView corners are ignored.
[[nodiscard]] auto calibrate(std::span<const ViewObservation> views, const BoardSpec& board,
                             DistortionModel model, ImageSize img_size,
                             const LmOptions& opts = {}) -> CalibrationResult;

[[nodiscard]] auto refit(std::span<const ViewObservation> stored_views, const BoardSpec& board,
                         DistortionModel new_model, ImageSize img_size,
                         const LmOptions& opts = {}) -> CalibrationResult;

inline constexpr int kMinViews = 3;
inline constexpr int kMinCornersPerView = 6;

namespace detail {

/// Pixel Jacobian of one board corner w.r.t. the LM parameter block
/// [fx, fy, cx, cy, k1, k2, k3, w1, w2, w3, t1, t2, t3], where the rotation
/// increment w acts on the left: R' = exp([w]x) R.
struct ProjectionJacobian {
    Point2 pixel;
    Eigen::Matrix<double, 2, 13> jacobian;
};

[[nodiscard]] auto projection_jacobian(const Point3& X_board, const CameraIntrinsics& K,
                                       const DistortionParams& d, const Eigen::Matrix3d& R,
                                       const Eigen::Vector3d& t) -> ProjectionJacobian;

}  // namespace detail

}  // namespace calibdb
