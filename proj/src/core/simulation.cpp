#include "calibdb/simulation.hpp"

#include <Eigen/Cholesky>
#include <vector>

#include "calibdb/calibration_engine.hpp"
#include "calibdb/errors.hpp"

namespace calibdb {

namespace {

auto target_cost(const std::vector<Point3>& object, const std::vector<Point2>& pixels,
                 const Pose& pose, const CameraIntrinsics& K, const DistortionParams& d)
    -> double {
    double cost = 0.0;
    for (std::size_t i = 0; i < object.size(); ++i) {
        const Point3 Xc = pose.transform(object[i]);
        if (!(Xc.z() > 0.0)) {
            return std::numeric_limits<double>::infinity();
        }
        cost += (project(Xc, K, d) - pixels[i]).squaredNorm();
    }
    return cost;
}

}  // namespace

auto align_pose_to_target(const BoardSpec& board, const TargetPose& target,
                          const CameraIntrinsics& K, const DistortionParams& d) -> Pose {
    require(target.corner_targets.size() >= 4, "align: target has fewer than 4 corners");
    const auto corners = corner_object_points(board);
    std::vector<Point3> object;
    std::vector<Point2> pixels;
    std::vector<Point2> plane;
    for (const auto& [id, px] : target.corner_targets) {
        object.push_back(corners.at(static_cast<std::size_t>(id)).position);
        plane.emplace_back(object.back().x(), object.back().y());
        pixels.push_back(px);
    }

    // Distortion-free start, then refine the 6 pose parameters.
    Pose pose = estimate_view_pose(estimate_homography(plane, pixels), K);
    double cost = target_cost(object, pixels, pose, K, d);
    double lambda = 1e-3;
    for (int it = 0; it < 100 && std::isfinite(cost); ++it) {
        Eigen::Matrix<double, 6, 6> A = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        const Eigen::Matrix3d R = pose.rotation.toRotationMatrix();
        for (std::size_t i = 0; i < object.size(); ++i) {
            const auto pj = detail::projection_jacobian(object[i], K, d, R, pose.translation);
            const Eigen::Matrix<double, 2, 6> J = pj.jacobian.rightCols<6>();
            A += J.transpose() * J;
            g += J.transpose() * (pj.pixel - pixels[i]);
        }
        bool accepted = false;
        while (!accepted && lambda < 1e12) {
            Eigen::Matrix<double, 6, 6> damped = A;
            damped.diagonal() += lambda * A.diagonal();
            const Eigen::Matrix<double, 6, 1> step = damped.ldlt().solve(-g);
            Pose candidate;
            const Eigen::Vector3d w = step.head<3>();
            const double angle = w.norm();
            candidate.rotation =
                angle > 0.0 ? Eigen::Quaterniond(Eigen::AngleAxisd(angle, w / angle)) * pose.rotation
                            : pose.rotation;
            candidate.rotation.normalize();
            candidate.translation = pose.translation + step.tail<3>();
            const double c = target_cost(object, pixels, candidate, K, d);
            if (c < cost) {
                const bool tiny = cost - c <= 1e-12 * cost;
                pose = candidate;
                cost = c;
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                if (tiny) {
                    return pose;
                }
            } else {
                lambda *= 10.0;
            }
        }
        if (!accepted) {
            break;
        }
    }
    return pose;
}

auto simulate_target_view(const SimCameraProfile& profile, const BoardSpec& board,
                          const TargetPose& target, std::uint64_t seed) -> ViewObservation {
    const Pose pose =
        align_pose_to_target(board, target, profile.intrinsics, profile.distortion);
    return simulate_detection(board, pose, profile.intrinsics, profile.distortion,
                              profile.noise_sigma, seed, profile.img_size);
}

}  // namespace calibdb
