#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "calibdb/board.hpp"
#include "calibdb/calib_store.hpp"
#include "calibdb/calibration_engine.hpp"
#include "calibdb/guidance.hpp"
#include "calibdb/simulation.hpp"

namespace calibdb::testing {

inline auto webcam_profile(double sigma, std::uint64_t seed = 1) -> SimCameraProfile {
    SimCameraProfile p;
    p.intrinsics = {1430.0, 1430.0, 952.0, 505.0};
    p.distortion = {DistortionModel::Rectilinear, {-0.1, 0.02, 0.0}};
    p.img_size = {1920, 1080};
    p.noise_sigma = sigma;
    p.seed = seed;
    p.camera_key = {"Integrated Webcam (0bda:58f4)", "Linux x86_64", p.img_size, 0.0};
    return p;
}

/// 120 degree horizontal field of view on a 1280x960 equidistant fisheye.
inline auto fisheye_wide_profile(double sigma, std::uint64_t seed = 1) -> SimCameraProfile {
    SimCameraProfile p;
    const double f = 640.0 / (std::numbers::pi / 3.0);
    p.intrinsics = {f, f, 640.0, 480.0};
    p.distortion = {DistortionModel::Fisheye, {0.0, 0.0, 0.0}};
    p.img_size = {1280, 960};
    p.noise_sigma = sigma;
    p.seed = seed;
    p.camera_key = {"Wide Action Cam", "Linux x86_64", p.img_size, 0.0};
    return p;
}

/// Board centered on the viewing direction (theta off-axis, phi azimuth) at
/// distance `dist`, tilted by `tilt` about an in-plane axis.
inline auto view_pose(const BoardSpec& b, double theta, double phi, double dist, double tilt)
    -> Pose {
    const Eigen::Vector3d u(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                            std::cos(theta));
    Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), u);
    q = q * Eigen::Quaterniond(Eigen::AngleAxisd(
                tilt, Eigen::Vector3d(std::cos(phi + 1.0), std::sin(phi + 1.0), 0.0)));
    Pose p;
    p.rotation = q;
    const Eigen::Vector3d c(0.5 * b.width(), 0.5 * b.height(), 0.0);
    p.translation = dist * u - q * c;
    return p;
}

/// Poses reaching about 55 degrees off axis, to exercise the wide field.
inline auto wide_fov_poses(const BoardSpec& b) -> std::vector<Pose> {
    constexpr double deg = std::numbers::pi / 180.0;
    std::vector<Pose> poses{view_pose(b, 0.0, 0.0, 0.35, 0.3), view_pose(b, 0.0, 0.0, 0.5, -0.4)};
    for (int i = 0; i < 4; ++i) {
        poses.push_back(view_pose(b, 30.0 * deg, i * std::numbers::pi / 2.0, 0.4, 0.3));
    }
    for (int i = 0; i < 4; ++i) {
        poses.push_back(
            view_pose(b, 55.0 * deg, std::numbers::pi / 4.0 + i * std::numbers::pi / 2.0, 0.4, 0.2));
    }
    return poses;
}

inline auto views_at(const SimCameraProfile& p, const BoardSpec& b, const std::vector<Pose>& poses,
                     std::uint64_t seed) -> std::vector<ViewObservation> {
    std::vector<ViewObservation> views;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        views.push_back(simulate_detection(b, poses[i], p.intrinsics, p.distortion, p.noise_sigma,
                                           seed * 1000 + i, p.img_size));
    }
    return views;
}

/// Views at the default guidance schedule's exact target poses, with the
/// schedule built from the true intrinsics.
inline auto schedule_views(const SimCameraProfile& p, const BoardSpec& b, int n_targets,
                           std::uint64_t seed) -> std::vector<ViewObservation> {
    const auto schedule = make_schedule(b, p.img_size, n_targets, p.intrinsics);
    std::vector<Pose> poses;
    for (const auto& t : schedule) {
        poses.push_back(t.pose);
    }
    return views_at(p, b, poses, seed);
}

/// Root-mean-square corner residual, computed directly from the projection.
inline auto rms_residual(const std::vector<ViewObservation>& views, const BoardSpec& b,
                         const CalibrationResult& r) -> double {
    const auto corners = corner_object_points(b);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t v = 0; v < views.size(); ++v) {
        for (const auto& kp : views[v].points) {
            const Point3 Xc = r.per_view_poses[v].transform(corners[static_cast<std::size_t>(kp.id)].position);
            sum += (project(Xc, r.intrinsics, r.distortion) - kp.px).squaredNorm();
            ++n;
        }
    }
    return std::sqrt(sum / static_cast<double>(n));
}

/// Record built from views spread across the wide field, calibrated under
/// the profile's own model.
inline auto wide_field_record(const SimCameraProfile& p, std::uint64_t seed) -> CalibrationRecord {
    const BoardSpec b;
    CalibrationRecord r;
    r.key = p.camera_key;
    r.board = b;
    r.keypoints = views_at(p, b, wide_fov_poses(b), seed);
    r.result = calibrate(r.keypoints, b, p.distortion.model, p.img_size);
    return r;
}

inline auto temp_dir(const std::string& name) -> std::filesystem::path {
    static std::mt19937_64 rng{std::random_device{}()};
    auto dir = std::filesystem::temp_directory_path() /
               ("calibdb-" + name + "-" + std::to_string(rng()));
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace calibdb::testing
