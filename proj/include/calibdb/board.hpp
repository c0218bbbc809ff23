#pragma once

#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calibdb/camera_model.hpp"

namespace calibdb {

/// ChArUco-style chessboard. Interior corners are identified row-major;
/// corner (i, j), i, j >= 1, sits at (j * square_length, i * square_length, 0).
struct BoardSpec {
    int squares_x = 8;
    int squares_y = 5;
    double square_length = 0.03;  // meters

    [[nodiscard]] auto valid() const -> bool;
    [[nodiscard]] auto corner_count() const -> int { return (squares_x - 1) * (squares_y - 1); }
    [[nodiscard]] auto width() const -> double { return squares_x * square_length; }
    [[nodiscard]] auto height() const -> double { return squares_y * square_length; }
    friend auto operator==(const BoardSpec&, const BoardSpec&) -> bool = default;
};

/// Board-to-camera rigid transform: X_cam = rotation * X_board + translation.
struct Pose {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    [[nodiscard]] auto transform(const Point3& X) const -> Point3 {
        return rotation * X + translation;
    }
};

struct BoardCorner {
    int id = 0;
    Point3 position;
};

struct Keypoint {
    int id = 0;
    Point2 px;
};

struct ViewObservation {
    std::vector<Keypoint> points;
    ImageSize img_size;

    /// Returns a description of the first violated invariant, if any.
    [[nodiscard]] auto validate() const -> std::optional<std::string>;
};

[[nodiscard]] auto corner_object_points(const BoardSpec& spec) -> std::vector<BoardCorner>;

/// Outer board boundary on the Z = 0 plane, in winding order.
[[nodiscard]] auto board_outline(const BoardSpec& spec) -> std::array<Point3, 4>;

/// Projects every board corner through the camera, adds Gaussian pixel
/// noise and keeps the corners that land inside the image.
[[nodiscard]] auto simulate_detection(const BoardSpec& spec, const Pose& pose,
                                      const CameraIntrinsics& K, const DistortionParams& d,
                                      double noise_sigma, std::uint64_t seed, ImageSize img_size)
    -> ViewObservation;

}  // namespace calibdb
