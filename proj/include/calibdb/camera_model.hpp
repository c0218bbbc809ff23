#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace calibdb {

using Point2 = Eigen::Vector2d;
using Point3 = Eigen::Vector3d;

struct ImageSize {
    int width = 0;
    int height = 0;

    [[nodiscard]] auto valid() const -> bool { return width > 0 && height > 0; }
    [[nodiscard]] auto contains(const Point2& px) const -> bool {
        return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < width && px.y() < height;
    }
    friend auto operator==(const ImageSize&, const ImageSize&) -> bool = default;
};

/// Pinhole intrinsics with zero skew.
struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;

    [[nodiscard]] auto valid() const -> bool;
    [[nodiscard]] auto matrix() const -> Eigen::Matrix3d;
    friend auto operator==(const CameraIntrinsics&, const CameraIntrinsics&) -> bool = default;
};

enum class DistortionModel { Rectilinear, Fisheye };

[[nodiscard]] auto to_string(DistortionModel model) -> std::string_view;
[[nodiscard]] auto parse_distortion_model(std::string_view text) -> std::optional<DistortionModel>;

/// Radial distortion: k1..k3 applied to r^2 powers (rectilinear) or odd
/// powers of the incidence angle (fisheye).
struct DistortionParams {
    DistortionModel model = DistortionModel::Rectilinear;
    std::array<double, 3> k{0.0, 0.0, 0.0};

    [[nodiscard]] auto valid() const -> bool;
    friend auto operator==(const DistortionParams&, const DistortionParams&) -> bool = default;
};

struct UndistortOptions {
    double tol = 1e-10;
    int max_iter = 50;
};

/// Partial derivatives of distort() at a point.
struct DistortJacobian {
    Eigen::Matrix2d d_point;                // d(out) / d(x, y)
    Eigen::Matrix<double, 2, 3> d_coeffs;   // d(out) / d(k1, k2, k3)
};

[[nodiscard]] auto distort(const Point2& p, const DistortionParams& d) -> Point2;
[[nodiscard]] auto distort_jacobian(const Point2& p, const DistortionParams& d) -> DistortJacobian;

/// Inverts distort() along the radial direction. Throws NonConvergence
/// when the radial map is not invertible at this point.
[[nodiscard]] auto undistort(const Point2& p_d, const DistortionParams& d,
                             const UndistortOptions& opts = {}) -> Point2;

/// Largest normalized radius up to which the radial map stays strictly
/// increasing (capped at `limit`). Points beyond it fold back.
[[nodiscard]] auto monotone_radius(const DistortionParams& d, double limit = 10.0) -> double;

/// Pixel projection of a camera-frame point. Throws BehindCamera for Z <= 0.
[[nodiscard]] auto project(const Point3& P, const CameraIntrinsics& K, const DistortionParams& d)
    -> Point2;

/// Pixel to normalized (undistorted) image-plane coordinates.
[[nodiscard]] auto unproject(const Point2& px, const CameraIntrinsics& K,
                             const DistortionParams& d, const UndistortOptions& opts = {})
    -> Point2;

/// Source-pixel lookup table that removes lens distortion: entry (x, y)
/// holds the position in the distorted image to sample for destination
/// pixel (x, y) of an ideal pinhole camera with intrinsics `K_new`.
struct RectificationMap {
    ImageSize size;
    std::vector<Point2> map;  // row-major, size.width * size.height

    [[nodiscard]] auto at(int x, int y) const -> const Point2& {
        return map[static_cast<std::size_t>(y) * static_cast<std::size_t>(size.width) +
                   static_cast<std::size_t>(x)];
    }
};

[[nodiscard]] auto compute_rectification_map(const CameraIntrinsics& K, const DistortionParams& d,
                                             const CameraIntrinsics& K_new, ImageSize size)
    -> RectificationMap;

}  // namespace calibdb
