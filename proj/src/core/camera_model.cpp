#include "calibdb/camera_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "calibdb/errors.hpp"

namespace calibdb {

namespace {

// Below this normalized radius the fisheye factor theta/r is taken at its limit.
constexpr double kFisheyeTaylorRadius = 1e-8;

// theta + k1 theta^3 + k2 theta^5 + k3 theta^7 and its derivative in theta.
auto odd_poly(double t, const std::array<double, 3>& k) -> double {
    const double t2 = t * t;
    return t * (1.0 + t2 * (k[0] + t2 * (k[1] + t2 * k[2])));
}

auto odd_poly_deriv(double t, const std::array<double, 3>& k) -> double {
    const double t2 = t * t;
    return 1.0 + t2 * (3.0 * k[0] + t2 * (5.0 * k[1] + t2 * 7.0 * k[2]));
}

// Derivative of the radial map r -> r_d.
auto radial_map_deriv(double r, const DistortionParams& d) -> double {
    if (d.model == DistortionModel::Rectilinear) {
        return odd_poly_deriv(r, d.k);
    }
    return odd_poly_deriv(std::atan(r), d.k) / (1.0 + r * r);
}

// Solves poly(x) = target for x >= 0 by damped Newton starting at x0.
auto solve_odd_poly(double target, double x0, const std::array<double, 3>& k, double tol,
                    int max_iter, double x_max) -> double {
    double x = x0;
    double res = odd_poly(x, k) - target;
    for (int it = 0; it < max_iter; ++it) {
        if (std::abs(res) <= tol) {
            const double deriv = odd_poly_deriv(x, k);
            if (deriv > 0.0) {
                const double polished = x - res / deriv;
                if (std::abs(odd_poly(polished, k) - target) <= std::abs(res)) {
                    x = polished;
                }
            }
            return x;
        }
        const double deriv = odd_poly_deriv(x, k);
        if (!(deriv > 0.0)) {
            break;
        }
        const double step = res / deriv;
        double alpha = 1.0;
        bool improved = false;
        for (int halving = 0; halving < 30; ++halving) {
            const double candidate = x - alpha * step;
            if (candidate >= 0.0 && candidate < x_max) {
                const double cand_res = odd_poly(candidate, k) - target;
                if (std::abs(cand_res) < std::abs(res)) {
                    x = candidate;
                    res = cand_res;
                    improved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if (!improved) {
            break;
        }
    }
    if (std::abs(res) <= tol) {
        return x;
    }
    fail(ErrorCode::NonConvergence, "undistort: radial inversion did not converge");
}

}  // namespace

auto CameraIntrinsics::valid() const -> bool {
    return std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy) &&
           fx > 0.0 && fy > 0.0;
}

auto CameraIntrinsics::matrix() const -> Eigen::Matrix3d {
    Eigen::Matrix3d K;
    K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return K;
}

auto to_string(DistortionModel model) -> std::string_view {
    switch (model) {
        case DistortionModel::Rectilinear:
            return "rectilinear";
        case DistortionModel::Fisheye:
            return "fisheye";
    }
    return "unknown";
}

auto parse_distortion_model(std::string_view text) -> std::optional<DistortionModel> {
    if (text == "rectilinear") {
        return DistortionModel::Rectilinear;
    }
    if (text == "fisheye") {
        return DistortionModel::Fisheye;
    }
    return std::nullopt;
}

auto DistortionParams::valid() const -> bool {
    return std::isfinite(k[0]) && std::isfinite(k[1]) && std::isfinite(k[2]);
}

auto distort(const Point2& p, const DistortionParams& d) -> Point2 {
    const double r2 = p.squaredNorm();
    if (d.model == DistortionModel::Rectilinear) {
        return p * (1.0 + r2 * (d.k[0] + r2 * (d.k[1] + r2 * d.k[2])));
    }
    const double r = std::sqrt(r2);
    if (r < kFisheyeTaylorRadius) {
        return p;
    }
    return p * (odd_poly(std::atan(r), d.k) / r);
}

auto distort_jacobian(const Point2& p, const DistortionParams& d) -> DistortJacobian {
    DistortJacobian J;
    const double r2 = p.squaredNorm();
    if (d.model == DistortionModel::Rectilinear) {
        const double s = 1.0 + r2 * (d.k[0] + r2 * (d.k[1] + r2 * d.k[2]));
        const double ds_dr2 = d.k[0] + r2 * (2.0 * d.k[1] + 3.0 * r2 * d.k[2]);
        J.d_point = s * Eigen::Matrix2d::Identity() + 2.0 * ds_dr2 * p * p.transpose();
        J.d_coeffs.col(0) = p * r2;
        J.d_coeffs.col(1) = p * (r2 * r2);
        J.d_coeffs.col(2) = p * (r2 * r2 * r2);
        return J;
    }

    const double r = std::sqrt(r2);
    if (r < kFisheyeTaylorRadius) {
        J.d_point.setIdentity();
        J.d_coeffs.col(0) = p * r2;
        J.d_coeffs.col(1) = p * (r2 * r2);
        J.d_coeffs.col(2) = p * (r2 * r2 * r2);
        return J;
    }
    const double theta = std::atan(r);
    const double s = odd_poly(theta, d.k) / r;
    const double ds_dr = (odd_poly_deriv(theta, d.k) / (1.0 + r2) - s) / r;
    J.d_point = s * Eigen::Matrix2d::Identity() + (ds_dr / r) * p * p.transpose();
    const double t2 = theta * theta;
    const double t3 = theta * t2;
    J.d_coeffs.col(0) = p * (t3 / r);
    J.d_coeffs.col(1) = p * (t3 * t2 / r);
    J.d_coeffs.col(2) = p * (t3 * t2 * t2 / r);
    return J;
}

auto undistort(const Point2& p_d, const DistortionParams& d, const UndistortOptions& opts)
    -> Point2 {
    require(p_d.allFinite(), "undistort: point must be finite");
    require(opts.tol > 0.0, "undistort: tol must be positive");
    const double r_d = p_d.norm();
    if (r_d == 0.0) {
        return p_d;
    }
    if (d.k == std::array<double, 3>{0.0, 0.0, 0.0} && d.model == DistortionModel::Rectilinear) {
        return p_d;
    }

    if (d.model == DistortionModel::Rectilinear) {
        const double r = solve_odd_poly(r_d, r_d, d.k, opts.tol, opts.max_iter,
                                        std::numeric_limits<double>::infinity());
        return p_d * (r / r_d);
    }

    // Fisheye: invert theta_d(theta) = r_d, then r = tan(theta).
    if (r_d < kFisheyeTaylorRadius) {
        return p_d;
    }
    constexpr double half_pi = std::numbers::pi / 2.0;
    const double theta0 = std::min(r_d, half_pi * 0.999);
    const double theta = solve_odd_poly(r_d, theta0, d.k, opts.tol, opts.max_iter, half_pi);
    return p_d * (std::tan(theta) / r_d);
}

auto monotone_radius(const DistortionParams& d, double limit) -> double {
    constexpr double step = 1e-3;
    double last_good = 0.0;
    for (double r = step; r <= limit; r += step) {
        if (!(radial_map_deriv(r, d) > 0.0)) {
            return last_good;
        }
        last_good = r;
    }
    return limit;
}

auto project(const Point3& P, const CameraIntrinsics& K, const DistortionParams& d) -> Point2 {
    if (!(P.z() > 0.0)) {
        fail(ErrorCode::BehindCamera, "project: point is not in front of the camera");
    }
    const Point2 xd = distort(Point2(P.x() / P.z(), P.y() / P.z()), d);
    return {K.fx * xd.x() + K.cx, K.fy * xd.y() + K.cy};
}

auto unproject(const Point2& px, const CameraIntrinsics& K, const DistortionParams& d,
               const UndistortOptions& opts) -> Point2 {
    require(K.fx > 0.0 && K.fy > 0.0, "unproject: focal lengths must be positive");
    return undistort(Point2((px.x() - K.cx) / K.fx, (px.y() - K.cy) / K.fy), d, opts);
}

auto compute_rectification_map(const CameraIntrinsics& K, const DistortionParams& d,
                               const CameraIntrinsics& K_new, ImageSize size)
    -> RectificationMap {
    require(size.valid(), "rectification map: size must be positive");
    require(K.valid() && K_new.valid(), "rectification map: invalid intrinsics");
    RectificationMap out;
    out.size = size;
    out.map.resize(static_cast<std::size_t>(size.width) * static_cast<std::size_t>(size.height));
    std::size_t idx = 0;
    for (int y = 0; y < size.height; ++y) {
        const double ny = (y - K_new.cy) / K_new.fy;
        for (int x = 0; x < size.width; ++x) {
            const Point2 xd = distort(Point2((x - K_new.cx) / K_new.fx, ny), d);
            out.map[idx++] = Point2(K.fx * xd.x() + K.cx, K.fy * xd.y() + K.cy);
        }
    }
    return out;
}

}  // namespace calibdb
