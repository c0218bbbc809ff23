#include "calibdb/calibration_engine.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "calibdb/errors.hpp"

namespace calibdb {

namespace {

constexpr int kGlobalParams = 7;
constexpr int kPoseParams = 6;

// Similarity that moves the centroid to the origin and scales the RMS
// distance from it to sqrt(2).
auto conditioning_transform(std::span<const Point2> pts) -> Eigen::Matrix3d {
    Point2 centroid = Point2::Zero();
    for (const auto& p : pts) {
        centroid += p;
    }
    centroid /= static_cast<double>(pts.size());
    double sq = 0.0;
    for (const auto& p : pts) {
        sq += (p - centroid).squaredNorm();
    }
    const double rms = std::sqrt(sq / static_cast<double>(pts.size()));
    if (!(rms > 0.0) || !std::isfinite(rms)) {
        fail(ErrorCode::DegenerateConfiguration, "homography: points coincide");
    }
    const double s = std::sqrt(2.0) / rms;
    Eigen::Matrix3d T;
    T << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
    return T;
}

auto is_collinear(std::span<const Point2> pts, const Eigen::Matrix3d& T) -> bool {
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : pts) {
        const Point2 q = (T * p.homogeneous()).hnormalized();
        cov += q * q.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    return eig.eigenvalues()(0) <= 1e-10 * eig.eigenvalues()(1);
}

auto skew(const Eigen::Vector3d& v) -> Eigen::Matrix3d {
    Eigen::Matrix3d S;
    S << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return S;
}

auto exp_so3(const Eigen::Vector3d& w) -> Eigen::Matrix3d {
    const double angle = w.norm();
    if (angle < 1e-300) {
        return Eigen::Matrix3d::Identity();
    }
    return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

auto nearest_rotation(const Eigen::Matrix3d& M) -> Eigen::Matrix3d {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    return svd.matrixU() * D * svd.matrixV().transpose();
}

// Zhang constraint row h_i^T B h_j over b = (B11, B22, B13, B23, B33).
auto zhang_row(const Eigen::Matrix3d& H, int i, int j) -> Eigen::Matrix<double, 1, 5> {
    const Eigen::Vector3d hi = H.col(i);
    const Eigen::Vector3d hj = H.col(j);
    Eigen::Matrix<double, 1, 5> v;
    v << hi(0) * hj(0), hi(1) * hj(1), hi(0) * hj(2) + hi(2) * hj(0),
        hi(1) * hj(2) + hi(2) * hj(1), hi(2) * hj(2);
    return v;
}

struct ViewData {
    std::vector<Point3> object;
    std::vector<Point2> observed;
};

auto gather_views(std::span<const ViewObservation> views, const BoardSpec& board)
    -> std::vector<ViewData> {
    const auto corners = corner_object_points(board);
    std::vector<ViewData> out;
    out.reserve(views.size());
    for (const auto& view : views) {
        ViewData vd;
        vd.object.reserve(view.points.size());
        vd.observed.reserve(view.points.size());
        for (const auto& kp : view.points) {
            require(kp.id >= 0 && kp.id < static_cast<int>(corners.size()),
                    "observation references corner id " + std::to_string(kp.id) +
                        " outside the board");
            vd.object.push_back(corners[static_cast<std::size_t>(kp.id)].position);
            vd.observed.push_back(kp.px);
        }
        out.push_back(std::move(vd));
    }
    return out;
}

struct LmState {
    CameraIntrinsics K;
    DistortionParams d;
    std::vector<Eigen::Matrix3d> R;
    std::vector<Eigen::Vector3d> t;
};

// Sum of squared residuals; +inf when a point falls behind a camera.
auto total_cost(const std::vector<ViewData>& data, const LmState& s) -> double {
    double cost = 0.0;
    for (std::size_t v = 0; v < data.size(); ++v) {
        for (std::size_t i = 0; i < data[v].object.size(); ++i) {
            const Point3 Xc = s.R[v] * data[v].object[i] + s.t[v];
            if (!(Xc.z() > 0.0)) {
                return std::numeric_limits<double>::infinity();
            }
            cost += (project(Xc, s.K, s.d) - data[v].observed[i]).squaredNorm();
        }
    }
    return cost;
}

auto apply_step(const LmState& s, const Eigen::VectorXd& delta) -> LmState {
    LmState out = s;
    out.K.fx += delta(0);
    out.K.fy += delta(1);
    out.K.cx += delta(2);
    out.K.cy += delta(3);
    for (int k = 0; k < 3; ++k) {
        out.d.k[static_cast<std::size_t>(k)] += delta(4 + k);
    }
    for (std::size_t v = 0; v < s.R.size(); ++v) {
        const int base = kGlobalParams + kPoseParams * static_cast<int>(v);
        out.R[v] = exp_so3(delta.segment<3>(base)) * s.R[v];
        out.t[v] += delta.segment<3>(base + 3);
    }
    return out;
}

auto to_pose(const Eigen::Matrix3d& R, const Eigen::Vector3d& t) -> Pose {
    Pose p;
    p.rotation = Eigen::Quaterniond(R).normalized();
    p.translation = t;
    return p;
}

auto corner_count(const std::vector<ViewData>& data) -> std::size_t {
    std::size_t n = 0;
    for (const auto& vd : data) {
        n += vd.object.size();
    }
    return n;
}

}  // namespace

namespace detail {

auto projection_jacobian(const Point3& X_board, const CameraIntrinsics& K,
                         const DistortionParams& d, const Eigen::Matrix3d& R,
                         const Eigen::Vector3d& t) -> ProjectionJacobian {
    const Point3 RX = R * X_board;
    const Point3 Xc = RX + t;
    if (!(Xc.z() > 0.0)) {
        fail(ErrorCode::BehindCamera, "jacobian: point is not in front of the camera");
    }
    const double inv_z = 1.0 / Xc.z();
    const Point2 n(Xc.x() * inv_z, Xc.y() * inv_z);
    const Point2 xd = distort(n, d);
    const DistortJacobian dj = distort_jacobian(n, d);

    Eigen::Matrix<double, 2, 3> dn_dXc;
    dn_dXc << inv_z, 0.0, -n.x() * inv_z, 0.0, inv_z, -n.y() * inv_z;
    const Eigen::Matrix2d F = Eigen::Vector2d(K.fx, K.fy).asDiagonal();
    const Eigen::Matrix<double, 2, 3> dpx_dXc = F * dj.d_point * dn_dXc;

    ProjectionJacobian out;
    out.pixel = Point2(K.fx * xd.x() + K.cx, K.fy * xd.y() + K.cy);
    out.jacobian.setZero();
    out.jacobian(0, 0) = xd.x();
    out.jacobian(1, 1) = xd.y();
    out.jacobian(0, 2) = 1.0;
    out.jacobian(1, 3) = 1.0;
    out.jacobian.block<2, 3>(0, 4) = F * dj.d_coeffs;
    out.jacobian.block<2, 3>(0, 7) = -dpx_dXc * skew(RX);
    out.jacobian.block<2, 3>(0, 10) = dpx_dXc;
    return out;
}

}  // namespace detail

auto estimate_homography(std::span<const Point2> object_xy, std::span<const Point2> image_px)
    -> Homography {
    require(object_xy.size() == image_px.size(), "homography: point lists differ in length");
    if (object_xy.size() < 4) {
        fail(ErrorCode::DegenerateConfiguration, "homography: needs at least 4 correspondences");
    }
    const Eigen::Matrix3d T_obj = conditioning_transform(object_xy);
    const Eigen::Matrix3d T_img = conditioning_transform(image_px);
    if (is_collinear(object_xy, T_obj) || is_collinear(image_px, T_img)) {
        fail(ErrorCode::DegenerateConfiguration, "homography: points are collinear");
    }

    const auto n = static_cast<Eigen::Index>(object_xy.size());
    Eigen::MatrixXd A(2 * n, 9);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Point2 p = (T_obj * object_xy[static_cast<std::size_t>(i)].homogeneous()).hnormalized();
        const Point2 q = (T_img * image_px[static_cast<std::size_t>(i)].homogeneous()).hnormalized();
        A.row(2 * i) << -p.x(), -p.y(), -1.0, 0.0, 0.0, 0.0, q.x() * p.x(), q.x() * p.y(), q.x();
        A.row(2 * i + 1) << 0.0, 0.0, 0.0, -p.x(), -p.y(), -1.0, q.y() * p.x(), q.y() * p.y(),
            q.y();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Eigen::Matrix3d Hn;
    Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

    Eigen::Matrix3d H = T_img.inverse() * Hn * T_obj;
    if (std::abs(H(2, 2)) < 1e-12 * H.norm()) {
        fail(ErrorCode::DegenerateConfiguration, "homography: plane origin maps to infinity");
    }
    H /= H(2, 2);
    if (!H.allFinite() || std::abs(H.determinant()) <= 1e-12) {
        fail(ErrorCode::DegenerateConfiguration, "homography: estimate is singular");
    }
    return Homography{H};
}

auto init_intrinsics_zhang(std::span<const Homography> homographies, ImageSize img_size)
    -> CameraIntrinsics {
    require(homographies.size() >= 3, "zhang: needs at least 3 homographies");
    require(img_size.valid(), "zhang: img_size must be positive");

    // Work in conditioned pixel coordinates: centered, unit-order scale.
    const double s = 2.0 / (img_size.width + img_size.height);
    const double ox = 0.5 * img_size.width;
    const double oy = 0.5 * img_size.height;
    Eigen::Matrix3d N;
    N << s, 0.0, -s * ox, 0.0, s, -s * oy, 0.0, 0.0, 1.0;

    const auto m = static_cast<Eigen::Index>(homographies.size());
    Eigen::MatrixXd V(2 * m, 5);
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::Matrix3d H = N * homographies[static_cast<std::size_t>(i)].matrix;
        H /= H.norm();
        Eigen::Matrix<double, 1, 5> r12 = zhang_row(H, 0, 1);
        Eigen::Matrix<double, 1, 5> rdiff = zhang_row(H, 0, 0) - zhang_row(H, 1, 1);
        V.row(2 * i) = r12;
        V.row(2 * i + 1) = rdiff;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(V, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv.size() < 5 || sv(3) <= 1e-7 * sv(0)) {
        fail(ErrorCode::DegenerateMotion,
             "zhang: board orientations do not constrain the intrinsics");
    }
    Eigen::Matrix<double, 5, 1> b = svd.matrixV().col(4);
    if (b(0) < 0.0) {
        b = -b;
    }
    const double B11 = b(0);
    const double B22 = b(1);
    const double B13 = b(2);
    const double B23 = b(3);
    const double B33 = b(4);
    if (!(B11 > 0.0) || !(B22 > 0.0)) {
        fail(ErrorCode::DegenerateMotion, "zhang: conic is not positive definite");
    }
    const double lambda = B33 - B13 * B13 / B11 - B23 * B23 / B22;
    if (!(lambda > 0.0)) {
        fail(ErrorCode::DegenerateMotion, "zhang: conic is not positive definite");
    }

    CameraIntrinsics K;
    K.fx = std::sqrt(lambda / B11) / s;
    K.fy = std::sqrt(lambda / B22) / s;
    K.cx = -B13 / B11 / s + ox;
    K.cy = -B23 / B22 / s + oy;
    if (!K.valid()) {
        fail(ErrorCode::DegenerateMotion, "zhang: non-finite intrinsics");
    }
    return K;
}

auto estimate_view_pose(const Homography& H, const CameraIntrinsics& K) -> Pose {
    require(K.valid(), "pose: invalid intrinsics");
    require(std::abs(H.matrix.determinant()) > 1e-12, "pose: homography is singular");
    const Eigen::Matrix3d M = K.matrix().inverse() * H.matrix;
    double lambda = 1.0 / M.col(0).norm();
    if (M(2, 2) * lambda < 0.0) {
        lambda = -lambda;
    }
    const Eigen::Vector3d r1 = lambda * M.col(0);
    const Eigen::Vector3d r2 = lambda * M.col(1);
    const Eigen::Vector3d t = lambda * M.col(2);
    if (!(t.z() > 0.0)) {
        fail(ErrorCode::BehindCamera, "pose: board is not in front of the camera");
    }
    Eigen::Matrix3d R;
    R.col(0) = r1;
    R.col(1) = r2;
    R.col(2) = r1.cross(r2);
    return to_pose(nearest_rotation(R), t);
}

auto refine_lm_report(std::span<const ViewObservation> views, const BoardSpec& board,
                      const CalibrationResult& init, DistortionModel model, const LmOptions& opts)
    -> RefineReport {
    if (static_cast<int>(views.size()) < kMinViews) {
        fail(ErrorCode::InsufficientData, "refine: needs at least 3 views");
    }
    require(init.per_view_poses.size() == views.size(),
            "refine: one initial pose per view is required");
    require(init.intrinsics.valid() && init.distortion.valid(), "refine: initial guess not finite");
    for (const auto& v : views) {
        require(static_cast<int>(v.points.size()) >= kMinCornersPerView,
                "refine: every view needs at least 6 corners");
    }

    const auto data = gather_views(views, board);
    const std::size_t n_corners = corner_count(data);
    const int n_params = kGlobalParams + kPoseParams * static_cast<int>(views.size());

    LmState state;
    state.K = init.intrinsics;
    state.d = init.distortion;
    state.d.model = model;
    for (const auto& pose : init.per_view_poses) {
        state.R.push_back(pose.rotation.normalized().toRotationMatrix());
        state.t.push_back(pose.translation);
    }

    RefineReport report;
    double cost = total_cost(data, state);
    if (!std::isfinite(cost)) {
        fail(ErrorCode::NumericalFailure, "refine: initial cost is not finite");
    }
    report.cost_history.push_back(cost);

    double lambda = opts.lambda_init;
    Eigen::MatrixXd A(n_params, n_params);
    Eigen::VectorXd g(n_params);
    bool done = false;

    while (!done && report.iterations < opts.max_iter) {
        // Normal equations, accumulated block-wise.
        A.setZero();
        g.setZero();
        for (std::size_t v = 0; v < data.size(); ++v) {
            const int base = kGlobalParams + kPoseParams * static_cast<int>(v);
            for (std::size_t i = 0; i < data[v].object.size(); ++i) {
                const auto pj = detail::projection_jacobian(data[v].object[i], state.K, state.d,
                                                            state.R[v], state.t[v]);
                const Eigen::Vector2d r = pj.pixel - data[v].observed[i];
                const auto Jg = pj.jacobian.leftCols<kGlobalParams>();
                const auto Jp = pj.jacobian.rightCols<kPoseParams>();
                A.topLeftCorner<kGlobalParams, kGlobalParams>().noalias() += Jg.transpose() * Jg;
                A.block<kGlobalParams, kPoseParams>(0, base).noalias() += Jg.transpose() * Jp;
                A.block<kPoseParams, kPoseParams>(base, base).noalias() += Jp.transpose() * Jp;
                g.head<kGlobalParams>().noalias() += Jg.transpose() * r;
                g.segment<kPoseParams>(base).noalias() += Jp.transpose() * r;
            }
        }
        A.triangularView<Eigen::StrictlyLower>() = A.transpose();
        if (!A.allFinite() || !g.allFinite()) {
            fail(ErrorCode::NumericalFailure, "refine: non-finite Jacobian");
        }
        if (g.lpNorm<Eigen::Infinity>() <= opts.gradient_tol) {
            report.termination = LmTermination::Gradient;
            break;
        }

        const Eigen::VectorXd diag = A.diagonal().cwiseMax(1e-12 * A.diagonal().maxCoeff());
        bool accepted = false;
        while (!accepted && report.iterations < opts.max_iter) {
            ++report.iterations;
            Eigen::MatrixXd damped = A;
            damped.diagonal() += lambda * diag;
            const Eigen::VectorXd delta = damped.ldlt().solve(-g);
            if (!delta.allFinite()) {
                fail(ErrorCode::NumericalFailure, "refine: linear solve failed");
            }
            LmState candidate = apply_step(state, delta);
            const double new_cost = total_cost(data, candidate);
            if (std::isfinite(new_cost) && new_cost < cost) {
                const double decrease = cost - new_cost;
                state = std::move(candidate);
                cost = new_cost;
                report.cost_history.push_back(cost);
                lambda = std::max(lambda / 10.0, 1e-15);
                accepted = true;

                double scale = std::abs(state.K.fx) + std::abs(state.K.fy) + std::abs(state.K.cx) +
                               std::abs(state.K.cy);
                for (const auto& t : state.t) {
                    scale += t.norm();
                }
                if (cost == 0.0 || decrease <= opts.function_tol * (cost + decrease)) {
                    report.termination = LmTermination::CostStalled;
                    done = true;
                } else if (delta.norm() <= opts.step_tol * (scale + opts.step_tol)) {
                    report.termination = LmTermination::StepSize;
                    done = true;
                }
            } else {
                lambda *= 10.0;
                if (lambda > 1e16) {
                    report.termination = LmTermination::DampingExhausted;
                    done = true;
                    break;
                }
            }
        }
    }

    CalibrationResult& out = report.result;
    out.intrinsics = state.K;
    out.distortion = state.d;
    out.img_size = init.img_size;
    out.n_views = static_cast<int>(views.size());
    out.avg_reprojection_error = std::sqrt(cost / static_cast<double>(n_corners));
    for (std::size_t v = 0; v < state.R.size(); ++v) {
        out.per_view_poses.push_back(to_pose(state.R[v], state.t[v]));
    }
    if (!std::isfinite(out.avg_reprojection_error) || !out.intrinsics.valid()) {
        fail(ErrorCode::NumericalFailure, "refine: diverged to an invalid camera");
    }
    return report;
}

auto refine_lm(std::span<const ViewObservation> views, const BoardSpec& board,
               const CalibrationResult& init, DistortionModel model, const LmOptions& opts)
    -> CalibrationResult {
    return refine_lm_report(views, board, init, model, opts).result;
}

auto calibrate(std::span<const ViewObservation> views, const BoardSpec& board,
               DistortionModel model, ImageSize img_size, const LmOptions& opts)
    -> CalibrationResult {
    require(board.valid(), "calibrate: invalid board");
    require(img_size.valid(), "calibrate: img_size must be positive");

    std::vector<ViewObservation> usable;
    for (const auto& v : views) {
        if (static_cast<int>(v.points.size()) >= kMinCornersPerView) {
            usable.push_back(v);
        }
    }
    if (static_cast<int>(usable.size()) < kMinViews) {
        fail(ErrorCode::InsufficientData,
             "calibrate: needs at least 3 views with 6 or more corners, got " +
                 std::to_string(usable.size()));
    }

    const auto data = gather_views(usable, board);
    std::vector<Homography> homographies;
    homographies.reserve(data.size());
    for (const auto& vd : data) {
        std::vector<Point2> plane;
        plane.reserve(vd.object.size());
        for (const auto& X : vd.object) {
            plane.emplace_back(X.x(), X.y());
        }
        homographies.push_back(estimate_homography(plane, vd.observed));
    }

    CalibrationResult init;
    init.intrinsics = init_intrinsics_zhang(homographies, img_size);
    init.distortion = DistortionParams{model, {0.0, 0.0, 0.0}};
    init.img_size = img_size;
    for (const auto& H : homographies) {
        init.per_view_poses.push_back(estimate_view_pose(H, init.intrinsics));
    }
    init.n_views = static_cast<int>(usable.size());
    return refine_lm(usable, board, init, model, opts);
}

auto refit(std::span<const ViewObservation> stored_views, const BoardSpec& board,
           DistortionModel new_model, ImageSize img_size, const LmOptions& opts)
    -> CalibrationResult {
    return calibrate(stored_views, board, new_model, img_size, opts);
}

}  // namespace calibdb
