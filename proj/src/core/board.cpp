#include "calibdb/board.hpp"

#include <cmath>
#include <random>
#include <unordered_set>

#include "calibdb/errors.hpp"

namespace calibdb {

auto BoardSpec::valid() const -> bool {
    return squares_x >= 3 && squares_y >= 3 && std::isfinite(square_length) &&
           square_length > 0.0;
}

auto ViewObservation::validate() const -> std::optional<std::string> {
    if (!img_size.valid()) {
        return "img_size must be positive";
    }
    std::unordered_set<int> seen;
    for (const auto& kp : points) {
        if (kp.id < 0) {
            return "corner id " + std::to_string(kp.id) + " is negative";
        }
        if (!seen.insert(kp.id).second) {
            return "duplicate corner id " + std::to_string(kp.id);
        }
        if (!kp.px.allFinite() || !img_size.contains(kp.px)) {
            return "corner " + std::to_string(kp.id) + " lies outside the image";
        }
    }
    return std::nullopt;
}

auto corner_object_points(const BoardSpec& spec) -> std::vector<BoardCorner> {
    require(spec.valid(), "board spec is invalid");
    std::vector<BoardCorner> corners;
    corners.reserve(static_cast<std::size_t>(spec.corner_count()));
    int id = 0;
    for (int i = 1; i < spec.squares_y; ++i) {
        for (int j = 1; j < spec.squares_x; ++j) {
            corners.push_back({id++, Point3(j * spec.square_length, i * spec.square_length, 0.0)});
        }
    }
    return corners;
}

auto board_outline(const BoardSpec& spec) -> std::array<Point3, 4> {
    return {Point3(0.0, 0.0, 0.0), Point3(spec.width(), 0.0, 0.0),
            Point3(spec.width(), spec.height(), 0.0), Point3(0.0, spec.height(), 0.0)};
}

auto simulate_detection(const BoardSpec& spec, const Pose& pose, const CameraIntrinsics& K,
                        const DistortionParams& d, double noise_sigma, std::uint64_t seed,
                        ImageSize img_size) -> ViewObservation {
    require(noise_sigma >= 0.0, "noise_sigma must be non-negative");
    require(img_size.valid(), "img_size must be positive");

    // Beyond this radius the radial map folds back and would produce
    // phantom in-frame detections.
    constexpr double radius_limit = 10.0;
    const double r_valid = monotone_radius(d, radius_limit);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    ViewObservation obs;
    obs.img_size = img_size;
    for (const auto& corner : corner_object_points(spec)) {
        const Point3 Xc = pose.transform(corner.position);
        if (!(Xc.z() > 0.0)) {
            continue;
        }
        Point2 px = project(Xc, K, d);
        px.x() += noise_sigma * noise(rng);
        px.y() += noise_sigma * noise(rng);
        if (r_valid < radius_limit && Point2(Xc.x() / Xc.z(), Xc.y() / Xc.z()).norm() >= r_valid) {
            continue;
        }
        if (img_size.contains(px)) {
            obs.points.push_back({corner.id, px});
        }
    }
    return obs;
}

}  // namespace calibdb
