#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "calibdb/board.hpp"
#include "calibdb/calib_store.hpp"
#include "calibdb/calibration_engine.hpp"
#include "calibdb/camera_key.hpp"
#include "calibdb/guidance.hpp"
#include "calibdb/simulation.hpp"

// JSON encodings of the domain types. Parsers throw CalibError(ProtocolError).
namespace calibdb::wire {

using json = nlohmann::json;

/// Calibration-data request: exactly camera, platform, img_size, zoom and
/// optionally distortion_model.
struct QueryRequest {
    CameraKey key;
    std::optional<DistortionModel> distortion_model;
};

[[nodiscard]] auto parse_query_request(const json& j) -> QueryRequest;
[[nodiscard]] auto to_json(const QueryRequest& q) -> json;

/// Calibration-data response: img_size, camera_matrix, distortion_coefficients,
/// distortion_model, avg_reprojection_error.
[[nodiscard]] auto calibration_response(const CalibrationResult& r) -> json;
[[nodiscard]] auto parse_calibration_response(const json& j) -> CalibrationResult;

/// Sorted keys, two-space indent, trailing newline.
[[nodiscard]] auto canonical(const json& j) -> std::string;

[[nodiscard]] auto image_size_to_json(ImageSize s) -> json;
[[nodiscard]] auto image_size_from_json(const json& j) -> ImageSize;

[[nodiscard]] auto camera_key_to_json(const CameraKey& k) -> json;
[[nodiscard]] auto camera_key_from_json(const json& j) -> CameraKey;

[[nodiscard]] auto pose_to_json(const Pose& p) -> json;
[[nodiscard]] auto pose_from_json(const json& j) -> Pose;

[[nodiscard]] auto board_to_json(const BoardSpec& b) -> json;
[[nodiscard]] auto board_from_json(const json& j) -> BoardSpec;

[[nodiscard]] auto observation_to_json(const ViewObservation& v) -> json;
[[nodiscard]] auto observation_from_json(const json& j) -> ViewObservation;

[[nodiscard]] auto target_to_json(const TargetPose& t) -> json;
[[nodiscard]] auto target_from_json(const json& j) -> TargetPose;

[[nodiscard]] auto intrinsics_to_json(const CameraIntrinsics& K) -> json;
[[nodiscard]] auto intrinsics_from_json(const json& j) -> CameraIntrinsics;
[[nodiscard]] auto distortion_to_json(const DistortionParams& d) -> json;
[[nodiscard]] auto distortion_from_json(const json& j) -> DistortionParams;

[[nodiscard]] auto result_to_json(const CalibrationResult& r) -> json;
[[nodiscard]] auto result_from_json(const json& j) -> CalibrationResult;

[[nodiscard]] auto record_to_json(const CalibrationRecord& rec) -> json;
[[nodiscard]] auto record_from_json(const json& j) -> CalibrationRecord;

[[nodiscard]] auto profile_to_json(const SimCameraProfile& p) -> json;
[[nodiscard]] auto profile_from_json(const json& j) -> SimCameraProfile;

[[nodiscard]] auto parse_distortion_model_field(const json& j) -> DistortionModel;

}  // namespace calibdb::wire
