#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibdb/calibration_engine.hpp"
#include "calibdb/camera_key.hpp"
#include "calibdb/simulation.hpp"

namespace calibdb {

/// Parameter errors against ground truth: relative for focal lengths,
/// absolute (pixels / unitless) for the rest.
struct ParamErrors {
    double fx_rel = 0.0;
    double fy_rel = 0.0;
    double cx_abs = 0.0;
    double cy_abs = 0.0;
    std::array<double, 3> k_abs{};
};

[[nodiscard]] auto compare_to_truth(const CalibrationResult& result,
                                    const SimCameraProfile& truth) -> ParamErrors;

struct SessionOptions {
    /// Submit one observation far from the first target before complying.
    bool inject_wrong_pose = false;
};

struct SessionReport {
    std::string session_id;
    std::string record_id;
    CalibrationResult calibration;
    int n_submissions = 0;
    int n_accepted = 0;
    int n_mismatches = 0;
    ParamErrors errors;
    double elapsed_s = 0.0;
};

struct QueryReply {
    int status = 0;
    std::string body;
    std::optional<std::string> location;
    std::optional<CalibrationResult> calibration;
};

struct SeedOptions {
    /// Alternate the true focal length by +-this fraction between sessions.
    double focal_alternation = 0.0;
    /// Sessions run concurrently on this many client threads.
    int parallel = 1;
    std::optional<DistortionModel> query_model;
};

struct SeedSummary {
    std::vector<SessionReport> sessions;
    QueryReply query;
};

/// Drives one full guidance session as a compliant user holding the board
/// where the overlay asks for it.
[[nodiscard]] auto run_session(const SimCameraProfile& profile, const std::string& server_url,
                               const std::string& token, const SessionOptions& options = {})
    -> SessionReport;

[[nodiscard]] auto query_calibration(const CameraKey& key, const std::string& server_url,
                                     std::optional<DistortionModel> model = std::nullopt)
    -> QueryReply;

/// Runs n_sessions sessions with distinct seeds, then queries the key.
[[nodiscard]] auto seed_reliability(const SimCameraProfile& profile,
                                    const std::string& server_url, const std::string& token,
                                    int n_sessions, const SeedOptions& options = {})
    -> SeedSummary;

[[nodiscard]] auto to_json(const ParamErrors& e) -> nlohmann::json;
[[nodiscard]] auto to_json(const SessionReport& r) -> nlohmann::json;
[[nodiscard]] auto to_json(const QueryReply& q) -> nlohmann::json;
[[nodiscard]] auto to_json(const SeedSummary& s) -> nlohmann::json;

}  // namespace calibdb
