#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "calibdb/board.hpp"
#include "calibdb/calibration_engine.hpp"
#include "calibdb/camera_key.hpp"

namespace calibdb {

struct CalibrationRecord {
    std::string record_id;  // assigned by the store
    CameraKey key;
    CalibrationResult result;
    std::vector<ViewObservation> keypoints;
    BoardSpec board;
    std::string created_at;  // ISO 8601 UTC, assigned by the store when empty
};

enum class MatchMode { Exact, ClosestResolution };

/// Distance between resolutions: |log(w_req / w_rec)| + |log(aspect_req / aspect_rec)|.
[[nodiscard]] auto resolution_distance(ImageSize requested, ImageSize stored) -> double;

/// Document store of calibration records: one JSON file per record under
/// `<root>/records/`. Documents are the source of truth; the in-memory
/// index is rebuilt from them on open.
class CalibStore {
  public:
    explicit CalibStore(std::filesystem::path root);

    CalibStore(const CalibStore&) = delete;
    CalibStore& operator=(const CalibStore&) = delete;

    /// Persists the record durably and returns its fresh id.
    auto put_record(CalibrationRecord rec) -> std::string;

    [[nodiscard]] auto get_records(const CameraKey& key, MatchMode match) const
        -> std::vector<CalibrationRecord>;

    [[nodiscard]] auto size() const -> std::size_t;
    [[nodiscard]] auto root() const -> const std::filesystem::path& { return root_; }

  private:
    using RecordPtr = std::shared_ptr<const CalibrationRecord>;

    [[nodiscard]] auto snapshot() const -> std::vector<RecordPtr>;
    auto fresh_id() -> std::string;

    std::filesystem::path root_;
    mutable std::shared_mutex mutex_;
    std::vector<RecordPtr> records_;
    std::unordered_set<std::string> ids_;
};

struct ReliabilityThresholds {
    int min_count = 5;
    double max_focal_cov = 0.02;           // std / mean of fx and fy
    double max_principal_std_frac = 0.01;  // std of cx, cy as a fraction of image width
    double max_coeff_std = 0.02;           // absolute std of each k_i
};

struct ParamStats {
    double mean = 0.0;
    double stddev = 0.0;           // population standard deviation
    double relative_spread = 0.0;  // stddev / |mean|, 0 when mean is 0
};

struct ReliabilityReport {
    bool reliable = false;
    int count = 0;
    ParamStats fx, fy, cx, cy;
    std::array<ParamStats, 3> k;
};

[[nodiscard]] auto reliability(std::span<const CalibrationRecord> records,
                               const ReliabilityThresholds& thresholds = {}) -> ReliabilityReport;

/// Refit over the keypoints of every record under `model`.
[[nodiscard]] auto pooled_result(std::span<const CalibrationRecord> records,
                                 const BoardSpec& board, DistortionModel model)
    -> CalibrationResult;

}  // namespace calibdb
