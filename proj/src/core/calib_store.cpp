#include "calibdb/calib_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <tuple>

#include "calibdb/errors.hpp"
#include "calibdb/wire.hpp"

namespace calibdb {

namespace fs = std::filesystem;

namespace {

auto now_iso8601() -> std::string {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() %
        1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0')
        << ms << 'Z';
    return out.str();
}

void fsync_path(const fs::path& path, int flags) {
    const int fd = ::open(path.c_str(), flags);
    if (fd < 0) {
        fail(ErrorCode::StorageFailure, "cannot open " + path.string() + " for sync");
    }
    const int rc = ::fsync(fd);
    ::close(fd);
    if (rc != 0) {
        fail(ErrorCode::StorageFailure, "fsync failed for " + path.string());
    }
}

// Write to a temporary sibling, flush it to disk, then rename into place.
void write_durably(const fs::path& target, const std::string& contents) {
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail(ErrorCode::StorageFailure, "cannot write " + tmp.string());
        }
        out << contents;
        out.flush();
        if (!out) {
            fail(ErrorCode::StorageFailure, "short write to " + tmp.string());
        }
    }
    fsync_path(tmp, O_RDONLY);
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fail(ErrorCode::StorageFailure, "cannot rename " + tmp.string() + ": " + ec.message());
    }
    fsync_path(target.parent_path(), O_RDONLY | O_DIRECTORY);
}

auto same_camera(const CameraKey& a, const CameraKey& b) -> bool {
    return a.camera == b.camera && a.platform == b.platform && a.zoom == b.zoom;
}

auto stats_of(const std::vector<double>& values) -> ParamStats {
    ParamStats s;
    if (values.empty()) {
        return s;
    }
    const double n = static_cast<double>(values.size());
    for (double v : values) {
        s.mean += v;
    }
    s.mean /= n;
    double var = 0.0;
    for (double v : values) {
        var += (v - s.mean) * (v - s.mean);
    }
    s.stddev = std::sqrt(var / n);
    s.relative_spread = s.mean != 0.0 ? s.stddev / std::abs(s.mean) : 0.0;
    return s;
}

}  // namespace

auto resolution_distance(ImageSize requested, ImageSize stored) -> double {
    require(requested.valid() && stored.valid(), "resolution_distance: sizes must be positive");
    const double aspect_req = static_cast<double>(requested.width) / requested.height;
    const double aspect_rec = static_cast<double>(stored.width) / stored.height;
    return std::abs(std::log(static_cast<double>(requested.width) / stored.width)) +
           std::abs(std::log(aspect_req / aspect_rec));
}

CalibStore::CalibStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "records", ec);
    if (ec) {
        fail(ErrorCode::StorageFailure,
             "cannot create store directory " + root_.string() + ": " + ec.message());
    }
    for (const auto& entry : fs::directory_iterator(root_ / "records")) {
        if (!entry.is_regular_file() || entry.path().extension() != ".json") {
            continue;
        }
        std::ifstream in(entry.path());
        wire::json doc;
        try {
            in >> doc;
            auto rec = std::make_shared<CalibrationRecord>(wire::record_from_json(doc));
            ids_.insert(rec->record_id);
            records_.push_back(std::move(rec));
        } catch (const std::exception& e) {
            fail(ErrorCode::StorageFailure,
                 "corrupt record document " + entry.path().string() + ": " + e.what());
        }
    }
    std::sort(records_.begin(), records_.end(), [](const RecordPtr& a, const RecordPtr& b) {
        return std::tie(a->created_at, a->record_id) < std::tie(b->created_at, b->record_id);
    });
}

auto CalibStore::fresh_id() -> std::string {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    for (;;) {
        std::ostringstream out;
        out << std::hex << std::setfill('0') << std::setw(16) << rng() << std::setw(16) << rng();
        std::string id = out.str();
        std::unique_lock lock(mutex_);
        if (ids_.insert(id).second) {
            return id;
        }
    }
}

auto CalibStore::put_record(CalibrationRecord rec) -> std::string {
    require(rec.key.valid(), "put_record: invalid camera key");
    require(!rec.keypoints.empty(), "put_record: keypoints must not be empty");
    require(rec.result.img_size == rec.key.img_size,
            "put_record: result img_size does not match the camera key");
    require(rec.board.valid(), "put_record: invalid board");

    rec.record_id = fresh_id();
    if (rec.created_at.empty()) {
        rec.created_at = now_iso8601();
    }
    const std::string doc = wire::record_to_json(rec).dump(2) + "\n";
    write_durably(root_ / "records" / (rec.record_id + ".json"), doc);

    auto ptr = std::make_shared<const CalibrationRecord>(std::move(rec));
    std::unique_lock lock(mutex_);
    records_.push_back(ptr);
    return ptr->record_id;
}

auto CalibStore::snapshot() const -> std::vector<RecordPtr> {
    std::shared_lock lock(mutex_);
    return records_;
}

auto CalibStore::size() const -> std::size_t {
    std::shared_lock lock(mutex_);
    return records_.size();
}

auto CalibStore::get_records(const CameraKey& key, MatchMode match) const
    -> std::vector<CalibrationRecord> {
    require(key.valid(), "get_records: invalid camera key");
    const auto all = snapshot();
    std::vector<CalibrationRecord> out;

    if (match == MatchMode::Exact) {
        for (const auto& r : all) {
            if (r->key == key) {
                out.push_back(*r);
            }
        }
        return out;
    }

    std::optional<ImageSize> best;
    double best_dist = 0.0;
    for (const auto& r : all) {
        if (!same_camera(r->key, key)) {
            continue;
        }
        const ImageSize sz = r->key.img_size;
        const double dist = resolution_distance(key.img_size, sz);
        const auto area = [](ImageSize s) {
            return static_cast<long long>(s.width) * static_cast<long long>(s.height);
        };
        const bool better = !best || dist < best_dist - 1e-12 ||
                            (std::abs(dist - best_dist) <= 1e-12 &&
                             (area(sz) > area(*best) ||
                              (area(sz) == area(*best) && sz.width > best->width)));
        if (better) {
            best = sz;
            best_dist = dist;
        }
    }
    if (!best) {
        return out;
    }
    for (const auto& r : all) {
        if (same_camera(r->key, key) && r->key.img_size == *best) {
            out.push_back(*r);
        }
    }
    return out;
}

auto reliability(std::span<const CalibrationRecord> records,
                 const ReliabilityThresholds& thresholds) -> ReliabilityReport {
    ReliabilityReport rep;
    rep.count = static_cast<int>(records.size());
    std::vector<double> fx, fy, cx, cy;
    std::array<std::vector<double>, 3> k;
    for (const auto& r : records) {
        fx.push_back(r.result.intrinsics.fx);
        fy.push_back(r.result.intrinsics.fy);
        cx.push_back(r.result.intrinsics.cx);
        cy.push_back(r.result.intrinsics.cy);
        for (std::size_t i = 0; i < 3; ++i) {
            k[i].push_back(r.result.distortion.k[i]);
        }
    }
    rep.fx = stats_of(fx);
    rep.fy = stats_of(fy);
    rep.cx = stats_of(cx);
    rep.cy = stats_of(cy);
    for (std::size_t i = 0; i < 3; ++i) {
        rep.k[i] = stats_of(k[i]);
    }
    if (rep.count < thresholds.min_count) {
        return rep;
    }
    // All records share one resolution; use the first as the width reference.
    const double width = records.front().key.img_size.width;
    bool ok = rep.fx.relative_spread <= thresholds.max_focal_cov &&
              rep.fy.relative_spread <= thresholds.max_focal_cov &&
              rep.cx.stddev <= thresholds.max_principal_std_frac * width &&
              rep.cy.stddev <= thresholds.max_principal_std_frac * width;
    for (const auto& s : rep.k) {
        ok = ok && s.stddev <= thresholds.max_coeff_std;
    }
    rep.reliable = ok;
    return rep;
}

auto pooled_result(std::span<const CalibrationRecord> records, const BoardSpec& board,
                   DistortionModel model) -> CalibrationResult {
    require(!records.empty(), "pooled_result: no records");
    const CameraKey& first = records.front().key;
    std::vector<ViewObservation> views;
    for (const auto& r : records) {
        require(same_camera(r.key, first) && r.key.img_size == first.img_size,
                "pooled_result: records belong to different cameras or resolutions");
        require(r.board == board, "pooled_result: record was captured with a different board");
        views.insert(views.end(), r.keypoints.begin(), r.keypoints.end());
    }
    return refit(views, board, model, first.img_size);
}

}  // namespace calibdb
