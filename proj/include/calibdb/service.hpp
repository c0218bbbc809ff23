#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibdb/board.hpp"
#include "calibdb/calib_store.hpp"
#include "calibdb/guidance.hpp"

namespace calibdb {

struct ApiToken {
    std::string token;
    std::string label;
};

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::vector<ApiToken> tokens;
    BoardSpec board;
    GuidanceParams guidance;
    double k_guess_hfov_deg = 60.0;
    ReliabilityThresholds reliability;
    std::filesystem::path storage_path = "calibdb-data";
    std::string guidance_page_url = "/calibrate";
    double session_idle_timeout_s = 1800.0;
    bool log_requests = true;

    /// Throws PreconditionViolation on the first invalid setting.
    void validate() const;
};

[[nodiscard]] auto server_config_from_json(const nlohmann::json& j) -> ServerConfig;
[[nodiscard]] auto server_config_to_json(const ServerConfig& c) -> nlohmann::json;
[[nodiscard]] auto load_server_config(const std::filesystem::path& path) -> ServerConfig;

struct ApiResponse {
    int status = 200;
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
};

/// Transport-independent request handlers. Bodies are raw request text;
/// every handler returns a JSON body.
class CalibService {
  public:
    using Clock = std::chrono::steady_clock;

    explicit CalibService(ServerConfig config);

    CalibService(const CalibService&) = delete;
    CalibService& operator=(const CalibService&) = delete;

    auto create_session(const std::string& body) -> ApiResponse;
    auto get_target(const std::string& session_id) -> ApiResponse;
    auto submit_keypoints(const std::string& session_id, const std::string& body) -> ApiResponse;
    auto query(const std::string& body) -> ApiResponse;

    /// Drops sessions idle for longer than the configured timeout.
    auto collect_idle_sessions(Clock::time_point now = Clock::now()) -> std::size_t;

    [[nodiscard]] auto session_count() const -> std::size_t;
    [[nodiscard]] auto config() const -> const ServerConfig& { return config_; }
    [[nodiscard]] auto store() -> CalibStore& { return store_; }

  private:
    struct Session {
        std::mutex mutex;
        SessionState state;
        DistortionModel model = DistortionModel::Rectilinear;
        Clock::time_point last_used;
    };

    [[nodiscard]] auto token_valid(const std::string& token) const -> bool;
    [[nodiscard]] auto find_session(const std::string& id) -> std::shared_ptr<Session>;
    auto fresh_session_id() -> std::string;
    auto pooled_cached(const std::vector<CalibrationRecord>& records, DistortionModel model)
        -> CalibrationResult;

    ServerConfig config_;
    CalibStore store_;

    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;

    std::mutex pool_mutex_;
    std::map<std::string, CalibrationResult> pool_cache_;
};

/// HTTP/1.1 front end for a CalibService.
class HttpServer {
  public:
    HttpServer(CalibService& service, std::string host, int port);
    ~HttpServer();

    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and starts serving on a background thread. Port 0 picks a free port.
    void start();
    [[nodiscard]] auto port() const -> int;
    /// Blocks until the server stops.
    void wait();
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace calibdb
