#include "calibdb/service.hpp"

#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "calibdb/calibration_engine.hpp"
#include "calibdb/errors.hpp"
#include "calibdb/wire.hpp"

namespace calibdb {

using wire::json;

namespace {

auto json_response(int status, const json& body) -> ApiResponse {
    return {status, wire::canonical(body), {}};
}

auto error_response(int status, std::string_view error, const std::string& message)
    -> ApiResponse {
    return json_response(status, json{{"error", error}, {"message", message}});
}

auto parse_body(const std::string& body) -> std::optional<json> {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded()) {
        return std::nullopt;
    }
    return j;
}

// Timing does not depend on where the strings first differ.
auto constant_time_equal(const std::string& a, const std::string& b) -> bool {
    const std::size_t n = std::max(a.size(), b.size());
    unsigned diff = static_cast<unsigned>(a.size() ^ b.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto ca = static_cast<unsigned char>(i < a.size() ? a[i] : 0);
        const auto cb = static_cast<unsigned char>(i < b.size() ? b[i] : 0);
        diff |= static_cast<unsigned>(ca ^ cb);
    }
    return diff == 0;
}

auto pool_key(const std::vector<CalibrationRecord>& records, DistortionModel model)
    -> std::string {
    const auto& k = records.front().key;
    std::ostringstream out;
    out << k.camera << '\x1f' << k.platform << '\x1f' << k.zoom << '\x1f' << k.img_size.width
        << 'x' << k.img_size.height << '\x1f' << to_string(model);
    for (const auto& r : records) {
        out << '\x1f' << r.record_id;
    }
    return out.str();
}

}  // namespace

void ServerConfig::validate() const {
    require(!host.empty(), "config: listen host must not be empty");
    require(port >= 0 && port <= 65535, "config: listen port out of range");
    require(!tokens.empty(), "config: at least one API token is required");
    for (const auto& t : tokens) {
        require(!t.token.empty(), "config: API tokens must not be empty");
    }
    require(board.valid(), "config: invalid board");
    require(guidance.n_targets >= kMinViews, "config: n_targets must be at least 3");
    require(guidance.tau_px_720p > 0.0, "config: tau_px_720p must be positive");
    require(guidance.min_visible_fraction > 0.0 && guidance.min_visible_fraction <= 1.0,
            "config: min_visible_fraction must be in (0, 1]");
    require(guidance.max_depth > 0.0, "config: max_depth must be positive");
    require(k_guess_hfov_deg > 0.0 && k_guess_hfov_deg < 180.0,
            "config: k_guess_hfov_deg must be in (0, 180)");
    require(reliability.min_count > 0 && reliability.max_focal_cov > 0.0 &&
                reliability.max_principal_std_frac > 0.0 && reliability.max_coeff_std > 0.0,
            "config: reliability thresholds must be positive");
    require(!storage_path.empty(), "config: storage_path must not be empty");
    require(!guidance_page_url.empty(), "config: guidance_page_url must not be empty");
    require(session_idle_timeout_s > 0.0, "config: session_idle_timeout_s must be positive");
}

auto server_config_from_json(const json& j) -> ServerConfig {
    ServerConfig c;
    try {
        if (j.contains("listen")) {
            const auto& l = j.at("listen");
            c.host = l.value("host", c.host);
            c.port = l.value("port", c.port);
        }
        for (const auto& t : j.at("tokens")) {
            c.tokens.push_back({t.at("token").get<std::string>(), t.value("label", "")});
        }
        if (j.contains("board")) {
            c.board = wire::board_from_json(j.at("board"));
        }
        if (j.contains("guidance")) {
            const auto& g = j.at("guidance");
            c.guidance.n_targets = g.value("n_targets", c.guidance.n_targets);
            c.guidance.tau_px_720p = g.value("tau_px_720p", c.guidance.tau_px_720p);
            c.guidance.min_visible_fraction =
                g.value("min_visible_fraction", c.guidance.min_visible_fraction);
            c.guidance.max_depth = g.value("max_depth", c.guidance.max_depth);
            c.k_guess_hfov_deg = g.value("k_guess_hfov_deg", c.k_guess_hfov_deg);
        }
        if (j.contains("reliability")) {
            const auto& r = j.at("reliability");
            c.reliability.min_count = r.value("min_count", c.reliability.min_count);
            c.reliability.max_focal_cov = r.value("max_focal_cov", c.reliability.max_focal_cov);
            c.reliability.max_principal_std_frac =
                r.value("max_principal_std_frac", c.reliability.max_principal_std_frac);
            c.reliability.max_coeff_std = r.value("max_coeff_std", c.reliability.max_coeff_std);
        }
        c.storage_path = j.value("storage_path", c.storage_path.string());
        c.guidance_page_url = j.value("guidance_page_url", c.guidance_page_url);
        c.session_idle_timeout_s = j.value("session_idle_timeout_s", c.session_idle_timeout_s);
        c.log_requests = j.value("log_requests", c.log_requests);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::PreconditionViolation, std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

auto server_config_to_json(const ServerConfig& c) -> json {
    json tokens = json::array();
    for (const auto& t : c.tokens) {
        tokens.push_back({{"token", t.token}, {"label", t.label}});
    }
    return json{{"listen", {{"host", c.host}, {"port", c.port}}},
                {"tokens", std::move(tokens)},
                {"board", wire::board_to_json(c.board)},
                {"guidance",
                 {{"n_targets", c.guidance.n_targets},
                  {"tau_px_720p", c.guidance.tau_px_720p},
                  {"min_visible_fraction", c.guidance.min_visible_fraction},
                  {"max_depth", c.guidance.max_depth},
                  {"k_guess_hfov_deg", c.k_guess_hfov_deg}}},
                {"reliability",
                 {{"min_count", c.reliability.min_count},
                  {"max_focal_cov", c.reliability.max_focal_cov},
                  {"max_principal_std_frac", c.reliability.max_principal_std_frac},
                  {"max_coeff_std", c.reliability.max_coeff_std}}},
                {"storage_path", c.storage_path.string()},
                {"guidance_page_url", c.guidance_page_url},
                {"session_idle_timeout_s", c.session_idle_timeout_s},
                {"log_requests", c.log_requests}};
}

auto load_server_config(const std::filesystem::path& path) -> ServerConfig {
    std::ifstream in(path);
    require(static_cast<bool>(in), "config: cannot open " + path.string());
    auto j = json::parse(in, nullptr, false);
    require(!j.is_discarded(), "config: " + path.string() + " is not valid JSON");
    return server_config_from_json(j);
}

CalibService::CalibService(ServerConfig config)
    : config_((config.validate(), std::move(config))), store_(config_.storage_path) {}

auto CalibService::token_valid(const std::string& token) const -> bool {
    bool ok = false;
    for (const auto& t : config_.tokens) {
        ok = constant_time_equal(token, t.token) || ok;
    }
    return ok;
}

auto CalibService::fresh_session_id() -> std::string {
    std::random_device rd;
    std::ostringstream out;
    out << std::hex << std::setfill('0');
    for (int i = 0; i < 4; ++i) {
        out << std::setw(8) << static_cast<std::uint32_t>(rd());
    }
    return out.str();
}

auto CalibService::find_session(const std::string& id) -> std::shared_ptr<Session> {
    std::shared_lock lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

auto CalibService::session_count() const -> std::size_t {
    std::shared_lock lock(sessions_mutex_);
    return sessions_.size();
}

auto CalibService::collect_idle_sessions(Clock::time_point now) -> std::size_t {
    const auto timeout = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(config_.session_idle_timeout_s));
    std::unique_lock lock(sessions_mutex_);
    std::size_t removed = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        std::unique_lock session_lock(it->second->mutex, std::try_to_lock);
        if (session_lock.owns_lock() && now - it->second->last_used > timeout) {
            session_lock.unlock();
            it = sessions_.erase(it);
            ++removed;
        } else {
            ++it;
        }
    }
    return removed;
}

auto CalibService::create_session(const std::string& body) -> ApiResponse {
    collect_idle_sessions();
    auto j = parse_body(body);
    if (!j || !j->is_object()) {
        return error_response(400, "bad_request", "request body must be a JSON object");
    }
    const auto token_it = j->find("token");
    if (token_it == j->end() || !token_it->is_string() ||
        !token_valid(token_it->get<std::string>())) {
        return error_response(401, "unauthorized", "missing or invalid API token");
    }
    j->erase("token");

    wire::QueryRequest req;
    try {
        req = wire::parse_query_request(*j);
    } catch (const CalibError& e) {
        return error_response(400, "bad_request", e.what());
    }

    auto session = std::make_shared<Session>();
    session->model = req.distortion_model.value_or(DistortionModel::Rectilinear);
    session->state.camera_key = req.key;
    try {
        const auto K_guess = default_k_guess(req.key.img_size, config_.k_guess_hfov_deg);
        session->state.schedule = make_schedule(config_.board, req.key.img_size,
                                                config_.guidance.n_targets, K_guess,
                                                config_.guidance);
    } catch (const CalibError& e) {
        return error_response(400, "bad_request", e.what());
    }
    session->last_used = Clock::now();

    std::string id;
    {
        std::unique_lock lock(sessions_mutex_);
        do {
            id = fresh_session_id();
        } while (sessions_.contains(id));
        session->state.session_id = id;
        sessions_.emplace(id, session);
    }
    return json_response(201, json{{"session_id", id},
                                   {"n_targets", config_.guidance.n_targets},
                                   {"board", wire::board_to_json(config_.board)}});
}

auto CalibService::get_target(const std::string& session_id) -> ApiResponse {
    const auto session = find_session(session_id);
    if (!session) {
        return error_response(404, "not_found", "unknown session");
    }
    std::lock_guard lock(session->mutex);
    session->last_used = Clock::now();
    const auto& state = session->state;
    if (state.status != SessionStatus::Capturing) {
        return json_response(200, json{{"status", to_string(state.status)}});
    }
    return json_response(
        200, wire::target_to_json(state.schedule[static_cast<std::size_t>(state.next_index)]));
}

auto CalibService::submit_keypoints(const std::string& session_id, const std::string& body)
    -> ApiResponse {
    const auto session = find_session(session_id);
    if (!session) {
        return error_response(404, "not_found", "unknown session");
    }
    const auto j = parse_body(body);
    if (!j) {
        return error_response(400, "bad_request", "request body is not valid JSON");
    }

    std::lock_guard lock(session->mutex);
    session->last_used = Clock::now();
    if (session->state.status != SessionStatus::Capturing) {
        return error_response(409, "conflict",
                              std::string("session is ") + to_string(session->state.status));
    }

    ViewObservation obs;
    try {
        obs = wire::observation_from_json(*j);
    } catch (const CalibError& e) {
        return error_response(422, "invalid_observation", e.what());
    }
    if (const auto problem = obs.validate()) {
        return error_response(422, "invalid_observation", *problem);
    }
    if (!(obs.img_size == session->state.camera_key.img_size)) {
        return error_response(422, "invalid_observation",
                              "img_size differs from the session camera");
    }
    for (const auto& kp : obs.points) {
        if (kp.id >= config_.board.corner_count()) {
            return error_response(422, "invalid_observation",
                                  "corner id " + std::to_string(kp.id) + " is not on the board");
        }
    }

    const double tau = scaled_tau(obs.img_size, config_.guidance.tau_px_720p);
    auto [next, outcome] = advance(session->state, obs, tau);
    if (outcome == AdvanceOutcome::RejectedPoseMismatch) {
        return json_response(
            200, json{{"status", "pose_mismatch"}, {"remaining", session->state.remaining()}});
    }
    if (outcome == AdvanceOutcome::Accepted) {
        session->state = std::move(next);
        return json_response(
            200, json{{"status", "need_more"}, {"remaining", session->state.remaining()}});
    }

    CalibrationRecord rec;
    try {
        rec.result = calibrate(next.collected, config_.board, session->model, obs.img_size);
    } catch (const CalibError& e) {
        next.status = SessionStatus::Failed;
        session->state = std::move(next);
        return json_response(422, json{{"status", "failed"},
                                       {"error", to_string(e.code())},
                                       {"message", e.what()}});
    }
    rec.key = next.camera_key;
    rec.keypoints = next.collected;
    rec.board = config_.board;
    std::string record_id;
    try {
        record_id = store_.put_record(rec);
    } catch (const CalibError& e) {
        return error_response(500, "storage_failure", e.what());
    }
    session->state = std::move(next);
    return json_response(200, json{{"status", "done"},
                                   {"calibration", wire::calibration_response(rec.result)},
                                   {"record_id", record_id}});
}

auto CalibService::pooled_cached(const std::vector<CalibrationRecord>& records,
                                 DistortionModel model) -> CalibrationResult {
    const std::string key = pool_key(records, model);
    {
        std::lock_guard lock(pool_mutex_);
        if (const auto it = pool_cache_.find(key); it != pool_cache_.end()) {
            return it->second;
        }
    }
    auto result = pooled_result(records, records.front().board, model);
    std::lock_guard lock(pool_mutex_);
    pool_cache_.insert_or_assign(key, result);
    return result;
}

auto CalibService::query(const std::string& body) -> ApiResponse {
    const auto j = parse_body(body);
    if (!j) {
        return error_response(400, "bad_request", "request body is not valid JSON");
    }
    wire::QueryRequest req;
    try {
        req = wire::parse_query_request(*j);
    } catch (const CalibError& e) {
        return error_response(400, "bad_request", e.what());
    }

    const auto redirect = [this](const std::string& reason) {
        ApiResponse r = json_response(307, json{{"status", "redirect"},
                                                {"location", config_.guidance_page_url},
                                                {"reason", reason}});
        r.headers.emplace_back("Location", config_.guidance_page_url);
        return r;
    };

    auto records = store_.get_records(req.key, MatchMode::Exact);
    if (records.empty()) {
        records = store_.get_records(req.key, MatchMode::ClosestResolution);
    }
    if (records.empty()) {
        return redirect("no calibration data for this camera");
    }
    // Pool only the evidence gathered with the most recent board layout.
    const BoardSpec board = records.back().board;
    std::erase_if(records, [&](const CalibrationRecord& r) { return !(r.board == board); });

    const auto rep = reliability(records, config_.reliability);
    if (!rep.reliable) {
        return redirect("calibration data is not yet reliable");
    }
    const DistortionModel model =
        req.distortion_model.value_or(records.back().result.distortion.model);
    try {
        return json_response(200, wire::calibration_response(pooled_cached(records, model)));
    } catch (const CalibError& e) {
        return redirect(std::string("pooled refit failed: ") + e.what());
    }
}

}  // namespace calibdb
