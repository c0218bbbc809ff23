#include "calibdb/calibdb.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "calibdb/calibration_engine.hpp"
#include "calibdb/errors.hpp"
#include "calibdb/service.hpp"
#include "calibdb/sim_client.hpp"
#include "calibdb/wire.hpp"

struct calibdb_server {
    std::unique_ptr<calibdb::CalibService> service;
    std::unique_ptr<calibdb::HttpServer> http;
};

namespace {

using calibdb::wire::json;

thread_local std::string last_error;

auto status_of(calibdb::ErrorCode code) -> calibdb_status {
    using calibdb::ErrorCode;
    switch (code) {
        case ErrorCode::PreconditionViolation:
            return CALIBDB_E_PRECONDITION;
        case ErrorCode::NonConvergence:
            return CALIBDB_E_NON_CONVERGENCE;
        case ErrorCode::BehindCamera:
            return CALIBDB_E_BEHIND_CAMERA;
        case ErrorCode::DegenerateConfiguration:
            return CALIBDB_E_DEGENERATE_CONFIGURATION;
        case ErrorCode::DegenerateMotion:
            return CALIBDB_E_DEGENERATE_MOTION;
        case ErrorCode::NumericalFailure:
            return CALIBDB_E_NUMERICAL_FAILURE;
        case ErrorCode::InsufficientData:
            return CALIBDB_E_INSUFFICIENT_DATA;
        case ErrorCode::InfeasibleTarget:
            return CALIBDB_E_INFEASIBLE_TARGET;
        case ErrorCode::SessionNotCapturing:
            return CALIBDB_E_SESSION_NOT_CAPTURING;
        case ErrorCode::StorageFailure:
            return CALIBDB_E_STORAGE_FAILURE;
        case ErrorCode::ProtocolError:
            return CALIBDB_E_PROTOCOL;
    }
    return CALIBDB_E_INTERNAL;
}

template <class F>
auto guarded(F&& body) -> calibdb_status {
    try {
        body();
        last_error.clear();
        return CALIBDB_OK;
    } catch (const calibdb::CalibError& e) {
        last_error = e.what();
        return status_of(e.code());
    } catch (const json::exception& e) {
        last_error = e.what();
        return CALIBDB_E_PROTOCOL;
    } catch (const std::exception& e) {
        last_error = e.what();
        return CALIBDB_E_INTERNAL;
    } catch (...) {
        last_error = "unknown error";
        return CALIBDB_E_INTERNAL;
    }
}

auto invalid_argument_guard(const char* what) -> calibdb_status {
    last_error = what;
    return CALIBDB_E_INVALID_ARGUMENT;
}

auto to_cxx(const calibdb_camera& cam)
    -> std::pair<calibdb::CameraIntrinsics, calibdb::DistortionParams> {
    calibdb::DistortionParams d;
    d.model = cam.model == CALIBDB_FISHEYE ? calibdb::DistortionModel::Fisheye
                                           : calibdb::DistortionModel::Rectilinear;
    d.k = {cam.k[0], cam.k[1], cam.k[2]};
    return {{cam.fx, cam.fy, cam.cx, cam.cy}, d};
}

auto dup(const std::string& s) -> char* {
    auto* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) {
        throw std::bad_alloc();
    }
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

auto parse(const char* text) -> json {
    auto j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        calibdb::fail(calibdb::ErrorCode::ProtocolError, "input is not valid JSON");
    }
    return j;
}

auto model_arg(const char* name) -> std::optional<calibdb::DistortionModel> {
    if (name == nullptr || *name == '\0') {
        return std::nullopt;
    }
    const auto m = calibdb::parse_distortion_model(name);
    if (!m) {
        calibdb::fail(calibdb::ErrorCode::PreconditionViolation,
                      std::string("unknown distortion model '") + name + "'");
    }
    return m;
}

}  // namespace

extern "C" {

const char* calibdb_last_error(void) { return last_error.c_str(); }

const char* calibdb_status_name(calibdb_status status) {
    switch (status) {
        case CALIBDB_OK:
            return "ok";
        case CALIBDB_E_INVALID_ARGUMENT:
            return "invalid_argument";
        case CALIBDB_E_INTERNAL:
            return "internal";
        case CALIBDB_E_PRECONDITION:
            return calibdb::to_string(calibdb::ErrorCode::PreconditionViolation);
        case CALIBDB_E_NON_CONVERGENCE:
            return calibdb::to_string(calibdb::ErrorCode::NonConvergence);
        case CALIBDB_E_BEHIND_CAMERA:
            return calibdb::to_string(calibdb::ErrorCode::BehindCamera);
        case CALIBDB_E_DEGENERATE_CONFIGURATION:
            return calibdb::to_string(calibdb::ErrorCode::DegenerateConfiguration);
        case CALIBDB_E_DEGENERATE_MOTION:
            return calibdb::to_string(calibdb::ErrorCode::DegenerateMotion);
        case CALIBDB_E_NUMERICAL_FAILURE:
            return calibdb::to_string(calibdb::ErrorCode::NumericalFailure);
        case CALIBDB_E_INSUFFICIENT_DATA:
            return calibdb::to_string(calibdb::ErrorCode::InsufficientData);
        case CALIBDB_E_INFEASIBLE_TARGET:
            return calibdb::to_string(calibdb::ErrorCode::InfeasibleTarget);
        case CALIBDB_E_SESSION_NOT_CAPTURING:
            return calibdb::to_string(calibdb::ErrorCode::SessionNotCapturing);
        case CALIBDB_E_STORAGE_FAILURE:
            return calibdb::to_string(calibdb::ErrorCode::StorageFailure);
        case CALIBDB_E_PROTOCOL:
            return calibdb::to_string(calibdb::ErrorCode::ProtocolError);
    }
    return "unknown";
}

void calibdb_string_free(char* s) { std::free(s); }

calibdb_status calibdb_project(const calibdb_camera* cam, const double xyz[3], double px_out[2]) {
    if (cam == nullptr || xyz == nullptr || px_out == nullptr) {
        return invalid_argument_guard("calibdb_project: null argument");
    }
    return guarded([&] {
        const auto [K, d] = to_cxx(*cam);
        const auto px = calibdb::project({xyz[0], xyz[1], xyz[2]}, K, d);
        px_out[0] = px.x();
        px_out[1] = px.y();
    });
}

calibdb_status calibdb_unproject(const calibdb_camera* cam, const double px[2],
                                 double xy_out[2]) {
    if (cam == nullptr || px == nullptr || xy_out == nullptr) {
        return invalid_argument_guard("calibdb_unproject: null argument");
    }
    return guarded([&] {
        const auto [K, d] = to_cxx(*cam);
        const auto p = calibdb::unproject({px[0], px[1]}, K, d);
        xy_out[0] = p.x();
        xy_out[1] = p.y();
    });
}

calibdb_status calibdb_distort(const calibdb_camera* cam, const double xy[2], double out[2]) {
    if (cam == nullptr || xy == nullptr || out == nullptr) {
        return invalid_argument_guard("calibdb_distort: null argument");
    }
    return guarded([&] {
        const auto p = calibdb::distort({xy[0], xy[1]}, to_cxx(*cam).second);
        out[0] = p.x();
        out[1] = p.y();
    });
}

calibdb_status calibdb_undistort(const calibdb_camera* cam, const double xy[2], double out[2]) {
    if (cam == nullptr || xy == nullptr || out == nullptr) {
        return invalid_argument_guard("calibdb_undistort: null argument");
    }
    return guarded([&] {
        const auto p = calibdb::undistort({xy[0], xy[1]}, to_cxx(*cam).second);
        out[0] = p.x();
        out[1] = p.y();
    });
}

calibdb_status calibdb_calibrate_json(const char* request_json, char** result_json) {
    if (request_json == nullptr || result_json == nullptr) {
        return invalid_argument_guard("calibdb_calibrate_json: null argument");
    }
    return guarded([&] {
        const json req = parse(request_json);
        const auto board = calibdb::wire::board_from_json(req.at("board"));
        const auto model = calibdb::wire::parse_distortion_model_field(req.at("distortion_model"));
        const auto img_size = calibdb::wire::image_size_from_json(req.at("img_size"));
        std::vector<calibdb::ViewObservation> views;
        for (const auto& v : req.at("views")) {
            views.push_back(calibdb::wire::observation_from_json(v));
        }
        const auto result = calibdb::calibrate(views, board, model, img_size);
        *result_json = dup(calibdb::wire::canonical(calibdb::wire::result_to_json(result)));
    });
}

calibdb_status calibdb_server_create(const char* config_json, calibdb_server** out) {
    if (config_json == nullptr || out == nullptr) {
        return invalid_argument_guard("calibdb_server_create: null argument");
    }
    return guarded([&] {
        auto config = calibdb::server_config_from_json(parse(config_json));
        auto server = std::make_unique<calibdb_server>();
        const std::string host = config.host;
        const int port = config.port;
        server->service = std::make_unique<calibdb::CalibService>(std::move(config));
        server->http = std::make_unique<calibdb::HttpServer>(*server->service, host, port);
        *out = server.release();
    });
}

calibdb_status calibdb_server_start(calibdb_server* server) {
    if (server == nullptr) {
        return invalid_argument_guard("calibdb_server_start: null server");
    }
    return guarded([&] { server->http->start(); });
}

int calibdb_server_port(const calibdb_server* server) {
    return server == nullptr ? -1 : server->http->port();
}

calibdb_status calibdb_server_wait(calibdb_server* server) {
    if (server == nullptr) {
        return invalid_argument_guard("calibdb_server_wait: null server");
    }
    return guarded([&] { server->http->wait(); });
}

calibdb_status calibdb_server_stop(calibdb_server* server) {
    if (server == nullptr) {
        return invalid_argument_guard("calibdb_server_stop: null server");
    }
    return guarded([&] { server->http->stop(); });
}

void calibdb_server_destroy(calibdb_server* server) { delete server; }

calibdb_status calibdb_client_run_session(const char* profile_json, const char* server_url,
                                          const char* token, int inject_wrong_pose,
                                          char** report_json) {
    if (profile_json == nullptr || server_url == nullptr || token == nullptr ||
        report_json == nullptr) {
        return invalid_argument_guard("calibdb_client_run_session: null argument");
    }
    return guarded([&] {
        const auto profile = calibdb::wire::profile_from_json(parse(profile_json));
        calibdb::SessionOptions options;
        options.inject_wrong_pose = inject_wrong_pose != 0;
        const auto report = calibdb::run_session(profile, server_url, token, options);
        *report_json = dup(calibdb::wire::canonical(calibdb::to_json(report)));
    });
}

calibdb_status calibdb_client_seed(const char* profile_json, const char* server_url,
                                   const char* token, int n_sessions, double focal_alternation,
                                   int parallel, const char* query_model, char** summary_json) {
    if (profile_json == nullptr || server_url == nullptr || token == nullptr ||
        summary_json == nullptr) {
        return invalid_argument_guard("calibdb_client_seed: null argument");
    }
    return guarded([&] {
        const auto profile = calibdb::wire::profile_from_json(parse(profile_json));
        calibdb::SeedOptions options;
        options.focal_alternation = focal_alternation;
        options.parallel = parallel;
        options.query_model = model_arg(query_model);
        const auto summary =
            calibdb::seed_reliability(profile, server_url, token, n_sessions, options);
        *summary_json = dup(calibdb::wire::canonical(calibdb::to_json(summary)));
    });
}

calibdb_status calibdb_client_query(const char* key_json, const char* server_url,
                                    const char* query_model, char** reply_json) {
    if (key_json == nullptr || server_url == nullptr || reply_json == nullptr) {
        return invalid_argument_guard("calibdb_client_query: null argument");
    }
    return guarded([&] {
        const auto key = calibdb::wire::camera_key_from_json(parse(key_json));
        const auto reply = calibdb::query_calibration(key, server_url, model_arg(query_model));
        json out = calibdb::to_json(reply);
        out["body"] = reply.body;
        *reply_json = dup(calibdb::wire::canonical(out));
    });
}

}  // extern "C"
