#include "calibdb/service.hpp"

#include <httplib.h>

#include <chrono>
#include <iostream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "calibdb/errors.hpp"

namespace calibdb {

namespace {

std::mutex log_mutex;

void log_request(const httplib::Request& req, const httplib::Response& res) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const nlohmann::json entry{
        {"ts_ms", std::chrono::duration_cast<std::chrono::milliseconds>(now).count()},
        {"method", req.method},
        {"path", req.path},
        {"status", res.status},
        {"remote", req.remote_addr},
    };
    std::lock_guard lock(log_mutex);
    std::cout << entry.dump() << std::endl;
}

void apply(const ApiResponse& api, httplib::Response& res) {
    res.status = api.status;
    for (const auto& [name, value] : api.headers) {
        res.set_header(name, value);
    }
    res.set_content(api.body, "application/json");
}

}  // namespace

struct HttpServer::Impl {
    Impl(CalibService& svc, std::string h, int p)
        : service(svc), host(std::move(h)), requested_port(p) {}

    CalibService& service;
    std::string host;
    int requested_port;
    int bound_port = -1;
    httplib::Server server;
    std::thread thread;
};

HttpServer::HttpServer(CalibService& service, std::string host, int port)
    : impl_(std::make_unique<Impl>(service, std::move(host), port)) {
    auto& srv = impl_->server;
    auto& svc = impl_->service;

    srv.Post("/api/v1/sessions", [&svc](const httplib::Request& req, httplib::Response& res) {
        apply(svc.create_session(req.body), res);
    });
    srv.Get(R"(/api/v1/sessions/([A-Za-z0-9_-]+)/target)",
            [&svc](const httplib::Request& req, httplib::Response& res) {
                apply(svc.get_target(req.matches[1]), res);
            });
    srv.Post(R"(/api/v1/sessions/([A-Za-z0-9_-]+)/keypoints)",
             [&svc](const httplib::Request& req, httplib::Response& res) {
                 apply(svc.submit_keypoints(req.matches[1], req.body), res);
             });
    srv.Post("/api/v1/calibrations/query",
             [&svc](const httplib::Request& req, httplib::Response& res) {
                 apply(svc.query(req.body), res);
             });
    srv.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string what = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                what = e.what();
            } catch (...) {
            }
            res.status = 500;
            res.set_content(nlohmann::json{{"error", "internal"}, {"message", what}}.dump(),
                            "application/json");
        });
    if (svc.config().log_requests) {
        srv.set_logger(log_request);
    }
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::start() {
    auto& impl = *impl_;
    require(!impl.thread.joinable(), "http server already started");
    if (impl.requested_port == 0) {
        impl.bound_port = impl.server.bind_to_any_port(impl.host);
    } else if (impl.server.bind_to_port(impl.host, impl.requested_port)) {
        impl.bound_port = impl.requested_port;
    }
    if (impl.bound_port <= 0) {
        fail(ErrorCode::PreconditionViolation,
             "cannot bind " + impl.host + ":" + std::to_string(impl.requested_port));
    }
    impl.thread = std::thread([&impl] { impl.server.listen_after_bind(); });
    impl.server.wait_until_ready();
}

auto HttpServer::port() const -> int { return impl_->bound_port; }

void HttpServer::wait() {
    if (impl_->thread.joinable()) {
        impl_->thread.join();
    }
}

void HttpServer::stop() {
    if (impl_->thread.joinable()) {
        impl_->server.stop();
        impl_->thread.join();
    }
}

}  // namespace calibdb
