#include <CLI11.hpp>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "calibdb/calibdb.h"

using json = nlohmann::json;

namespace {

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

auto read_file(const std::string& path) -> std::string {
    std::ifstream in(path);
    if (!in) {
        throw CliError("cannot open " + path);
    }
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

auto parse_json(const std::string& text, const std::string& what) -> json {
    auto j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw CliError(what + " is not valid JSON");
    }
    return j;
}

void check(calibdb_status status) {
    if (status != CALIBDB_OK) {
        throw CliError(std::string(calibdb_status_name(status)) + ": " + calibdb_last_error());
    }
}

// Takes ownership of a string returned by the library.
auto take(char* s) -> std::string {
    std::unique_ptr<char, decltype(&calibdb_string_free)> owned(s, calibdb_string_free);
    return owned ? std::string(owned.get()) : std::string();
}

auto env_or(const char* name, std::string fallback) -> std::string {
    const char* v = std::getenv(name);
    return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

struct ServeArgs {
    std::string config;
    std::string listen;
    std::string storage;
};

auto run_serve(const ServeArgs& args) -> int {
    const std::string config_path = args.config.empty() ? env_or("CALIBDB_CONFIG", "") : args.config;
    if (config_path.empty()) {
        throw CliError("no config file: pass --config or set CALIBDB_CONFIG");
    }
    json config = parse_json(read_file(config_path), config_path);

    const std::string listen = args.listen.empty() ? env_or("CALIBDB_LISTEN", "") : args.listen;
    if (!listen.empty()) {
        const auto colon = listen.rfind(':');
        if (colon == std::string::npos) {
            throw CliError("--listen expects host:port");
        }
        config["listen"]["host"] = listen.substr(0, colon);
        try {
            config["listen"]["port"] = std::stoi(listen.substr(colon + 1));
        } catch (const std::exception&) {
            throw CliError("--listen has an invalid port");
        }
    }
    const std::string storage = args.storage.empty() ? env_or("CALIBDB_STORAGE", "") : args.storage;
    if (!storage.empty()) {
        config["storage_path"] = storage;
    }

    // Block termination signals in every thread; the main thread waits for them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    calibdb_server* raw = nullptr;
    check(calibdb_server_create(config.dump().c_str(), &raw));
    std::unique_ptr<calibdb_server, decltype(&calibdb_server_destroy)> server(
        raw, calibdb_server_destroy);
    check(calibdb_server_start(server.get()));
    std::cerr << "calibdb listening on " << config.value("listen", json::object()).value("host", "127.0.0.1")
              << ':' << calibdb_server_port(server.get()) << std::endl;

    int sig = 0;
    sigwait(&signals, &sig);
    std::cerr << "shutting down" << std::endl;
    check(calibdb_server_stop(server.get()));
    return 0;
}

struct ClientArgs {
    std::string profile;
    std::string server = "http://127.0.0.1:8080";
    std::string token;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise;
    bool json_output = false;
};

auto load_profile(const ClientArgs& args) -> json {
    if (args.profile.empty()) {
        throw CliError("--profile is required");
    }
    json profile = parse_json(read_file(args.profile), args.profile);
    if (args.seed) {
        profile["seed"] = *args.seed;
    }
    if (args.noise) {
        profile["noise_sigma"] = *args.noise;
    }
    return profile;
}

void print_errors_table(const json& report, const json& profile) {
    const auto& cal = report.at("calibration");
    const auto& K = cal.at("camera_matrix");
    const auto& truth = profile.at("intrinsics");
    const auto& k_truth = profile.at("distortion").at("coefficients");
    const auto& err = report.at("errors");
    std::printf("%-6s %14s %14s %14s\n", "param", "truth", "estimate", "error");
    std::printf("%-6s %14.6f %14.6f %13.4e%%\n", "fx", truth.at("fx").get<double>(),
                K[0][0].get<double>(), 100.0 * err.at("fx_rel").get<double>());
    std::printf("%-6s %14.6f %14.6f %13.4e%%\n", "fy", truth.at("fy").get<double>(),
                K[1][1].get<double>(), 100.0 * err.at("fy_rel").get<double>());
    std::printf("%-6s %14.6f %14.6f %12.4e px\n", "cx", truth.at("cx").get<double>(),
                K[0][2].get<double>(), err.at("cx_abs").get<double>());
    std::printf("%-6s %14.6f %14.6f %12.4e px\n", "cy", truth.at("cy").get<double>(),
                K[1][2].get<double>(), err.at("cy_abs").get<double>());
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string name = "k" + std::to_string(i + 1);
        std::printf("%-6s %14.6f %14.6f %14.4e\n", name.c_str(), k_truth[i].get<double>(),
                    cal.at("distortion_coefficients")[i].get<double>(),
                    err.at("k_abs")[i].get<double>());
    }
    std::printf("rms reprojection error: %.4f px\n",
                cal.at("avg_reprojection_error").get<double>());
}

auto run_session_cmd(const ClientArgs& args, bool wrong_pose) -> int {
    const json profile = load_profile(args);
    char* out = nullptr;
    check(calibdb_client_run_session(profile.dump().c_str(), args.server.c_str(),
                                     args.token.c_str(), wrong_pose ? 1 : 0, &out));
    const std::string text = take(out);
    if (args.json_output) {
        std::cout << text;
        return 0;
    }
    const json report = parse_json(text, "session report");
    std::printf("session %s: %d submissions, %d accepted, %d pose mismatches, %.3f s\n",
                report.at("session_id").get<std::string>().c_str(),
                report.at("n_submissions").get<int>(), report.at("n_accepted").get<int>(),
                report.at("n_mismatches").get<int>(), report.at("elapsed_s").get<double>());
    print_errors_table(report, profile);
    return 0;
}

void print_query(const json& reply) {
    const int status = reply.at("status").get<int>();
    if (status == 307) {
        std::cout << "307 → " << reply.value("location", "") << "\n";
    } else {
        std::cout << status << "\n" << reply.at("body").get<std::string>();
    }
}

struct SeedArgs {
    int sessions = 5;
    double focal_alternation = 0.0;
    int parallel = 1;
    std::string model;
};

auto run_seed_cmd(const ClientArgs& args, const SeedArgs& seed) -> int {
    const json profile = load_profile(args);
    char* out = nullptr;
    check(calibdb_client_seed(profile.dump().c_str(), args.server.c_str(), args.token.c_str(),
                              seed.sessions, seed.focal_alternation, seed.parallel,
                              seed.model.empty() ? nullptr : seed.model.c_str(), &out));
    const std::string text = take(out);
    if (args.json_output) {
        std::cout << text;
        return 0;
    }
    const json summary = parse_json(text, "seed summary");
    for (const auto& s : summary.at("sessions")) {
        const auto& K = s.at("calibration").at("camera_matrix");
        std::printf("session %s: fx=%.3f fy=%.3f cx=%.3f cy=%.3f rms=%.4f\n",
                    s.at("session_id").get<std::string>().c_str(), K[0][0].get<double>(),
                    K[1][1].get<double>(), K[0][2].get<double>(), K[1][2].get<double>(),
                    s.at("calibration").at("avg_reprojection_error").get<double>());
    }
    const auto& q = summary.at("query");
    const int status = q.at("status").get<int>();
    if (status == 307) {
        std::cout << "query: 307 → " << q.value("location", "") << "\n";
    } else {
        std::cout << "query: " << status << "\n" << q.at("calibration").dump(2) << "\n";
    }
    return 0;
}

struct QueryArgs {
    std::string camera;
    std::string platform;
    int width = 0;
    int height = 0;
    double zoom = 0.0;
    std::string model;
};

auto run_query_cmd(const ClientArgs& args, const QueryArgs& q) -> int {
    json key;
    if (!args.profile.empty()) {
        const json profile = load_profile(args);
        if (profile.contains("camera_key")) {
            key = profile.at("camera_key");
        } else {
            key = {{"camera", "Simulated Camera"},
                   {"platform", "calibdb-sim"},
                   {"img_size", profile.at("img_size")},
                   {"zoom", 0.0}};
        }
    } else {
        if (q.camera.empty() || q.platform.empty() || q.width <= 0 || q.height <= 0) {
            throw CliError("query needs --profile or --camera, --platform, --width and --height");
        }
        key = {{"camera", q.camera},
               {"platform", q.platform},
               {"img_size", {q.width, q.height}},
               {"zoom", q.zoom}};
    }
    char* out = nullptr;
    check(calibdb_client_query(key.dump().c_str(), args.server.c_str(),
                               q.model.empty() ? nullptr : q.model.c_str(), &out));
    const json reply = parse_json(take(out), "query reply");
    if (args.json_output) {
        std::cout << reply.dump(2) << "\n";
    } else {
        print_query(reply);
    }
    return 0;
}

void add_client_options(CLI::App* cmd, ClientArgs& args, bool needs_token) {
    cmd->add_option("--profile", args.profile, "Simulated camera profile (JSON file)");
    cmd->add_option("--server", args.server, "Server base URL")->envname("CALIBDB_SERVER");
    if (needs_token) {
        cmd->add_option("--token", args.token, "API token")->envname("CALIBDB_TOKEN")->required();
    }
    cmd->add_option("--seed", args.seed, "Override the profile's random seed");
    cmd->add_option("--noise", args.noise, "Override the profile's pixel noise sigma")
        ->check(CLI::NonNegativeNumber);
    cmd->add_flag("--json", args.json_output, "Print the machine-readable JSON report");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"calibDB camera-calibration service and simulated client"};
    app.require_subcommand(1);

    ServeArgs serve_args;
    auto* serve = app.add_subcommand("serve", "Run the calibration server");
    serve->add_option("--config", serve_args.config, "Server config file (env CALIBDB_CONFIG)");
    serve->add_option("--listen", serve_args.listen, "host:port override (env CALIBDB_LISTEN)");
    serve->add_option("--storage", serve_args.storage, "Storage path override (env CALIBDB_STORAGE)");

    ClientArgs session_args;
    bool wrong_pose = false;
    auto* session = app.add_subcommand("session", "Run one simulated calibration session");
    add_client_options(session, session_args, true);
    session->add_flag("--wrong-pose", wrong_pose, "Submit one off-target view first");

    ClientArgs seed_client;
    SeedArgs seed_args;
    auto* seed = app.add_subcommand("seed", "Seed sessions, then query reliability");
    add_client_options(seed, seed_client, true);
    seed->add_option("--sessions", seed_args.sessions, "Number of sessions")
        ->check(CLI::PositiveNumber);
    seed->add_option("--focal-alternation", seed_args.focal_alternation,
                     "Alternate the true focal length by +- this fraction")
        ->check(CLI::Range(0.0, 0.9));
    seed->add_option("--parallel", seed_args.parallel, "Concurrent client sessions")
        ->check(CLI::PositiveNumber);
    seed->add_option("--model", seed_args.model, "Distortion model for the final query");

    ClientArgs query_client;
    QueryArgs query_args;
    auto* query = app.add_subcommand("query", "Query the calibration database");
    add_client_options(query, query_client, false);
    query->add_option("--camera", query_args.camera, "Camera name");
    query->add_option("--platform", query_args.platform, "Platform string");
    query->add_option("--width", query_args.width, "Image width");
    query->add_option("--height", query_args.height, "Image height");
    query->add_option("--zoom", query_args.zoom, "Zoom (0 when unknown)");
    query->add_option("--model", query_args.model, "Requested distortion model");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve) {
            return run_serve(serve_args);
        }
        if (*session) {
            return run_session_cmd(session_args, wrong_pose);
        }
        if (*seed) {
            return run_seed_cmd(seed_client, seed_args);
        }
        if (*query) {
            return run_query_cmd(query_client, query_args);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
