#ifndef CALIBDB_CALIBDB_H
#define CALIBDB_CALIBDB_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(CALIBDB_BUILDING_LIBRARY)
#define CALIBDB_API __attribute__((visibility("default")))
#else
#define CALIBDB_API
#endif

typedef enum calibdb_status {
    CALIBDB_OK = 0,
    CALIBDB_E_PRECONDITION = 1,
    CALIBDB_E_NON_CONVERGENCE = 2,
    CALIBDB_E_BEHIND_CAMERA = 3,
    CALIBDB_E_DEGENERATE_CONFIGURATION = 4,
    CALIBDB_E_DEGENERATE_MOTION = 5,
    CALIBDB_E_NUMERICAL_FAILURE = 6,
    CALIBDB_E_INSUFFICIENT_DATA = 7,
    CALIBDB_E_INFEASIBLE_TARGET = 8,
    CALIBDB_E_SESSION_NOT_CAPTURING = 9,
    CALIBDB_E_STORAGE_FAILURE = 10,
    CALIBDB_E_PROTOCOL = 11,
    CALIBDB_E_INVALID_ARGUMENT = 12,
    CALIBDB_E_INTERNAL = 13
} calibdb_status;

typedef enum calibdb_distortion_model {
    CALIBDB_RECTILINEAR = 0,
    CALIBDB_FISHEYE = 1
} calibdb_distortion_model;

typedef struct calibdb_camera {
    double fx, fy, cx, cy;
    calibdb_distortion_model model;
    double k[3];
} calibdb_camera;

/* Message describing the most recent failure on the calling thread. */
CALIBDB_API const char* calibdb_last_error(void);
CALIBDB_API const char* calibdb_status_name(calibdb_status status);
/* Releases strings returned through char** out-parameters. */
CALIBDB_API void calibdb_string_free(char* s);

/* Camera-frame point to pixel. */
CALIBDB_API calibdb_status calibdb_project(const calibdb_camera* cam, const double xyz[3],
                                           double px_out[2]);
/* Pixel to normalized undistorted image-plane coordinates. */
CALIBDB_API calibdb_status calibdb_unproject(const calibdb_camera* cam, const double px[2],
                                             double xy_out[2]);
CALIBDB_API calibdb_status calibdb_distort(const calibdb_camera* cam, const double xy[2],
                                           double out[2]);
CALIBDB_API calibdb_status calibdb_undistort(const calibdb_camera* cam, const double xy[2],
                                             double out[2]);

/* Request: {"board", "distortion_model", "img_size", "views": [observation...]}.
   Result: stored-result JSON (intrinsics, distortion, poses, error). */
CALIBDB_API calibdb_status calibdb_calibrate_json(const char* request_json, char** result_json);

typedef struct calibdb_server calibdb_server;

CALIBDB_API calibdb_status calibdb_server_create(const char* config_json, calibdb_server** out);
CALIBDB_API calibdb_status calibdb_server_start(calibdb_server* server);
/* Bound port after start, or -1. */
CALIBDB_API int calibdb_server_port(const calibdb_server* server);
CALIBDB_API calibdb_status calibdb_server_wait(calibdb_server* server);
CALIBDB_API calibdb_status calibdb_server_stop(calibdb_server* server);
CALIBDB_API void calibdb_server_destroy(calibdb_server* server);

/* Simulated client. Profiles and keys are JSON; reports are returned as JSON. */
CALIBDB_API calibdb_status calibdb_client_run_session(const char* profile_json,
                                                      const char* server_url, const char* token,
                                                      int inject_wrong_pose, char** report_json);
CALIBDB_API calibdb_status calibdb_client_seed(const char* profile_json, const char* server_url,
                                               const char* token, int n_sessions,
                                               double focal_alternation, int parallel,
                                               const char* query_model, char** summary_json);
/* query_model may be NULL. */
CALIBDB_API calibdb_status calibdb_client_query(const char* key_json, const char* server_url,
                                                const char* query_model, char** reply_json);

#ifdef __cplusplus
}
#endif

#endif
