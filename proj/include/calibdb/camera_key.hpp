#pragma once

#include <string>

#include "calibdb/camera_model.hpp"

namespace calibdb {

/// Identity under which calibrations are stored and looked up. `platform`
/// carries the user-agent platform string; zoom is 0 when unknown.
struct CameraKey {
    std::string camera;
    std::string platform;
    ImageSize img_size;
    double zoom = 0.0;

    [[nodiscard]] auto valid() const -> bool {
        return !camera.empty() && !platform.empty() && img_size.valid() && zoom >= 0.0;
    }
    friend auto operator==(const CameraKey&, const CameraKey&) -> bool = default;
};

}  // namespace calibdb
