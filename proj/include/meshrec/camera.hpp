#pragma once

#include <string>
#include <variant>

#include "meshrec/core.hpp"

namespace meshrec {

// ---------------------------------------------------------------------------
// The three camera models. Points are expressed in body-centered coordinates
// (origin at the keypoint centroid); any camera rotation is folded into the
// body's global rotation, and the principal point sits at the image origin.
// ---------------------------------------------------------------------------

// Guard on the 1/(d + z) singularity. Violations are errors, not clamps:
// silent clamping corrupts Jacobians.
inline constexpr Scalar kEpsilonDepth = 1e-6;

struct PerspectiveCamera {
    Scalar f_x = 1000;  // pixels
    Scalar f_y = 1000;
    Scalar t_x = 0;     // model units, translation from body center to camera
    Scalar t_y = 0;
    Scalar d = 10;      // model units, distance along the optical axis

    bool operator==(const PerspectiveCamera&) const = default;
};

struct WeakPerspectiveCamera {
    Scalar s = 200;     // pixels per model unit
    Scalar t_u = 0;     // pixels
    Scalar t_v = 0;

    bool operator==(const WeakPerspectiveCamera&) const = default;
};

// Weak-perspective output rescaled per keypoint by d / (d + z): one extra
// scalar recovers the perspective foreshortening.
struct D2SCamera {
    Scalar s = 200;
    Scalar t_u = 0;
    Scalar t_v = 0;
    Scalar d = 10;      // model units

    bool operator==(const D2SCamera&) const = default;
};

enum class CameraKind : std::uint8_t { Perspective = 0, Weak = 1, D2S = 2 };

const char* to_string(CameraKind k);
CameraKind camera_kind_from_string(const std::string& s);

using CameraModel = std::variant<PerspectiveCamera, WeakPerspectiveCamera, D2SCamera>;

inline CameraKind kind_of(const CameraModel& cam) {
    return static_cast<CameraKind>(cam.index());
}

}  // namespace meshrec
