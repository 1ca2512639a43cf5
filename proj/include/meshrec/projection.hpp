#pragma once

#include <vector>

#include "meshrec/camera.hpp"
#include "meshrec/core.hpp"

namespace meshrec {

// ---------------------------------------------------------------------------
// Keypoint containers. Coordinates are body-centered model units in 3D and
// pixels in 2D; visibility and skeleton-part tags ride along.
// ---------------------------------------------------------------------------

struct Keypoints3D {
    Points3 coords;                      // K x 3
    std::vector<std::uint8_t> visible;   // per keypoint
    std::vector<Part> part;

    int count() const { return static_cast<int>(coords.rows()); }
    int n_visible() const;
    bool operator==(const Keypoints3D& o) const {
        return exact_equal(coords, o.coords) && visible == o.visible && part == o.part;
    }
};

struct Keypoints2D {
    Points2 coords;                      // K x 2, pixels
    std::vector<std::uint8_t> visible;
    std::vector<Part> part;

    int count() const { return static_cast<int>(coords.rows()); }
    int n_visible() const;
    int n_visible(Part p) const;
    bool operator==(const Keypoints2D& o) const {
        return exact_equal(coords, o.coords) && visible == o.visible && part == o.part;
    }
};

// ---------------------------------------------------------------------------
// Projections. Invisible keypoints project to (0, 0) and are never validated;
// a visible keypoint at or behind the camera plane raises BehindCameraError
// listing the offending indices.
// ---------------------------------------------------------------------------

Keypoints2D project_perspective(const Keypoints3D& j, const PerspectiveCamera& cam);

Keypoints2D project_weak(const Keypoints3D& j, const WeakPerspectiveCamera& cam);

// Per-keypoint rescale factor d / (d + z).
Scalar d2s_scale(Scalar z, Scalar d);

Keypoints2D project_d2s(const Keypoints3D& j, const D2SCamera& cam);

Keypoints2D project(const Keypoints3D& j, const CameraModel& cam);

// ---------------------------------------------------------------------------
// Gap between the weak-perspective approximation s = f_x/d, t_u = f_x t_x/d
// and the exact per-keypoint perspective factors:
//   delta_s_i   = (f_x / d) * z_i / (d + z_i)
//   delta_t_u_i = (f_x t_x / d) * z_i / (d + z_i)
// Both routes (direct difference and factored form) are evaluated and checked
// against each other before returning.
// ---------------------------------------------------------------------------

struct ApproximationGap {
    VecX delta_s;    // per keypoint
    VecX delta_t_u;
};

ApproximationGap approximation_gap(const Keypoints3D& j, Scalar f_x, Scalar t_x, Scalar d);

// ---------------------------------------------------------------------------
// Analytic Jacobians for optimization. Rows (2i, 2i+1) hold du_i, dv_i;
// invisible keypoints get zero rows. Camera parameter column order:
//   perspective: [f_x, f_y, t_x, t_y, d]
//   weak:        [s, t_u, t_v]
//   d2s:         [s, t_u, t_v, d]
// ---------------------------------------------------------------------------

struct ProjectionJacobian {
    MatX d_point;   // 2K x 3
    MatX d_camera;  // 2K x n_camera_params
    int n_camera_params = 0;
};

int camera_param_count(CameraKind kind);
VecX camera_params(const CameraModel& cam);
CameraModel camera_from_params(CameraKind kind, const VecX& p);

ProjectionJacobian projection_jacobian(const Keypoints3D& j, const CameraModel& cam);

}  // namespace meshrec
