#include "meshrec/projection.hpp"

#include <algorithm>
#include <cmath>

namespace meshrec {

const char* to_string(CameraKind k) {
    switch (k) {
        case CameraKind::Perspective: return "perspective";
        case CameraKind::Weak: return "weak";
        case CameraKind::D2S: return "d2s";
    }
    return "perspective";
}

CameraKind camera_kind_from_string(const std::string& s) {
    if (s == "perspective") return CameraKind::Perspective;
    if (s == "weak") return CameraKind::Weak;
    if (s == "d2s") return CameraKind::D2S;
    throw InvalidConfigError("unknown camera kind '" + s + "'");
}

int Keypoints3D::n_visible() const {
    return static_cast<int>(std::count(visible.begin(), visible.end(), std::uint8_t{1}));
}

int Keypoints2D::n_visible() const {
    return static_cast<int>(std::count(visible.begin(), visible.end(), std::uint8_t{1}));
}

int Keypoints2D::n_visible(Part p) const {
    int n = 0;
    for (size_t i = 0; i < visible.size(); ++i)
        if (visible[i] && part[i] == p) ++n;
    return n;
}

namespace {

void check_visible_finite(const Keypoints3D& j, const char* where) {
    for (int i = 0; i < j.count(); ++i)
        if (j.visible[static_cast<size_t>(i)] && !j.coords.row(i).allFinite())
            throw NumericInputError(std::string(where) + ": non-finite visible keypoint " +
                                    std::to_string(i));
}

// Collects visible keypoints with d + z <= epsilon; empty means all valid.
std::vector<int> depth_violations(const Keypoints3D& j, Scalar d) {
    std::vector<int> bad;
    for (int i = 0; i < j.count(); ++i)
        if (j.visible[static_cast<size_t>(i)] && d + j.coords(i, 2) <= kEpsilonDepth)
            bad.push_back(i);
    return bad;
}

[[noreturn]] void throw_behind(const std::vector<int>& bad, const char* where) {
    std::string msg = std::string(where) + ": keypoints at or behind the camera plane:";
    for (int i : bad) msg += " " + std::to_string(i);
    throw BehindCameraError(msg, bad);
}

Keypoints2D blank_like(const Keypoints3D& j) {
    Keypoints2D out;
    out.coords = Points2::Zero(j.count(), 2);
    out.visible = j.visible;
    out.part = j.part;
    return out;
}

}  // namespace

Keypoints2D project_perspective(const Keypoints3D& j, const PerspectiveCamera& cam) {
    check_visible_finite(j, "project_perspective");
    if (!(cam.d > 0)) throw InvalidConfigError("perspective camera requires d > 0");
    if (const auto bad = depth_violations(j, cam.d); !bad.empty())
        throw_behind(bad, "project_perspective");
    Keypoints2D out = blank_like(j);
    for (int i = 0; i < j.count(); ++i) {
        if (!j.visible[static_cast<size_t>(i)]) continue;
        const Scalar denom = cam.d + j.coords(i, 2);
        out.coords(i, 0) = cam.f_x * (j.coords(i, 0) + cam.t_x) / denom;
        out.coords(i, 1) = cam.f_y * (j.coords(i, 1) + cam.t_y) / denom;
    }
    return out;
}

Keypoints2D project_weak(const Keypoints3D& j, const WeakPerspectiveCamera& cam) {
    check_visible_finite(j, "project_weak");
    if (!(cam.s > 0)) throw InvalidConfigError("weak-perspective camera requires s > 0");
    Keypoints2D out = blank_like(j);
    for (int i = 0; i < j.count(); ++i) {
        if (!j.visible[static_cast<size_t>(i)]) continue;
        out.coords(i, 0) = cam.s * j.coords(i, 0) + cam.t_u;
        out.coords(i, 1) = cam.s * j.coords(i, 1) + cam.t_v;
    }
    return out;
}

Scalar d2s_scale(Scalar z, Scalar d) {
    if (!(d > 0) || d + z <= kEpsilonDepth)
        throw BehindCameraError("d2s_scale: singular depth d + z = " + std::to_string(d + z));
    return d / (d + z);
}

Keypoints2D project_d2s(const Keypoints3D& j, const D2SCamera& cam) {
    check_visible_finite(j, "project_d2s");
    if (!(cam.s > 0)) throw InvalidConfigError("d2s camera requires s > 0");
    if (!(cam.d > 0)) throw InvalidConfigError("d2s camera requires d > 0");
    if (const auto bad = depth_violations(j, cam.d); !bad.empty())
        throw_behind(bad, "project_d2s");
    Keypoints2D out = blank_like(j);
    for (int i = 0; i < j.count(); ++i) {
        if (!j.visible[static_cast<size_t>(i)]) continue;
        const Scalar si = cam.d / (cam.d + j.coords(i, 2));
        out.coords(i, 0) = si * (cam.s * j.coords(i, 0) + cam.t_u);
        out.coords(i, 1) = si * (cam.s * j.coords(i, 1) + cam.t_v);
    }
    return out;
}

Keypoints2D project(const Keypoints3D& j, const CameraModel& cam) {
    return std::visit([&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, PerspectiveCamera>) return project_perspective(j, c);
        else if constexpr (std::is_same_v<T, WeakPerspectiveCamera>) return project_weak(j, c);
        else return project_d2s(j, c);
    }, cam);
}

ApproximationGap approximation_gap(const Keypoints3D& j, Scalar f_x, Scalar t_x, Scalar d) {
    if (!(d > 0)) throw InvalidConfigError("approximation_gap requires d > 0");
    if (const auto bad = depth_violations(j, d); !bad.empty())
        throw_behind(bad, "approximation_gap");
    ApproximationGap gap;
    gap.delta_s.setZero(j.count());
    gap.delta_t_u.setZero(j.count());
    for (int i = 0; i < j.count(); ++i) {
        if (!j.visible[static_cast<size_t>(i)]) continue;
        const Scalar z = j.coords(i, 2);
        const Scalar factored_s = (f_x / d) * (z / (d + z));
        const Scalar direct_s = f_x / d - f_x / (d + z);
        const Scalar scale_s = std::max({std::abs(factored_s), std::abs(direct_s), 1.0});
        if (std::abs(factored_s - direct_s) > 1e-9 * scale_s)
            throw NumericInputError("approximation_gap: factored/direct routes disagree");
        gap.delta_s[i] = factored_s;
        gap.delta_t_u[i] = (f_x * t_x / d) * (z / (d + z));
    }
    return gap;
}

int camera_param_count(CameraKind kind) {
    switch (kind) {
        case CameraKind::Perspective: return 5;
        case CameraKind::Weak: return 3;
        case CameraKind::D2S: return 4;
    }
    return 0;
}

VecX camera_params(const CameraModel& cam) {
    return std::visit([](const auto& c) -> VecX {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, PerspectiveCamera>) {
            VecX p(5);
            p << c.f_x, c.f_y, c.t_x, c.t_y, c.d;
            return p;
        } else if constexpr (std::is_same_v<T, WeakPerspectiveCamera>) {
            VecX p(3);
            p << c.s, c.t_u, c.t_v;
            return p;
        } else {
            VecX p(4);
            p << c.s, c.t_u, c.t_v, c.d;
            return p;
        }
    }, cam);
}

CameraModel camera_from_params(CameraKind kind, const VecX& p) {
    switch (kind) {
        case CameraKind::Perspective:
            if (p.size() != 5) throw DimensionError("perspective camera expects 5 params");
            return PerspectiveCamera{p[0], p[1], p[2], p[3], p[4]};
        case CameraKind::Weak:
            if (p.size() != 3) throw DimensionError("weak camera expects 3 params");
            return WeakPerspectiveCamera{p[0], p[1], p[2]};
        case CameraKind::D2S:
            if (p.size() != 4) throw DimensionError("d2s camera expects 4 params");
            return D2SCamera{p[0], p[1], p[2], p[3]};
    }
    throw InvalidConfigError("unknown camera kind");
}

ProjectionJacobian projection_jacobian(const Keypoints3D& j, const CameraModel& cam) {
    check_visible_finite(j, "projection_jacobian");
    const int k = j.count();
    ProjectionJacobian jac;
    jac.n_camera_params = camera_param_count(kind_of(cam));
    jac.d_point.setZero(2 * k, 3);
    jac.d_camera.setZero(2 * k, jac.n_camera_params);

    std::visit([&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, PerspectiveCamera>) {
            if (const auto bad = depth_violations(j, c.d); !bad.empty())
                throw_behind(bad, "projection_jacobian");
            for (int i = 0; i < k; ++i) {
                if (!j.visible[static_cast<size_t>(i)]) continue;
                const Scalar x = j.coords(i, 0), y = j.coords(i, 1), z = j.coords(i, 2);
                const Scalar w = 1.0 / (c.d + z);
                // u = f_x (x + t_x) w ; v = f_y (y + t_y) w
                jac.d_point(2 * i, 0) = c.f_x * w;
                jac.d_point(2 * i, 2) = -c.f_x * (x + c.t_x) * w * w;
                jac.d_point(2 * i + 1, 1) = c.f_y * w;
                jac.d_point(2 * i + 1, 2) = -c.f_y * (y + c.t_y) * w * w;
                jac.d_camera(2 * i, 0) = (x + c.t_x) * w;        // f_x
                jac.d_camera(2 * i, 2) = c.f_x * w;              // t_x
                jac.d_camera(2 * i, 4) = -c.f_x * (x + c.t_x) * w * w;  // d
                jac.d_camera(2 * i + 1, 1) = (y + c.t_y) * w;
                jac.d_camera(2 * i + 1, 3) = c.f_y * w;
                jac.d_camera(2 * i + 1, 4) = -c.f_y * (y + c.t_y) * w * w;
            }
        } else if constexpr (std::is_same_v<T, WeakPerspectiveCamera>) {
            for (int i = 0; i < k; ++i) {
                if (!j.visible[static_cast<size_t>(i)]) continue;
                jac.d_point(2 * i, 0) = c.s;
                jac.d_point(2 * i + 1, 1) = c.s;
                jac.d_camera(2 * i, 0) = j.coords(i, 0);   // s
                jac.d_camera(2 * i, 1) = 1.0;              // t_u
                jac.d_camera(2 * i + 1, 0) = j.coords(i, 1);
                jac.d_camera(2 * i + 1, 2) = 1.0;          // t_v
            }
        } else {
            if (const auto bad = depth_violations(j, c.d); !bad.empty())
                throw_behind(bad, "projection_jacobian");
            for (int i = 0; i < k; ++i) {
                if (!j.visible[static_cast<size_t>(i)]) continue;
                const Scalar x = j.coords(i, 0), y = j.coords(i, 1), z = j.coords(i, 2);
                const Scalar w = 1.0 / (c.d + z);
                const Scalar si = c.d * w;
                const Scalar pu = c.s * x + c.t_u;
                const Scalar pv = c.s * y + c.t_v;
                // u = si (s x + t_u)
                jac.d_point(2 * i, 0) = si * c.s;
                jac.d_point(2 * i, 2) = -c.d * w * w * pu;
                jac.d_point(2 * i + 1, 1) = si * c.s;
                jac.d_point(2 * i + 1, 2) = -c.d * w * w * pv;
                jac.d_camera(2 * i, 0) = si * x;           // s
                jac.d_camera(2 * i, 1) = si;               // t_u
                jac.d_camera(2 * i, 3) = pu * z * w * w;   // d: d(si)/dd = z / (d+z)^2
                jac.d_camera(2 * i + 1, 0) = si * y;
                jac.d_camera(2 * i + 1, 2) = si;
                jac.d_camera(2 * i + 1, 3) = pv * z * w * w;
            }
        }
    }, cam);
    return jac;
}

}  // namespace meshrec
