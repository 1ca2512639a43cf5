#include "meshrec/body_model.hpp"

#include <algorithm>
#include <cmath>

namespace meshrec {

const char* to_string(JointKind k) {
    switch (k) {
        case JointKind::Body: return "body";
        case JointKind::LeftHand: return "left_hand";
        case JointKind::RightHand: return "right_hand";
        case JointKind::Jaw: return "jaw";
    }
    return "body";
}

const char* to_string(Part p) {
    switch (p) {
        case Part::Body: return "body";
        case Part::LeftHand: return "left_hand";
        case Part::RightHand: return "right_hand";
        case Part::Face: return "face";
    }
    return "body";
}

Part part_of(JointKind k) {
    return k == JointKind::Jaw ? Part::Face : static_cast<Part>(k);
}

// ---------------------------------------------------------------------------
// Rotations
// ---------------------------------------------------------------------------

static Mat3 cross_matrix(const Vec3& v) {
    Mat3 k;
    k << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
         -v.y(), v.x(), 0;
    return k;
}

Mat3 rodrigues(const Vec3& v) {
    const Scalar t2 = v.squaredNorm();
    const Mat3 k = cross_matrix(v);
    Scalar a, b;  // sin(t)/t and (1 - cos(t))/t^2
    if (t2 < 1e-8) {
        a = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0);
        b = 0.5 - t2 / 24.0 * (1.0 - t2 / 30.0);
    } else {
        const Scalar t = std::sqrt(t2);
        a = std::sin(t) / t;
        b = (1.0 - std::cos(t)) / t2;
    }
    return Mat3::Identity() + a * k + b * (k * k);
}

std::array<Mat3, 3> rodrigues_jacobian(const Vec3& v) {
    std::array<Mat3, 3> out;
    const Scalar t2 = v.squaredNorm();
    if (t2 < 1e-8) {
        // Second-order expansion of d/dv_a [I + [v]x + [v]x^2 / 2].
        const Mat3 kv = cross_matrix(v);
        for (int a = 0; a < 3; ++a) {
            const Mat3 ke = cross_matrix(Vec3::Unit(a));
            out[a] = ke + 0.5 * (ke * kv + kv * ke);
        }
        return out;
    }
    // Gallego & Yezzi: dR/dv_a = (v_a [v]x + [v x ((I - R) e_a)]x) / |v|^2 * R
    const Mat3 r = rodrigues(v);
    const Mat3 kv = cross_matrix(v);
    for (int a = 0; a < 3; ++a) {
        const Vec3 w = v.cross((Mat3::Identity() - r) * Vec3::Unit(a));
        out[a] = ((v[a] * kv + cross_matrix(w)) / t2) * r;
    }
    return out;
}

Vec3 axis_angle_from_matrix(const Mat3& r) {
    const Scalar c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    const Scalar theta = std::acos(c);
    const Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));  // 2 sin(theta) * axis
    if (theta < 1e-7) return 0.5 * w;
    if (theta > M_PI - 1e-5) {
        // Near the pi branch the skew part vanishes; recover the axis from
        // the symmetric part (R + I)/2 = axis axis^T at exactly pi.
        const Mat3 s = 0.5 * (r + Mat3::Identity());
        int i = 0;
        s.diagonal().maxCoeff(&i);
        Vec3 axis = s.col(i);
        const Scalar n = axis.norm();
        if (n < 1e-12) return Vec3::Zero();
        axis /= n;
        if (w.dot(axis) < 0) axis = -axis;
        return theta * axis;
    }
    return (theta / (2.0 * std::sin(theta))) * w;
}

// ---------------------------------------------------------------------------
// Tree and model basics
// ---------------------------------------------------------------------------

Points3 JointTree::rest_positions() const {
    Points3 pos(n_joints(), 3);
    for (int k = 0; k < n_joints(); ++k) {
        const int p = parent[k];
        if (p < 0)
            pos.row(k) = rest_offset.row(k);
        else
            pos.row(k) = pos.row(p) + rest_offset.row(k);
    }
    return pos;
}

void BodyModel::finalize() {
    rest_joints = joint_tree.rest_positions();
    const int k_joints = n_joints();
    const int n = n_vertices();

    skin_entries.assign(static_cast<size_t>(n), {});
    for (int v = 0; v < n; ++v)
        for (int j = 0; j < k_joints; ++j)
            if (skin_weights(v, j) != 0.0)
                skin_entries[static_cast<size_t>(v)].emplace_back(j, skin_weights(v, j));

    regressor_entries.assign(static_cast<size_t>(k_joints), {});
    std::vector<char> in_support(static_cast<size_t>(n), 0);
    for (int j = 0; j < k_joints; ++j)
        for (int v = 0; v < n; ++v)
            if (joint_regressor(j, v) != 0.0) {
                regressor_entries[static_cast<size_t>(j)].emplace_back(v, joint_regressor(j, v));
                in_support[static_cast<size_t>(v)] = 1;
            }
    regressor_support.clear();
    for (int v = 0; v < n; ++v)
        if (in_support[static_cast<size_t>(v)]) regressor_support.push_back(v);

    // Keypoint displacement induced by each shape mode: P * B_m.
    const int modes = static_cast<int>(shape_basis.rows());
    shape_joint_delta.setZero(modes, 3 * k_joints);
    for (int m = 0; m < modes; ++m)
        for (int j = 0; j < k_joints; ++j) {
            Vec3 acc = Vec3::Zero();
            for (const auto& [v, w] : regressor_entries[static_cast<size_t>(j)])
                acc += w * shape_basis.row(m).segment<3>(3 * v).transpose();
            shape_joint_delta.row(m).segment<3>(3 * j) = acc.transpose();
        }

    Scalar eps = 0;
    for (int j = 0; j < k_joints; ++j) {
        Vec3 acc = Vec3::Zero();
        for (const auto& [v, w] : regressor_entries[static_cast<size_t>(j)])
            acc += w * template_vertices.row(v).transpose();
        eps = std::max(eps, (acc.transpose() - rest_joints.row(j)).norm());
    }
    epsilon_regressor = eps;
}

Scalar BodyModel::body_extent() const {
    return (rest_joints.colwise().maxCoeff() - rest_joints.colwise().minCoeff()).maxCoeff();
}

bool BodyModel::operator==(const BodyModel& o) const {
    return seed == o.seed && config == o.config && joint_tree == o.joint_tree &&
           exact_equal(template_vertices, o.template_vertices) &&
           exact_equal(faces, o.faces) && exact_equal(shape_basis, o.shape_basis) &&
           exact_equal(expression_basis, o.expression_basis) &&
           exact_equal(skin_weights, o.skin_weights) &&
           exact_equal(joint_regressor, o.joint_regressor) &&
           exact_equal(hand_pca_left, o.hand_pca_left) &&
           exact_equal(hand_pca_right, o.hand_pca_right) &&
           exact_equal(angle_limit_lo, o.angle_limit_lo) &&
           exact_equal(angle_limit_hi, o.angle_limit_hi);
}

FullParams FullParams::rest(const BodyModel& model) {
    FullParams p;
    p.theta_body = MatX::Zero(model.config.n_body_joints - 1, 3);
    p.hand_left = VecX::Zero(model.config.n_hand_pca);
    p.hand_right = VecX::Zero(model.config.n_hand_pca);
    p.psi_face = VecX::Zero(13);
    p.beta = VecX::Zero(model.config.n_shape_modes);
    return p;
}

bool FullParams::finite() const {
    bool ok = theta_global.allFinite() && theta_body.allFinite() && hand_left.allFinite() &&
              hand_right.allFinite() && psi_face.allFinite() && beta.allFinite();
    std::visit([&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, PerspectiveCamera>)
            ok = ok && std::isfinite(c.f_x) && std::isfinite(c.f_y) && std::isfinite(c.t_x) &&
                 std::isfinite(c.t_y) && std::isfinite(c.d);
        else if constexpr (std::is_same_v<T, WeakPerspectiveCamera>)
            ok = ok && std::isfinite(c.s) && std::isfinite(c.t_u) && std::isfinite(c.t_v);
        else
            ok = ok && std::isfinite(c.s) && std::isfinite(c.t_u) && std::isfinite(c.t_v) &&
                 std::isfinite(c.d);
    }, camera);
    return ok;
}

bool FullParams::operator==(const FullParams& o) const {
    return exact_equal(theta_global, o.theta_global) && exact_equal(theta_body, o.theta_body) &&
           hand_rep == o.hand_rep && exact_equal(hand_left, o.hand_left) &&
           exact_equal(hand_right, o.hand_right) && exact_equal(psi_face, o.psi_face) &&
           exact_equal(beta, o.beta) && camera == o.camera;
}

// ---------------------------------------------------------------------------
// Pose assembly
// ---------------------------------------------------------------------------

VecX expand_hand_pose(const BodyModel& model, const FullParams& params, bool left) {
    const VecX& h = left ? params.hand_left : params.hand_right;
    if (params.hand_rep == HandRep::Full) return h;
    const MatX& basis = left ? model.hand_pca_left : model.hand_pca_right;
    return basis.transpose() * h;
}

Points3 local_pose(const BodyModel& model, const FullParams& params) {
    const int k_joints = model.n_joints();
    const int n_body = model.config.n_body_joints;
    const int n_hand = model.config.n_hand_joints;
    Points3 pose = Points3::Zero(k_joints, 3);
    pose.row(0) = params.theta_global.transpose();
    for (int j = 1; j < n_body; ++j) pose.row(j) = params.theta_body.row(j - 1);
    const int jaw = n_body;
    pose.row(jaw) = params.psi_face.tail<3>().transpose();
    const VecX hl = expand_hand_pose(model, params, true);
    const VecX hr = expand_hand_pose(model, params, false);
    const int l0 = n_body + model.config.n_jaw_joints;
    const int r0 = l0 + n_hand;
    for (int j = 0; j < n_hand; ++j) {
        pose.row(l0 + j) = hl.segment<3>(3 * j).transpose();
        pose.row(r0 + j) = hr.segment<3>(3 * j).transpose();
    }
    return pose;
}

static Points3 shaped_joints_of(const BodyModel& model, const VecX& beta) {
    Points3 j = model.rest_joints;
    for (int m = 0; m < beta.size(); ++m) {
        if (beta[m] == 0.0) continue;
        for (int q = 0; q < model.n_joints(); ++q)
            j.row(q) += beta[m] * model.shape_joint_delta.row(m).segment<3>(3 * q);
    }
    return j;
}

FkResult forward_kinematics(const BodyModel& model, const FullParams& params) {
    if (!params.finite()) throw NumericInputError("forward_kinematics: non-finite parameters");
    const int k_joints = model.n_joints();
    const Points3 pose = local_pose(model, params);
    FkResult fk;
    fk.shaped_joints = shaped_joints_of(model, params.beta);
    fk.world.resize(static_cast<size_t>(k_joints));
    fk.relative.resize(static_cast<size_t>(k_joints));
    fk.joints.resize(k_joints, 3);

    for (int k = 0; k < k_joints; ++k) {
        const Mat3 r = rodrigues(pose.row(k).transpose());
        Mat4 local = Mat4::Identity();
        local.topLeftCorner<3, 3>() = r;
        const int p = model.joint_tree.parent[k];
        if (p < 0) {
            local.topRightCorner<3, 1>() = fk.shaped_joints.row(k).transpose();
            fk.world[static_cast<size_t>(k)] = local;
        } else {
            local.topRightCorner<3, 1>() =
                (fk.shaped_joints.row(k) - fk.shaped_joints.row(p)).transpose();
            fk.world[static_cast<size_t>(k)] = fk.world[static_cast<size_t>(p)] * local;
        }
        Mat4 unpose = Mat4::Identity();
        unpose.topRightCorner<3, 1>() = -fk.shaped_joints.row(k).transpose();
        fk.relative[static_cast<size_t>(k)] = fk.world[static_cast<size_t>(k)] * unpose;
        fk.joints.row(k) = fk.world[static_cast<size_t>(k)].topRightCorner<3, 1>().transpose();
    }
    return fk;
}

Points3 shaped_vertices(const BodyModel& model, const FullParams& params) {
    Points3 v = model.template_vertices;
    const int n = model.n_vertices();
    for (int m = 0; m < params.beta.size(); ++m) {
        if (params.beta[m] == 0.0) continue;
        for (int i = 0; i < n; ++i)
            v.row(i) += params.beta[m] * model.shape_basis.row(m).segment<3>(3 * i);
    }
    for (int m = 0; m < params.psi_face.size(); ++m) {
        if (params.psi_face[m] == 0.0 || m >= model.expression_basis.rows()) continue;
        for (int i = 0; i < n; ++i)
            v.row(i) += params.psi_face[m] * model.expression_basis.row(m).segment<3>(3 * i);
    }
    return v;
}

Points3 skin(const BodyModel& model, const FullParams& params) {
    const FkResult fk = forward_kinematics(model, params);
    const Points3 shaped = shaped_vertices(model, params);
    const int n = model.n_vertices();
    Points3 out = Points3::Zero(n, 3);
    for (int i = 0; i < n; ++i) {
        const Vec3 v = shaped.row(i).transpose();
        Vec3 acc = Vec3::Zero();
        for (const auto& [j, w] : model.skin_entries[static_cast<size_t>(i)]) {
            const Mat4& g = fk.relative[static_cast<size_t>(j)];
            acc += w * (g.topLeftCorner<3, 3>() * v + g.topRightCorner<3, 1>());
        }
        out.row(i) = acc.transpose();
    }
    return out;
}

Points3 regress_joints(const BodyModel& model, const Points3& vertices) {
    if (vertices.rows() != model.n_vertices())
        throw DimensionError("regress_joints: expected " + std::to_string(model.n_vertices()) +
                             " vertices, got " + std::to_string(vertices.rows()));
    const int k_joints = model.n_joints();
    Points3 j = Points3::Zero(k_joints, 3);
    for (int q = 0; q < k_joints; ++q) {
        Vec3 acc = Vec3::Zero();
        for (const auto& [v, w] : model.regressor_entries[static_cast<size_t>(q)])
            acc += w * vertices.row(v).transpose();
        j.row(q) = acc.transpose();
    }
    return j;
}

// ---------------------------------------------------------------------------
// Parameter packing
// ---------------------------------------------------------------------------

ParamLayout ParamLayout::of(const BodyModel& model, const FullParams& params) {
    ParamLayout l;
    l.body_n = 3 * (model.config.n_body_joints - 1);
    l.hand_n = params.hand_rep == HandRep::Pca ? model.config.n_hand_pca
                                               : 3 * model.config.n_hand_joints;
    l.beta_n = model.config.n_shape_modes;
    l.global_off = 0;
    l.body_off = 3;
    l.hand_left_off = l.body_off + l.body_n;
    l.hand_right_off = l.hand_left_off + l.hand_n;
    l.psi_off = l.hand_right_off + l.hand_n;
    l.beta_off = l.psi_off + 13;
    l.total = l.beta_off + l.beta_n;
    return l;
}

VecX ParamLayout::pack(const FullParams& params) const {
    VecX v(total);
    v.segment<3>(global_off) = params.theta_global;
    for (int j = 0; j < body_n / 3; ++j)
        v.segment<3>(body_off + 3 * j) = params.theta_body.row(j).transpose();
    v.segment(hand_left_off, hand_n) = params.hand_left;
    v.segment(hand_right_off, hand_n) = params.hand_right;
    v.segment(psi_off, 13) = params.psi_face;
    v.segment(beta_off, beta_n) = params.beta;
    return v;
}

void ParamLayout::unpack(const VecX& v, FullParams& params) const {
    if (v.size() != total) throw DimensionError("ParamLayout::unpack: vector size mismatch");
    params.theta_global = v.segment<3>(global_off);
    params.theta_body.resize(body_n / 3, 3);
    for (int j = 0; j < body_n / 3; ++j)
        params.theta_body.row(j) = v.segment<3>(body_off + 3 * j).transpose();
    params.hand_left = v.segment(hand_left_off, hand_n);
    params.hand_right = v.segment(hand_right_off, hand_n);
    params.psi_face = v.segment(psi_off, 13);
    params.beta = v.segment(beta_off, beta_n);
}

}  // namespace meshrec
