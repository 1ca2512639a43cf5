#include "meshrec/body_model.hpp"

namespace meshrec {

namespace {

struct Frame {
    Mat3 rot;
    Vec3 trans;
};

// Differential of a rigid frame; composes like the frame itself.
struct DFrame {
    Mat3 rot = Mat3::Zero();
    Vec3 trans = Vec3::Zero();
};

DFrame compose(const DFrame& da, const Frame& b) {
    return {da.rot * b.rot, da.rot * b.trans + da.trans};
}

DFrame compose(const Frame& a, const DFrame& db) {
    return {a.rot * db.rot, a.rot * db.trans};
}

DFrame add(const DFrame& a, const DFrame& b) {
    return {a.rot + b.rot, a.trans + b.trans};
}

}  // namespace

JointsJacobian joints_with_jacobian(const BodyModel& model, const FullParams& params,
                                    const JacobianBlocks& blocks) {
    if (!params.finite())
        throw NumericInputError("joints_with_jacobian: non-finite parameters");

    const int k_joints = model.n_joints();
    const auto& parent = model.joint_tree.parent;
    const ParamLayout layout = ParamLayout::of(model, params);

    const Points3 pose = local_pose(model, params);
    Points3 shaped_j = model.rest_joints;
    for (int m = 0; m < params.beta.size(); ++m)
        if (params.beta[m] != 0.0)
            for (int q = 0; q < k_joints; ++q)
                shaped_j.row(q) +=
                    params.beta[m] * model.shape_joint_delta.row(m).segment<3>(3 * q);

    // Local and world frames.
    std::vector<Frame> local(static_cast<size_t>(k_joints));
    std::vector<Frame> world(static_cast<size_t>(k_joints));
    std::vector<std::array<Mat3, 3>> drot(static_cast<size_t>(k_joints));
    for (int k = 0; k < k_joints; ++k) {
        const Vec3 aa = pose.row(k).transpose();
        local[static_cast<size_t>(k)].rot = rodrigues(aa);
        drot[static_cast<size_t>(k)] = rodrigues_jacobian(aa);
        const int p = parent[k];
        if (p < 0) {
            local[static_cast<size_t>(k)].trans = shaped_j.row(k).transpose();
            world[static_cast<size_t>(k)] = local[static_cast<size_t>(k)];
        } else {
            local[static_cast<size_t>(k)].trans =
                (shaped_j.row(k) - shaped_j.row(p)).transpose();
            const Frame& pw = world[static_cast<size_t>(p)];
            world[static_cast<size_t>(k)] = {
                pw.rot * local[static_cast<size_t>(k)].rot,
                pw.rot * local[static_cast<size_t>(k)].trans + pw.trans};
        }
    }

    // Shaped template on the regressor support only; keypoints never see the
    // other vertices.
    const auto& support = model.regressor_support;
    const int n_sup = static_cast<int>(support.size());
    std::vector<Vec3> tilde(static_cast<size_t>(n_sup));
    for (int s = 0; s < n_sup; ++s) {
        const int v = support[static_cast<size_t>(s)];
        Vec3 x = model.template_vertices.row(v).transpose();
        for (int m = 0; m < params.beta.size(); ++m)
            if (params.beta[m] != 0.0)
                x += params.beta[m] * model.shape_basis.row(m).segment<3>(3 * v).transpose();
        for (int m = 0; m < 10 && m < static_cast<int>(model.expression_basis.rows()); ++m)
            if (params.psi_face[m] != 0.0)
                x += params.psi_face[m] *
                     model.expression_basis.row(m).segment<3>(3 * v).transpose();
        tilde[static_cast<size_t>(s)] = x;
    }
    std::vector<int> support_slot(static_cast<size_t>(model.n_vertices()), -1);
    for (int s = 0; s < n_sup; ++s) support_slot[static_cast<size_t>(support[static_cast<size_t>(s)])] = s;

    // Posed support vertices and the regressed keypoints.
    std::vector<Vec3> posed(static_cast<size_t>(n_sup));
    for (int s = 0; s < n_sup; ++s) {
        const int v = support[static_cast<size_t>(s)];
        Vec3 acc = Vec3::Zero();
        for (const auto& [j, w] : model.skin_entries[static_cast<size_t>(v)]) {
            const Frame& g = world[static_cast<size_t>(j)];
            acc += w * (g.rot * (tilde[static_cast<size_t>(s)] -
                                 shaped_j.row(j).transpose()) +
                        g.trans);
        }
        posed[static_cast<size_t>(s)] = acc;
    }

    JointsJacobian out;
    out.layout = layout;
    out.joints.resize(k_joints, 3);
    for (int q = 0; q < k_joints; ++q) {
        Vec3 acc = Vec3::Zero();
        for (const auto& [v, w] : model.regressor_entries[static_cast<size_t>(q)])
            acc += w * posed[static_cast<size_t>(support_slot[static_cast<size_t>(v)])];
        out.joints.row(q) = acc.transpose();
    }
    out.d_joints.setZero(3 * k_joints, layout.total);

    std::vector<char> in_sub(static_cast<size_t>(k_joints));
    std::vector<DFrame> dworld(static_cast<size_t>(k_joints));
    std::vector<Vec3> dv(static_cast<size_t>(n_sup));

    // Writes d(keypoints)/d(column) given per-joint world-frame differentials
    // plus optional direct template/joint-position differentials.
    auto emit_column = [&](int col, const std::vector<char>& active,
                           const std::vector<DFrame>& dw,
                           const MatX* dtilde_basis, int dtilde_row,
                           const Points3* djoint0) {
        for (int s = 0; s < n_sup; ++s) {
            const int v = support[static_cast<size_t>(s)];
            Vec3 acc = Vec3::Zero();
            for (const auto& [j, w] : model.skin_entries[static_cast<size_t>(v)]) {
                const Frame& g = world[static_cast<size_t>(j)];
                const Vec3 rel = tilde[static_cast<size_t>(s)] - shaped_j.row(j).transpose();
                if (active[static_cast<size_t>(j)]) {
                    const DFrame& dg = dw[static_cast<size_t>(j)];
                    acc += w * (dg.rot * rel + dg.trans);
                }
                if (dtilde_basis != nullptr) {
                    Vec3 dt = dtilde_basis->row(dtilde_row).segment<3>(3 * v).transpose();
                    if (djoint0 != nullptr) dt -= djoint0->row(j).transpose();
                    acc += w * (g.rot * dt);
                } else if (djoint0 != nullptr) {
                    acc -= w * (g.rot * djoint0->row(j).transpose());
                }
            }
            dv[static_cast<size_t>(s)] = acc;
        }
        for (int q = 0; q < k_joints; ++q) {
            Vec3 acc = Vec3::Zero();
            for (const auto& [v, w] : model.regressor_entries[static_cast<size_t>(q)])
                acc += w * dv[static_cast<size_t>(support_slot[static_cast<size_t>(v)])];
            out.d_joints.block<3, 1>(3 * q, col) = acc;
        }
    };

    // --- Pose parameters: one subtree sweep per (joint, axis). ---
    auto pose_column = [&](int j, int axis, int col) {
        std::fill(in_sub.begin(), in_sub.end(), 0);
        in_sub[static_cast<size_t>(j)] = 1;
        DFrame dl;
        dl.rot = drot[static_cast<size_t>(j)][static_cast<size_t>(axis)];
        dl.trans = Vec3::Zero();
        // Local frame is [R | t] with t independent of the pose.
        DFrame dlocal{dl.rot, Vec3::Zero()};
        const int p = parent[j];
        dworld[static_cast<size_t>(j)] =
            p < 0 ? dlocal : compose(world[static_cast<size_t>(p)], dlocal);
        for (int k = j + 1; k < k_joints; ++k) {
            const int pk = parent[k];
            if (pk >= 0 && in_sub[static_cast<size_t>(pk)]) {
                in_sub[static_cast<size_t>(k)] = 1;
                dworld[static_cast<size_t>(k)] =
                    compose(dworld[static_cast<size_t>(pk)], local[static_cast<size_t>(k)]);
            }
        }
        emit_column(col, in_sub, dworld, nullptr, 0, nullptr);
    };

    const int n_body = model.config.n_body_joints;
    const int n_hand = model.config.n_hand_joints;
    const int jaw = n_body;
    const int left0 = n_body + model.config.n_jaw_joints;
    const int right0 = left0 + n_hand;

    if (blocks.global)
        for (int a = 0; a < 3; ++a) pose_column(0, a, layout.global_off + a);
    if (blocks.body)
        for (int j = 1; j < n_body; ++j)
            for (int a = 0; a < 3; ++a) pose_column(j, a, layout.body_off + 3 * (j - 1) + a);
    if (blocks.face)
        for (int a = 0; a < 3; ++a) pose_column(jaw, a, layout.psi_off + 10 + a);

    // Hands: full-axis columns first, contracted through the PCA basis if needed.
    for (int side = 0; blocks.hands && side < 2; ++side) {
        const int base = side == 0 ? left0 : right0;
        const int off = side == 0 ? layout.hand_left_off : layout.hand_right_off;
        if (params.hand_rep == HandRep::Full) {
            for (int h = 0; h < n_hand; ++h)
                for (int a = 0; a < 3; ++a) pose_column(base + h, a, off + 3 * h + a);
        } else {
            MatX full(3 * k_joints, 3 * n_hand);
            MatX saved = std::move(out.d_joints);
            out.d_joints.setZero(3 * k_joints, 3 * n_hand);
            for (int h = 0; h < n_hand; ++h)
                for (int a = 0; a < 3; ++a) pose_column(base + h, a, 3 * h + a);
            full = std::move(out.d_joints);
            out.d_joints = std::move(saved);
            const MatX& basis = side == 0 ? model.hand_pca_left : model.hand_pca_right;
            out.d_joints.middleCols(off, layout.hand_n) = full * basis.transpose();
        }
    }

    // --- Expression modes: pure template displacement on jaw-region vertices. ---
    std::fill(in_sub.begin(), in_sub.end(), 0);
    const int n_expr =
        blocks.face ? std::min<int>(10, static_cast<int>(model.expression_basis.rows())) : 0;
    for (int m = 0; m < n_expr; ++m)
        emit_column(layout.psi_off + m, in_sub, dworld, &model.expression_basis, m, nullptr);

    // --- Shape modes: move the template, the rest joints, and every frame. ---
    for (int m = 0; blocks.shape && m < layout.beta_n; ++m) {
        Points3 dj0(k_joints, 3);
        for (int q = 0; q < k_joints; ++q)
            dj0.row(q) = model.shape_joint_delta.row(m).segment<3>(3 * q);
        std::vector<char> active(static_cast<size_t>(k_joints), 1);
        for (int k = 0; k < k_joints; ++k) {
            const int p = parent[k];
            DFrame dlocal;
            dlocal.rot = Mat3::Zero();
            dlocal.trans = p < 0 ? Vec3(dj0.row(k).transpose())
                                 : Vec3((dj0.row(k) - dj0.row(p)).transpose());
            dworld[static_cast<size_t>(k)] =
                p < 0 ? dlocal
                      : add(compose(dworld[static_cast<size_t>(p)], local[static_cast<size_t>(k)]),
                            compose(world[static_cast<size_t>(p)], dlocal));
        }
        emit_column(layout.beta_off + m, active, dworld, &model.shape_basis, m, &dj0);
    }

    return out;
}

}  // namespace meshrec
