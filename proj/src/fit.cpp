#include "meshrec/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "meshrec/json_io.hpp"
#include "meshrec/parallel.hpp"

namespace meshrec {

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

Scalar rationality_penalty(const BodyModel& model, const FullParams& params, Scalar lambda_beta) {
    const Points3 pose = local_pose(model, params);
    Scalar penalty = 0;
    for (int j = 0; j < model.n_joints(); ++j)
        for (int a = 0; a < 3; ++a) {
            const Scalar v = pose(j, a);
            const Scalar over = std::max(Scalar(0), v - model.angle_limit_hi(j, a));
            const Scalar under = std::max(Scalar(0), model.angle_limit_lo(j, a) - v);
            penalty += over * over + under * under;
        }
    return penalty + lambda_beta * params.beta.squaredNorm();
}

namespace {

// dL/d(pose(j, a)) routed to the packed parameter vector; hand axes chain
// through the PCA basis when the hand representation is compressed.
void add_pose_grad(const BodyModel& model, const FullParams& params, const ParamLayout& lay,
                   int j, int a, Scalar g, VecX& d_body) {
    const int nb = model.config.n_body_joints;
    const int jaw = nb;
    const int l0 = nb + model.config.n_jaw_joints;
    const int r0 = l0 + model.config.n_hand_joints;
    if (j == 0) {
        d_body[lay.global_off + a] += g;
    } else if (j < nb) {
        d_body[lay.body_off + 3 * (j - 1) + a] += g;
    } else if (j == jaw) {
        d_body[lay.psi_off + 10 + a] += g;
    } else if (j < r0) {
        const int h = j - l0;
        if (params.hand_rep == HandRep::Full)
            d_body[lay.hand_left_off + 3 * h + a] += g;
        else
            for (int c = 0; c < lay.hand_n; ++c)
                d_body[lay.hand_left_off + c] += g * model.hand_pca_left(c, 3 * h + a);
    } else {
        const int h = j - r0;
        if (params.hand_rep == HandRep::Full)
            d_body[lay.hand_right_off + 3 * h + a] += g;
        else
            for (int c = 0; c < lay.hand_n; ++c)
                d_body[lay.hand_right_off + c] += g * model.hand_pca_right(c, 3 * h + a);
    }
}

// Posed keypoints without the full mesh: only the regressor-support vertices
// are skinned. Matches regress_joints(skin(...)) exactly.
Points3 support_joints(const BodyModel& model, const FullParams& params) {
    const FkResult fk = forward_kinematics(model, params);
    Points3 out(model.n_joints(), 3);
    std::vector<Vec3> posed(model.regressor_support.size());
    for (size_t s = 0; s < model.regressor_support.size(); ++s) {
        const int v = model.regressor_support[s];
        Vec3 x = model.template_vertices.row(v).transpose();
        for (int m = 0; m < params.beta.size(); ++m)
            if (params.beta[m] != 0.0)
                x += params.beta[m] * model.shape_basis.row(m).segment<3>(3 * v).transpose();
        for (int m = 0; m < 10 && m < static_cast<int>(model.expression_basis.rows()); ++m)
            if (params.psi_face[m] != 0.0)
                x += params.psi_face[m] *
                     model.expression_basis.row(m).segment<3>(3 * v).transpose();
        Vec3 acc = Vec3::Zero();
        for (const auto& [k, w] : model.skin_entries[static_cast<size_t>(v)]) {
            const Mat4& g = fk.relative[static_cast<size_t>(k)];
            acc += w * (g.topLeftCorner<3, 3>() * x + g.topRightCorner<3, 1>());
        }
        posed[s] = acc;
    }
    std::vector<int> slot(static_cast<size_t>(model.n_vertices()), -1);
    for (size_t s = 0; s < model.regressor_support.size(); ++s)
        slot[static_cast<size_t>(model.regressor_support[s])] = static_cast<int>(s);
    for (int q = 0; q < model.n_joints(); ++q) {
        Vec3 acc = Vec3::Zero();
        for (const auto& [v, w] : model.regressor_entries[static_cast<size_t>(q)])
            acc += w * posed[static_cast<size_t>(slot[static_cast<size_t>(v)])];
        out.row(q) = acc.transpose();
    }
    return out;
}

struct LossWork {
    LossBreakdown bd;
    VecX d_body;
    VecX d_camera;
    ParamLayout layout;
};

// Floor on |residual| in the IRLS weights that turn the L1 reprojection term
// into a Gauss-Newton contribution.
constexpr Scalar kIrlsFloor = 0.25;  // pixels

LossWork compute_loss(const BodyModel& model, const FullParams& params, const FitTargets& targets,
                      const FitWeights& weights, Scalar lambda_beta, bool want_grad,
                      const JacobianBlocks& blocks, MatX* h_out = nullptr) {
    if (targets.j2d == nullptr && targets.j3d == nullptr && targets.gt_params == nullptr)
        throw InvalidConfigError("loss_total: no targets given");

    LossWork work;
    work.layout = ParamLayout::of(model, params);
    work.bd.weights = weights;
    const int n_cam = camera_param_count(kind_of(params.camera));
    if (want_grad) {
        work.d_body.setZero(work.layout.total);
        work.d_camera.setZero(n_cam);
    }
    if (h_out != nullptr) h_out->setZero(work.layout.total + n_cam, work.layout.total + n_cam);

    const int k_joints = model.n_joints();
    const bool need_joints = targets.j2d != nullptr || targets.j3d != nullptr;

    Points3 joints;
    MatX d_joints_centered;
    if (need_joints) {
        if (want_grad) {
            JointsJacobian jj = joints_with_jacobian(model, params, blocks);
            joints = std::move(jj.joints);
            d_joints_centered = std::move(jj.d_joints);
            // Centering removes the per-axis column mean.
            for (int p = 0; p < d_joints_centered.cols(); ++p)
                for (int a = 0; a < 3; ++a) {
                    Scalar mean = 0;
                    for (int q = 0; q < k_joints; ++q) mean += d_joints_centered(3 * q + a, p);
                    mean /= k_joints;
                    for (int q = 0; q < k_joints; ++q) d_joints_centered(3 * q + a, p) -= mean;
                }
        } else {
            joints = support_joints(model, params);
        }
        const Eigen::RowVector3d mean = joints.colwise().mean();
        joints.rowwise() -= mean;
    }

    VecX g_joints;  // dL/d(centered joints), rows 3q + axis
    if (want_grad && need_joints) g_joints.setZero(3 * k_joints);

    // --- L_3D ---
    if (targets.j3d != nullptr) {
        const Keypoints3D& gt = *targets.j3d;
        if (gt.count() != k_joints) throw DimensionError("loss_total: j3d keypoint count");
        int n_vis = 0;
        for (int i = 0; i < k_joints; ++i)
            if (gt.visible[static_cast<size_t>(i)]) ++n_vis;
        if (n_vis == 0) throw EmptyEvaluationError("loss_total: j3d has no visible keypoints");
        const Scalar denom = 3.0 * n_vis;
        for (int i = 0; i < k_joints; ++i) {
            if (!gt.visible[static_cast<size_t>(i)]) continue;
            const Vec3 r = (joints.row(i) - gt.coords.row(i)).transpose();
            work.bd.l_3d += r.squaredNorm() / denom;
            if (want_grad)
                for (int a = 0; a < 3; ++a)
                    g_joints[3 * i + a] += weights.w_3d * 2.0 * r[a] / denom;
            if (h_out != nullptr)
                for (int a = 0; a < 3; ++a)
                    h_out->topLeftCorner(work.layout.total, work.layout.total).noalias() +=
                        (weights.w_3d * 2.0 / denom) *
                        (d_joints_centered.row(3 * i + a).transpose() *
                         d_joints_centered.row(3 * i + a));
        }
    }

    // --- L_2D ---
    if (targets.j2d != nullptr) {
        const Keypoints2D& gt = *targets.j2d;
        if (gt.count() != k_joints) throw DimensionError("loss_total: j2d keypoint count");
        Keypoints3D kp;
        kp.coords = joints;
        kp.visible = gt.visible;
        kp.part = gt.part;
        const int n_vis = gt.n_visible();
        if (n_vis == 0) throw EmptyEvaluationError("loss_total: j2d has no visible keypoints");
        const Scalar denom = 2.0 * n_vis;
        const Keypoints2D pred = project(kp, params.camera);
        ProjectionJacobian pj;
        if (want_grad) pj = projection_jacobian(kp, params.camera);
        VecX row;
        for (int i = 0; i < k_joints; ++i) {
            if (!gt.visible[static_cast<size_t>(i)]) continue;
            for (int c = 0; c < 2; ++c) {
                const Scalar r = pred.coords(i, c) - gt.coords(i, c);
                work.bd.l_2d += std::abs(r) / denom;
                if (!want_grad) continue;
                const Scalar s = (r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0)) / denom;
                for (int a = 0; a < 3; ++a)
                    g_joints[3 * i + a] += weights.w_2d * s * pj.d_point(2 * i + c, a);
                work.d_camera += weights.w_2d * s * pj.d_camera.row(2 * i + c).transpose();
                if (h_out != nullptr) {
                    row.setZero(work.layout.total + n_cam);
                    row.head(work.layout.total) =
                        (pj.d_point.row(2 * i + c) *
                         d_joints_centered.middleRows(3 * i, 3))
                            .transpose();
                    row.tail(n_cam) = pj.d_camera.row(2 * i + c).transpose();
                    const Scalar omega =
                        weights.w_2d / (denom * std::max(std::abs(r), kIrlsFloor));
                    h_out->noalias() += omega * (row * row.transpose());
                }
            }
        }
    }

    if (want_grad && need_joints) work.d_body += d_joints_centered.transpose() * g_joints;

    // --- L_pm ---
    if (targets.gt_params != nullptr) {
        const FullParams& gt = *targets.gt_params;
        const Points3 pose_p = local_pose(model, params);
        const Points3 pose_g = local_pose(model, gt);
        const Scalar denom = 9.0 * k_joints + params.beta.size() + 10.0;
        for (int j = 0; j < k_joints; ++j) {
            const Vec3 aa = pose_p.row(j).transpose();
            const Mat3 rp = rodrigues(aa);
            const Mat3 rg = rodrigues(pose_g.row(j).transpose());
            work.bd.l_pm += (rp - rg).squaredNorm() / denom;
            if (want_grad) {
                const auto dr = rodrigues_jacobian(aa);
                for (int a = 0; a < 3; ++a) {
                    const Scalar g = weights.w_pm * 2.0 *
                                     ((rp - rg).cwiseProduct(dr[static_cast<size_t>(a)])).sum() /
                                     denom;
                    add_pose_grad(model, params, work.layout, j, a, g, work.d_body);
                }
            }
        }
        const VecX dbeta = params.beta - gt.beta;
        const VecX dpsi = params.psi_face.head(10) - gt.psi_face.head(10);
        work.bd.l_pm += (dbeta.squaredNorm() + dpsi.squaredNorm()) / denom;
        if (want_grad) {
            work.d_body.segment(work.layout.beta_off, work.layout.beta_n) +=
                weights.w_pm * 2.0 * dbeta / denom;
            work.d_body.segment(work.layout.psi_off, 10) += weights.w_pm * 2.0 * dpsi / denom;
        }
    }

    // --- L_r ---
    {
        const Points3 pose = local_pose(model, params);
        VecX dir;
        for (int j = 0; j < k_joints; ++j)
            for (int a = 0; a < 3; ++a) {
                const Scalar v = pose(j, a);
                const Scalar over = std::max(Scalar(0), v - model.angle_limit_hi(j, a));
                const Scalar under = std::max(Scalar(0), model.angle_limit_lo(j, a) - v);
                work.bd.l_r += over * over + under * under;
                if ((want_grad || h_out != nullptr) && (over > 0 || under > 0)) {
                    if (want_grad)
                        add_pose_grad(model, params, work.layout, j, a,
                                      weights.w_r * 2.0 * (over - under), work.d_body);
                    if (h_out != nullptr) {
                        dir.setZero(work.layout.total);
                        add_pose_grad(model, params, work.layout, j, a, 1.0, dir);
                        h_out->topLeftCorner(work.layout.total, work.layout.total).noalias() +=
                            (weights.w_r * 2.0) * (dir * dir.transpose());
                    }
                }
            }
        work.bd.l_r += lambda_beta * params.beta.squaredNorm();
        if (want_grad)
            work.d_body.segment(work.layout.beta_off, work.layout.beta_n) +=
                weights.w_r * 2.0 * lambda_beta * params.beta;
        if (h_out != nullptr)
            for (int m = 0; m < work.layout.beta_n; ++m)
                (*h_out)(work.layout.beta_off + m, work.layout.beta_off + m) +=
                    weights.w_r * 2.0 * lambda_beta;
    }

    work.bd.total = weights.w_2d * work.bd.l_2d + weights.w_3d * work.bd.l_3d +
                    weights.w_pm * work.bd.l_pm + weights.w_r * work.bd.l_r;
    return work;
}

}  // namespace

LossBreakdown loss_total(const BodyModel& model, const FullParams& params,
                         const FitTargets& targets, const FitWeights& weights,
                         Scalar lambda_beta) {
    return compute_loss(model, params, targets, weights, lambda_beta, false, {}).bd;
}

LossGradient loss_gradient(const BodyModel& model, const FullParams& params,
                           const FitTargets& targets, const FitWeights& weights,
                           Scalar lambda_beta) {
    LossWork w = compute_loss(model, params, targets, weights, lambda_beta, true, {});
    return {w.bd, std::move(w.d_body), std::move(w.d_camera), w.layout};
}

// ---------------------------------------------------------------------------
// Fit space: packed body parameters plus a normalized camera block. Positive
// camera parameters live in log space; image translations are divided by a
// pixel scale so every fit coordinate moves on a comparable footing.
// ---------------------------------------------------------------------------

namespace {

struct FitSpace {
    ParamLayout layout;
    CameraKind kind;
    Scalar t_pixels = 50;   // scale for t_u, t_v
    Scalar t_model = 0.2;   // scale for perspective t_x, t_y
    int n_cam = 0;
    int total = 0;

    static FitSpace of(const BodyModel& model, const FullParams& params, CameraKind kind,
                       Scalar t_pixels) {
        FitSpace fs;
        fs.layout = ParamLayout::of(model, params);
        fs.kind = kind;
        fs.t_pixels = std::max(Scalar(1), t_pixels);
        fs.t_model = std::max(Scalar(1e-3), 0.1 * model.body_extent());
        fs.n_cam = kind == CameraKind::Weak ? 3 : 4;
        fs.total = fs.layout.total + fs.n_cam;
        return fs;
    }

    VecX pack(const FullParams& params) const {
        VecX x(total);
        x.head(layout.total) = layout.pack(params);
        VecX c(n_cam);
        switch (kind) {
            case CameraKind::Weak: {
                const auto& cam = std::get<WeakPerspectiveCamera>(params.camera);
                c << std::log(cam.s), cam.t_u / t_pixels, cam.t_v / t_pixels;
                break;
            }
            case CameraKind::D2S: {
                const auto& cam = std::get<D2SCamera>(params.camera);
                c << std::log(cam.s), cam.t_u / t_pixels, cam.t_v / t_pixels, std::log(cam.d);
                break;
            }
            case CameraKind::Perspective: {
                const auto& cam = std::get<PerspectiveCamera>(params.camera);
                // Single focal length (f_x + f_y) / 2; the fitter never
                // separates them.
                c << std::log(0.5 * (cam.f_x + cam.f_y)), cam.t_x / t_model, cam.t_y / t_model,
                    std::log(cam.d);
                break;
            }
        }
        x.tail(n_cam) = c;
        return x;
    }

    void unpack(const VecX& x, FullParams& params) const {
        layout.unpack(x.head(layout.total), params);
        const VecX c = x.tail(n_cam);
        switch (kind) {
            case CameraKind::Weak:
                params.camera =
                    WeakPerspectiveCamera{std::exp(c[0]), c[1] * t_pixels, c[2] * t_pixels};
                break;
            case CameraKind::D2S:
                params.camera = D2SCamera{std::exp(c[0]), c[1] * t_pixels, c[2] * t_pixels,
                                          std::exp(c[3])};
                break;
            case CameraKind::Perspective: {
                const Scalar f = std::exp(c[0]);
                params.camera =
                    PerspectiveCamera{f, f, c[1] * t_model, c[2] * t_model, std::exp(c[3])};
                break;
            }
        }
    }

    // Chain d(loss)/d(camera params) into fit coordinates.
    VecX camera_chain(const VecX& d_camera, const VecX& x) const {
        VecX g(n_cam);
        const VecX c = x.tail(n_cam);
        switch (kind) {
            case CameraKind::Weak:
                g[0] = d_camera[0] * std::exp(c[0]);
                g[1] = d_camera[1] * t_pixels;
                g[2] = d_camera[2] * t_pixels;
                break;
            case CameraKind::D2S:
                g[0] = d_camera[0] * std::exp(c[0]);
                g[1] = d_camera[1] * t_pixels;
                g[2] = d_camera[2] * t_pixels;
                g[3] = d_camera[3] * std::exp(c[3]);
                break;
            case CameraKind::Perspective:
                g[0] = (d_camera[0] + d_camera[1]) * std::exp(c[0]);
                g[1] = d_camera[2] * t_model;
                g[2] = d_camera[3] * t_model;
                g[3] = d_camera[4] * std::exp(c[3]);
                break;
        }
        return g;
    }
};

struct StageRun {
    int iterations = 0;
    bool hit_tolerance = false;
    bool progressed = false;
    bool stalled = false;          // no halving produced a decrease
    Scalar stall_grad_inf = 0;     // active-gradient sup norm at the stall
};

constexpr Scalar kInf = std::numeric_limits<Scalar>::infinity();

}  // namespace

std::vector<FitStage> FitConfig::effective_stages() const {
    if (!stages.empty()) return stages;
    FitStage s1;
    s1.max_iters = 60;
    FitStage s2;
    s2.body = s2.hands = s2.face = s2.shape = true;
    s2.max_iters = 150;
    return {s1, s2};
}

namespace {

// One complete staged fit. With a warm start the multi-start probes are
// skipped and optimization begins from the given parameters.
FitResult fit_single(const Keypoints2D& j2d, const BodyModel& model, const FitConfig& cfg,
                     const FullParams* warm_start) {
    if (j2d.n_visible(Part::Body) < cfg.min_body_keypoints)
        throw InsufficientKeypointsError(
            "fit_frame: needs at least " + std::to_string(cfg.min_body_keypoints) +
            " visible body keypoints, got " + std::to_string(j2d.n_visible(Part::Body)));

    // --- Initialization from the visible body bounding box. ---
    Vec2 lo(kInf, kInf), hi(-kInf, -kInf);
    for (int i = 0; i < j2d.count(); ++i) {
        if (!j2d.visible[static_cast<size_t>(i)] || j2d.part[static_cast<size_t>(i)] != Part::Body)
            continue;
        lo = lo.cwiseMin(j2d.coords.row(i).transpose());
        hi = hi.cwiseMax(j2d.coords.row(i).transpose());
    }
    const Scalar extent = model.body_extent();
    const Scalar body_height = std::max(
        Scalar(1e-6), model.rest_joints.col(1).maxCoeff() - model.rest_joints.col(1).minCoeff());
    const Scalar bbox_h = std::max({hi.y() - lo.y(), hi.x() - lo.x(), Scalar(1e-3)});
    const Scalar s0 = bbox_h / body_height;
    const Vec2 center = 0.5 * (lo + hi);
    const Scalar d0 = 4.0 * extent;

    FullParams init = FullParams::rest(model);
    if (cfg.init_jitter > 0) {
        SplitMix64 rng(mix_seed(cfg.seed, 0xF17));
        for (int j = 0; j < init.theta_body.rows(); ++j)
            for (int a = 0; a < 3; ++a)
                init.theta_body(j, a) += cfg.init_jitter * rng.normal();
    }
    switch (cfg.camera_kind) {
        case CameraKind::Weak:
            init.camera = WeakPerspectiveCamera{s0, center.x(), center.y()};
            break;
        case CameraKind::D2S:
            init.camera = D2SCamera{s0, center.x(), center.y(), d0};
            break;
        case CameraKind::Perspective:
            init.camera =
                PerspectiveCamera{s0 * d0, s0 * d0, center.x() / s0, center.y() / s0, d0};
            break;
    }
    if (warm_start != nullptr) init = *warm_start;

    const FitSpace fs = FitSpace::of(model, init, cfg.camera_kind, bbox_h / 8);
    FitTargets targets;
    targets.j2d = &j2d;

    FullParams scratch = init;
    auto loss_at = [&](const VecX& x) -> Scalar {
        fs.unpack(x, scratch);
        try {
            return loss_total(model, scratch, targets, cfg.weights, cfg.lambda_beta).total;
        } catch (const Error&) {
            return kInf;
        }
    };

    // Gradient and Gauss-Newton matrix in fit coordinates.
    struct SystemEval {
        LossBreakdown bd;
        VecX g;
        MatX h;
    };
    const int n_raw_cam = camera_param_count(cfg.camera_kind);
    auto system_at = [&](const VecX& x, const JacobianBlocks& blocks) -> SystemEval {
        fs.unpack(x, scratch);
        MatX h_raw;
        const LossWork w = compute_loss(model, scratch, targets, cfg.weights, cfg.lambda_beta,
                                        true, blocks, &h_raw);
        SystemEval sys;
        sys.bd = w.bd;
        sys.g.resize(fs.total);
        sys.g.head(fs.layout.total) = w.d_body;
        sys.g.tail(fs.n_cam) = fs.camera_chain(w.d_camera, x);

        // d(raw)/d(fit) chain for the camera block.
        MatX chain = MatX::Zero(fs.layout.total + n_raw_cam, fs.total);
        chain.topLeftCorner(fs.layout.total, fs.layout.total).setIdentity();
        const int p = fs.layout.total;
        const VecX c = x.tail(fs.n_cam);
        switch (cfg.camera_kind) {
            case CameraKind::Weak:
                chain(p + 0, p + 0) = std::exp(c[0]);
                chain(p + 1, p + 1) = fs.t_pixels;
                chain(p + 2, p + 2) = fs.t_pixels;
                break;
            case CameraKind::D2S:
                chain(p + 0, p + 0) = std::exp(c[0]);
                chain(p + 1, p + 1) = fs.t_pixels;
                chain(p + 2, p + 2) = fs.t_pixels;
                chain(p + 3, p + 3) = std::exp(c[3]);
                break;
            case CameraKind::Perspective:
                chain(p + 0, p + 0) = std::exp(c[0]);
                chain(p + 1, p + 0) = std::exp(c[0]);
                chain(p + 2, p + 1) = fs.t_model;
                chain(p + 3, p + 2) = fs.t_model;
                chain(p + 4, p + 3) = std::exp(c[3]);
                break;
        }
        sys.h.noalias() = chain.transpose() * h_raw * chain;
        return sys;
    };

    auto active_of = [&](const FitStage& st) {
        std::vector<int> idx;
        auto push = [&](int off, int n) {
            for (int i = 0; i < n; ++i) idx.push_back(off + i);
        };
        if (st.global_rot) push(fs.layout.global_off, 3);
        if (st.body) push(fs.layout.body_off, fs.layout.body_n);
        if (st.hands) {
            push(fs.layout.hand_left_off, fs.layout.hand_n);
            push(fs.layout.hand_right_off, fs.layout.hand_n);
        }
        if (st.face) push(fs.layout.psi_off, 13);
        if (st.shape) push(fs.layout.beta_off, fs.layout.beta_n);
        if (st.camera) push(fs.layout.total, fs.n_cam);
        return idx;
    };
    auto blocks_of = [&](const FitStage& st) {
        JacobianBlocks b;
        b.global = st.global_rot;
        b.body = st.body;
        b.hands = st.hands;
        b.face = st.face;
        b.shape = st.shape;
        return b;
    };

    // One stage of damped Gauss-Newton with monotone acceptance.
    auto run_stage = [&](VecX& x, Scalar& loss, const FitStage& st, int max_iters,
                         std::vector<Scalar>* trace, LossBreakdown* bd) {
        StageRun run;
        const std::vector<int> active = active_of(st);
        const JacobianBlocks blocks = blocks_of(st);
        const int na = static_cast<int>(active.size());
        Scalar damping = cfg.initial_damping;
        MatX ha(na, na);
        VecX ga(na);
        for (int it = 0; it < max_iters; ++it) {
            const SystemEval sys = system_at(x, blocks);
            if (bd != nullptr) *bd = sys.bd;
            for (int r = 0; r < na; ++r) {
                ga[r] = sys.g[active[static_cast<size_t>(r)]];
                for (int c = 0; c < na; ++c)
                    ha(r, c) = sys.h(active[static_cast<size_t>(r)], active[static_cast<size_t>(c)]);
            }
            const VecX diag = ha.diagonal().cwiseMax(1e-8);
            bool accepted = false;
            for (int h = 0; h <= cfg.max_halvings; ++h) {
                MatX damped = ha;
                damped.diagonal() += damping * diag;
                const VecX delta = damped.ldlt().solve(-ga);
                VecX x_try = x;
                for (int r = 0; r < na; ++r) x_try[active[static_cast<size_t>(r)]] += delta[r];
                const Scalar l_try = loss_at(x_try);
                if (std::isfinite(l_try) && l_try < loss) {
                    const Scalar drop = loss - l_try;
                    x = std::move(x_try);
                    loss = l_try;
                    damping = std::max(damping * cfg.damping_decrease, Scalar(1e-10));
                    accepted = true;
                    run.progressed = true;
                    ++run.iterations;
                    if (trace != nullptr) trace->push_back(loss);
                    if (drop < cfg.tolerance * std::max(Scalar(1), loss)) run.hit_tolerance = true;
                    break;
                }
                damping *= cfg.damping_increase;
            }
            if (!accepted) {
                run.stalled = true;
                run.stall_grad_inf = na > 0 ? ga.cwiseAbs().maxCoeff() : 0;
                break;
            }
            if (run.hit_tolerance) break;
        }
        return run;
    };

    // --- Global-rotation multi-start: probe the azimuths with a short
    // camera+rotation stage, then break near-ties (the rest pose is almost
    // left-right symmetric) with a brief full-parameter refinement of the two
    // best candidates. ---
    VecX x = fs.pack(init);
    const auto stages = cfg.effective_stages();
    if (warm_start == nullptr && cfg.rotation_starts > 1) {
        FitStage probe_stage;  // camera + global rotation
        probe_stage.max_iters = 15;
        std::vector<std::pair<Scalar, VecX>> candidates;
        for (int k = 0; k < cfg.rotation_starts; ++k) {
            FullParams p = init;
            p.theta_global = Vec3(0, 2.0 * M_PI * k / cfg.rotation_starts, 0);
            VecX xk = fs.pack(p);
            Scalar lk = loss_at(xk);
            run_stage(xk, lk, probe_stage, probe_stage.max_iters, nullptr, nullptr);
            candidates.emplace_back(lk, std::move(xk));
        }
        std::sort(candidates.begin(), candidates.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        FitStage refine;
        refine.body = refine.hands = refine.face = refine.shape = true;
        refine.max_iters = 12;
        Scalar best_loss = kInf;
        VecX best_x;
        const size_t n_refine = std::min<size_t>(2, candidates.size());
        for (size_t k = 0; k < n_refine; ++k) {
            VecX xk = candidates[k].second;
            Scalar lk = candidates[k].first;
            run_stage(xk, lk, refine, refine.max_iters, nullptr, nullptr);
            if (lk < best_loss) {
                best_loss = lk;
                best_x = std::move(xk);
            }
        }
        x = best_x;
    }

    FitResult result;
    Scalar loss = loss_at(x);
    if (!std::isfinite(loss))
        throw NumericInputError("fit_frame: initial loss is not finite");
    result.residual_trace.push_back(loss);
    bool any_progress = false;
    for (const FitStage& st : stages) {
        LossBreakdown bd;
        const StageRun run = run_stage(x, loss, st, st.max_iters, &result.residual_trace, &bd);
        result.iterations += run.iterations;
        any_progress = any_progress || run.progressed;
        // A stall after progress is convergence (the L1 term keeps a nonzero
        // subgradient at its optimum); a stall straight from the start with a
        // live gradient is a failed fit.
        result.converged =
            run.hit_tolerance ||
            (run.stalled && (any_progress ||
                             run.stall_grad_inf < 1e-6 * std::max(Scalar(1), loss)));
    }

    fs.unpack(x, result.params);
    result.final_loss = loss_total(model, result.params, targets, cfg.weights, cfg.lambda_beta);
    if (!any_progress && !result.converged) {
        result.diagnostics = "no step decreased the loss from the initialization";
    }
    return result;
}

}  // namespace

FitResult fit_frame(const Keypoints2D& j2d, const BodyModel& model, const FitConfig& cfg) {
    if (cfg.camera_kind == CameraKind::Weak) return fit_single(j2d, model, cfg, nullptr);

    // Continuation over the nested model family: the weak-perspective camera
    // is the d -> infinity limit of both richer models, so a weak fit seeds a
    // far-depth candidate that races the fresh close-depth fit.
    FitConfig weak_cfg = cfg;
    weak_cfg.camera_kind = CameraKind::Weak;
    const FitResult weak_res = fit_single(j2d, model, weak_cfg, nullptr);

    const Scalar d_far = 40.0 * model.body_extent();
    FullParams warm = weak_res.params;
    const auto& wcam = std::get<WeakPerspectiveCamera>(weak_res.params.camera);
    if (cfg.camera_kind == CameraKind::D2S) {
        warm.camera = D2SCamera{wcam.s, wcam.t_u, wcam.t_v, d_far};
    } else {
        warm.camera = PerspectiveCamera{wcam.s * d_far, wcam.s * d_far, wcam.t_u / wcam.s,
                                        wcam.t_v / wcam.s, d_far};
    }

    FitResult far = fit_single(j2d, model, cfg, &warm);
    FitResult close = fit_single(j2d, model, cfg, nullptr);
    // Near-ties go to the weak-seeded candidate: a barely-better loss from the
    // extra depth freedom is overfit, not signal.
    if (close.final_loss.total < 0.95 * far.final_loss.total) return close;
    return far;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

std::string FitSweepResult::to_csv() const {
    std::string out = "camera_kind,bucket,n,mpjpe,pa_mpjpe,mean_L2D,failures\n";
    for (const PerKind& pk : kinds) {
        for (const auto& [bucket, st] : pk.report.buckets) {
            const auto fit = pk.failures_by_bucket.find(bucket);
            const int fails = fit == pk.failures_by_bucket.end() ? 0 : fit->second;
            const auto l2d = pk.mean_l2d_by_bucket.find(bucket);
            out += std::string(to_string(pk.kind)) + "," + bucket + "," + std::to_string(st.n) +
                   "," + format_double(st.mpjpe) + "," + format_double(st.pa_mpjpe) + "," +
                   format_double(l2d == pk.mean_l2d_by_bucket.end() ? 0.0 : l2d->second) + "," +
                   std::to_string(fails) + "\n";
        }
        out += std::string(to_string(pk.kind)) + ",overall," + std::to_string(pk.report.overall.n) +
               "," + format_double(pk.report.overall.mpjpe) + "," +
               format_double(pk.report.overall.pa_mpjpe) + "," + format_double(pk.mean_l2d) + "," +
               std::to_string(pk.failures) + "\n";
    }
    return out;
}

FitSweepResult fit_sweep(const BodyModel& model, const std::vector<SyntheticSample>& samples,
                         const FitSweepConfig& cfg) {
    FitSweepResult result;
    for (const CameraKind kind : cfg.kinds) {
        FitSweepResult::PerKind pk;
        pk.kind = kind;
        pk.outcomes.resize(samples.size());
        FitConfig fit_cfg = cfg.base;
        fit_cfg.camera_kind = kind;
        parallel_for(static_cast<int>(samples.size()), cfg.jobs, [&](int i) {
            const SyntheticSample& s = samples[static_cast<size_t>(i)];
            FitSampleOutcome& o = pk.outcomes[static_cast<size_t>(i)];
            try {
                o.result = fit_frame(s.j2d, model, fit_cfg);
                const Points3 pred = centered_joints(model, o.result.params);
                o.mpjpe = mpjpe(pred, s.j3d.coords, s.j3d.visible);
                o.pa_mpjpe = pa_mpjpe(pred, s.j3d.coords, s.j3d.visible);
                o.mean_l2d = o.result.final_loss.l_2d;
                o.ok = true;
            } catch (const Error& e) {
                o.ok = false;
                o.error = e.what();
            }
        });

        std::vector<SampleEval> evals;
        std::map<std::string, std::vector<double>> l2d_by;
        std::vector<double> l2d_all;
        for (size_t i = 0; i < samples.size(); ++i) {
            const SyntheticSample& s = samples[i];
            const std::string& bucket = cfg.bucket_key == BucketKey::Distance
                                            ? s.distance_bucket
                                            : s.viewpoint_bucket;
            const FitSampleOutcome& o = pk.outcomes[i];
            if (!o.ok) {
                ++pk.failures;
                ++pk.failures_by_bucket[bucket];
                continue;
            }
            evals.push_back(SampleEval{o.mpjpe, o.pa_mpjpe, s.distance_bucket, s.viewpoint_bucket});
            l2d_by[bucket].push_back(o.mean_l2d);
            l2d_all.push_back(o.mean_l2d);
        }
        if (!evals.empty()) pk.report = bucketed_report(evals, cfg.bucket_key);
        for (const auto& [bucket, v] : l2d_by) pk.mean_l2d_by_bucket[bucket] = pairwise_mean(v);
        pk.mean_l2d = pairwise_mean(l2d_all);
        result.kinds.push_back(std::move(pk));
    }
    return result;
}

}  // namespace meshrec
