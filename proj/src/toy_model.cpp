#include <algorithm>
#include <cmath>
#include <vector>

#include "meshrec/body_model.hpp"

namespace meshrec {

namespace {

// Ring provenance kept during construction so the blend bases can be derived
// from bone geometry.
struct RingVert {
    int bone_parent;  // joint index; -1 for the root ring
    int bone_child;
    Scalar t;         // fraction along the bone, 1 = at the child joint
    Vec3 radial;      // offset from the ring center
};

struct Builder {
    const ToyModelConfig& cfg;
    std::uint64_t seed;

    Eigen::VectorXi parent;
    std::vector<JointKind> kind;
    std::vector<Vec3> pos;
    std::vector<RingVert> vinfo;
    std::vector<Vec3> verts;
    std::vector<std::array<std::uint32_t, 3>> tris;

    int add_joint(int par, JointKind k, const Vec3& p) {
        const int idx = static_cast<int>(pos.size());
        parent.conservativeResize(idx + 1);
        parent[idx] = par;
        kind.push_back(k);
        pos.push_back(p);
        return idx;
    }
};

Vec3 ring_basis_u(const Vec3& axis) {
    const Vec3 ref = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    return axis.cross(ref).normalized();
}

}  // namespace

BodyModel build_toy_model(const ToyModelConfig& cfg, std::uint64_t seed) {
    if (cfg.n_body_joints < 6)
        throw InvalidConfigError("toy model needs at least 6 body joints (root + 5 chains)");
    if (cfg.n_hand_joints < 1)
        throw InvalidConfigError("toy model needs at least 1 joint per hand");
    if (cfg.n_jaw_joints != 1)
        throw InvalidConfigError("toy model supports exactly 1 jaw joint (driven by psi_face)");
    if (cfg.verts_per_ring < 3) throw InvalidConfigError("verts_per_ring must be >= 3");
    if (cfg.rings_per_bone < 1) throw InvalidConfigError("rings_per_bone must be >= 1");
    if (cfg.n_expression_modes != 13)
        throw InvalidConfigError("expression basis is pinned to 13 rows (10 live + 3 jaw slots)");
    if (cfg.n_shape_modes < 1 || cfg.n_shape_modes > 32)
        throw InvalidConfigError("n_shape_modes out of range [1, 32]");
    if (cfg.n_hand_pca < 1 || cfg.n_hand_pca > 3 * cfg.n_hand_joints)
        throw InvalidConfigError("n_hand_pca out of range [1, 3 * n_hand_joints]");
    if (cfg.n_vertices < cfg.min_vertices())
        throw InvalidConfigError("n_vertices below ring budget minimum " +
                                 std::to_string(cfg.min_vertices()));

    Builder b{cfg, seed, {}, {}, {}, {}, {}, {}};
    SplitMix64 skel_rng(mix_seed(seed, 1));

    // --- Skeleton: root + five body chains, then jaw, then the two hands. ---
    const int root = b.add_joint(-1, JointKind::Body, Vec3(0, 0.95, 0));
    const int n_chain_joints = cfg.n_body_joints - 1;
    int chain_len[5];
    for (int c = 0; c < 5; ++c)
        chain_len[c] = n_chain_joints / 5 + (c < n_chain_joints % 5 ? 1 : 0);

    auto grow_chain = [&](int attach, const Vec3& start, const Vec3& dir, Scalar total,
                          int len, JointKind k) {
        std::vector<int> ids;
        int par = attach;
        Vec3 p = b.pos[static_cast<size_t>(attach)] + start;
        const Scalar step = total / static_cast<Scalar>(std::max(1, len));
        for (int i = 0; i < len; ++i) {
            const Scalar jitter = 1.0 + 0.06 * (skel_rng.uniform() - 0.5);
            const Vec3 lateral(0.01 * (skel_rng.uniform() - 0.5), 0,
                               0.01 * (skel_rng.uniform() - 0.5));
            p += dir * step * jitter + lateral;
            par = b.add_joint(par, k, p);
            ids.push_back(par);
        }
        return ids;
    };

    const auto spine =
        grow_chain(root, Vec3(0, 0.02, 0), Vec3::UnitY(), 0.72, chain_len[0], JointKind::Body);
    grow_chain(root, Vec3(-0.10, -0.02, 0), -Vec3::UnitY(), 0.92, chain_len[1], JointKind::Body);
    grow_chain(root, Vec3(0.10, -0.02, 0), -Vec3::UnitY(), 0.92, chain_len[2], JointKind::Body);
    const int arm_attach = spine[static_cast<size_t>(
        std::max(0, static_cast<int>(spine.size()) - 3))];
    const auto arm_l = grow_chain(arm_attach, Vec3(-0.07, 0.06, 0), -Vec3::UnitX(), 0.55,
                                  chain_len[3], JointKind::Body);
    const auto arm_r = grow_chain(arm_attach, Vec3(0.07, 0.06, 0), Vec3::UnitX(), 0.55,
                                  chain_len[4], JointKind::Body);
    const int head = spine.back();
    const int wrist_l = arm_l.back();
    const int wrist_r = arm_r.back();

    grow_chain(head, Vec3(0, -0.01, 0.05), Vec3::UnitZ(), 0.05, 1, JointKind::Jaw);

    auto grow_hand = [&](int wrist, Scalar side, JointKind k) {
        const int fingers = std::min(5, cfg.n_hand_joints);
        int remaining = cfg.n_hand_joints;
        for (int f = 0; f < fingers; ++f) {
            const int len = remaining / (fingers - f);
            remaining -= len;
            const Vec3 start(side * 0.04, 0, 0.020 * (f - (fingers - 1) * 0.5));
            grow_chain(wrist, start, Vec3(side, 0, 0).normalized(),
                       0.032 * len, len, k);
        }
    };
    grow_hand(wrist_l, -1.0, JointKind::LeftHand);
    grow_hand(wrist_r, +1.0, JointKind::RightHand);

    const int k_joints = static_cast<int>(b.pos.size());
    const int n_verts = cfg.n_vertices;
    const int m = cfg.verts_per_ring;

    // --- Capsule rings. Base rings end exactly at the child joint so the
    // regressor row for every joint is the centroid of a symmetric ring. ---
    SplitMix64 girth_rng(mix_seed(seed, 2));
    SplitMix64 phase_rng(mix_seed(seed, 3));

    std::vector<Scalar> girth(static_cast<size_t>(k_joints), 0.0);
    for (int j = 1; j < k_joints; ++j) {
        const int p = b.parent[j];
        const Scalar len =
            (b.pos[static_cast<size_t>(j)] - b.pos[static_cast<size_t>(p)]).norm();
        const bool small = b.kind[static_cast<size_t>(j)] != JointKind::Body;
        Scalar g = (small ? 0.22 : 0.16) * len;
        g = std::clamp(g, small ? 0.004 : 0.010, small ? 0.011 : 0.055);
        girth[static_cast<size_t>(j)] = g * (1.0 + 0.2 * (girth_rng.uniform() - 0.5));
    }

    MatX regressor = MatX::Zero(k_joints, n_verts);

    auto add_ring = [&](int bone_child, Scalar t, int count, bool is_root) {
        const int p = is_root ? -1 : b.parent[bone_child];
        const Vec3 pj = is_root ? b.pos[0] : b.pos[static_cast<size_t>(p)];
        const Vec3 cj = is_root ? b.pos[0] + Vec3(0, 0.08, 0)
                                : b.pos[static_cast<size_t>(bone_child)];
        const Vec3 axis = is_root ? Vec3::UnitY() : Vec3((cj - pj).normalized());
        const Vec3 center = is_root ? b.pos[0] : Vec3(pj + t * (cj - pj));
        const Scalar radius = is_root ? 0.09 : girth[static_cast<size_t>(bone_child)];
        const Vec3 u = ring_basis_u(axis);
        const Vec3 v = axis.cross(u);
        const Scalar phi0 = phase_rng.uniform(0, 2 * M_PI);
        std::vector<int> ids;
        for (int i = 0; i < count; ++i) {
            const Scalar phi = phi0 + 2.0 * M_PI * i / count;
            const Vec3 radial = radius * (std::cos(phi) * u + std::sin(phi) * v);
            ids.push_back(static_cast<int>(b.verts.size()));
            b.verts.push_back(center + radial);
            b.vinfo.push_back({is_root ? -1 : p, is_root ? 0 : bone_child, t, radial});
        }
        return ids;
    };

    const auto root_ring = add_ring(0, 0.0, m, true);
    for (int i : root_ring) regressor(0, i) = 1.0 / m;

    std::vector<std::vector<int>> bone_rings(static_cast<size_t>(k_joints));
    for (int j = 1; j < k_joints; ++j) {
        std::vector<int> prev;
        for (int r = 0; r < cfg.rings_per_bone; ++r) {
            const Scalar t = static_cast<Scalar>(r + 1) / cfg.rings_per_bone;
            const auto ring = add_ring(j, t, m, false);
            if (r == cfg.rings_per_bone - 1)
                for (int i : ring) regressor(j, i) = 1.0 / m;
            if (!prev.empty()) {
                for (int i = 0; i < m; ++i) {
                    const auto a0 = static_cast<std::uint32_t>(prev[static_cast<size_t>(i)]);
                    const auto a1 =
                        static_cast<std::uint32_t>(prev[static_cast<size_t>((i + 1) % m)]);
                    const auto b0 = static_cast<std::uint32_t>(ring[static_cast<size_t>(i)]);
                    const auto b1 =
                        static_cast<std::uint32_t>(ring[static_cast<size_t>((i + 1) % m)]);
                    b.tris.push_back({a0, a1, b0});
                    b.tris.push_back({a1, b1, b0});
                }
            }
            prev = ring;
        }
    }

    // Filler rings spread round-robin over the bones until the vertex budget
    // is exact; the last ring may be partial (fillers never feed the regressor).
    int fill = 0;
    while (static_cast<int>(b.verts.size()) < n_verts) {
        const int bone = 1 + fill % (k_joints - 1);
        const Scalar t = 0.1 + 0.8 * std::fmod(0.37 * fill + 0.21, 1.0);
        const int count = std::min(m, n_verts - static_cast<int>(b.verts.size()));
        add_ring(bone, t, count, false);
        ++fill;
    }

    // --- Assemble the model. ---
    BodyModel model;
    model.seed = seed;
    model.config = cfg;
    model.joint_tree.parent = b.parent;
    model.joint_tree.kind = b.kind;
    model.joint_tree.rest_offset.resize(k_joints, 3);
    for (int j = 0; j < k_joints; ++j) {
        const int p = b.parent[j];
        model.joint_tree.rest_offset.row(j) =
            (p < 0 ? b.pos[static_cast<size_t>(j)]
                   : Vec3(b.pos[static_cast<size_t>(j)] - b.pos[static_cast<size_t>(p)]))
                .transpose();
    }
    model.template_vertices.resize(n_verts, 3);
    for (int i = 0; i < n_verts; ++i)
        model.template_vertices.row(i) = b.verts[static_cast<size_t>(i)].transpose();
    model.faces.resize(static_cast<Eigen::Index>(b.tris.size()), 3);
    for (size_t i = 0; i < b.tris.size(); ++i)
        for (int c = 0; c < 3; ++c) model.faces(static_cast<Eigen::Index>(i), c) = b.tris[i][static_cast<size_t>(c)];

    // Skinning: a ring at fraction t blends between the bone's parent and child.
    model.skin_weights = MatX::Zero(n_verts, k_joints);
    for (int i = 0; i < n_verts; ++i) {
        const RingVert& rv = b.vinfo[static_cast<size_t>(i)];
        if (rv.bone_parent < 0) {
            model.skin_weights(i, 0) = 1.0;
        } else {
            if (rv.t < 1.0) model.skin_weights(i, rv.bone_parent) = 1.0 - rv.t;
            model.skin_weights(i, rv.bone_child) += rv.t;
        }
    }
    model.joint_regressor = std::move(regressor);

    // --- Shape basis: seeded bone-length and girth modes. Mode 0 is a global
    // size mode; the rest are random per-bone variations. ---
    SplitMix64 shape_rng(mix_seed(seed, 4));
    model.shape_basis = MatX::Zero(cfg.n_shape_modes, 3 * n_verts);
    for (int mo = 0; mo < cfg.n_shape_modes; ++mo) {
        std::vector<Scalar> lambda(static_cast<size_t>(k_joints), 0.0);
        std::vector<Scalar> gamma(static_cast<size_t>(k_joints), 0.0);
        Scalar gamma_root;
        if (mo == 0) {
            std::fill(lambda.begin(), lambda.end(), 0.05);
            std::fill(gamma.begin(), gamma.end(), 0.05);
            gamma_root = 0.05;
        } else {
            for (int j = 1; j < k_joints; ++j) lambda[static_cast<size_t>(j)] = shape_rng.normal(0, 0.035);
            for (int j = 1; j < k_joints; ++j) gamma[static_cast<size_t>(j)] = shape_rng.normal(0, 0.05);
            gamma_root = shape_rng.normal(0, 0.05);
        }
        std::vector<Vec3> dj(static_cast<size_t>(k_joints), Vec3::Zero());
        for (int j = 1; j < k_joints; ++j) {
            const int p = b.parent[j];
            dj[static_cast<size_t>(j)] =
                dj[static_cast<size_t>(p)] +
                lambda[static_cast<size_t>(j)] *
                    (b.pos[static_cast<size_t>(j)] - b.pos[static_cast<size_t>(p)]);
        }
        for (int i = 0; i < n_verts; ++i) {
            const RingVert& rv = b.vinfo[static_cast<size_t>(i)];
            Vec3 d;
            if (rv.bone_parent < 0) {
                d = gamma_root * rv.radial;
            } else {
                const Vec3& dp = dj[static_cast<size_t>(rv.bone_parent)];
                const Vec3& dc = dj[static_cast<size_t>(rv.bone_child)];
                d = dp + rv.t * (dc - dp) + gamma[static_cast<size_t>(rv.bone_child)] * rv.radial;
            }
            model.shape_basis.row(mo).segment<3>(3 * i) = d.transpose();
        }
    }

    // --- Expression basis: 10 live modes perturbing jaw-region vertices; the
    // trailing 3 rows are the jaw-pose slots of psi_face and stay zero. ---
    SplitMix64 expr_rng(mix_seed(seed, 5));
    model.expression_basis = MatX::Zero(13, 3 * n_verts);
    for (int mo = 0; mo < 10; ++mo)
        for (int i = 0; i < n_verts; ++i) {
            const RingVert& rv = b.vinfo[static_cast<size_t>(i)];
            if (rv.bone_parent < 0) continue;
            if (b.kind[static_cast<size_t>(rv.bone_child)] != JointKind::Jaw) continue;
            model.expression_basis.row(mo).segment<3>(3 * i) =
                Vec3(expr_rng.normal(0, 0.004), expr_rng.normal(0, 0.004),
                     expr_rng.normal(0, 0.004))
                    .transpose();
        }

    // --- Hand PCA bases: orthonormal rows from seeded Gaussians, weighted
    // towards the finger bend axis so components mostly curl fingers. ---
    auto make_basis = [&](std::uint64_t key) {
        SplitMix64 rng(mix_seed(seed, key));
        const int dim = 3 * cfg.n_hand_joints;
        MatX basis(cfg.n_hand_pca, dim);
        for (int r = 0; r < cfg.n_hand_pca; ++r)
            for (int c = 0; c < dim; ++c)
                basis(r, c) = rng.normal() * (c % 3 == 0 ? 1.0 : 0.25);
        for (int r = 0; r < cfg.n_hand_pca; ++r) {
            for (int pass = 0; pass < 2; ++pass)
                for (int q = 0; q < r; ++q)
                    basis.row(r) -= basis.row(r).dot(basis.row(q)) * basis.row(q);
            basis.row(r).normalize();
        }
        return basis;
    };
    model.hand_pca_left = make_basis(6);
    model.hand_pca_right = make_basis(7);

    // --- Joint angle limits by role. ---
    SplitMix64 limit_rng(mix_seed(seed, 8));
    model.angle_limit_lo.resize(k_joints, 3);
    model.angle_limit_hi.resize(k_joints, 3);
    std::vector<int> depth(static_cast<size_t>(k_joints), 0);
    for (int j = 1; j < k_joints; ++j)
        depth[static_cast<size_t>(j)] = depth[static_cast<size_t>(b.parent[j])] + 1;
    for (int j = 0; j < k_joints; ++j) {
        Vec3 lo, hi;
        if (j == 0) {
            lo.setConstant(-2 * M_PI);  // global orientation is effectively free
            hi.setConstant(2 * M_PI);
        } else if (b.kind[static_cast<size_t>(j)] == JointKind::Jaw) {
            lo = Vec3(-0.15, -0.2, -0.2);
            hi = Vec3(0.7, 0.2, 0.2);
        } else if (b.kind[static_cast<size_t>(j)] != JointKind::Body) {
            lo = Vec3(-0.5, -0.5, -0.5);  // finger bend mostly about x
            hi = Vec3(1.9, 0.5, 0.5);
        } else if (depth[static_cast<size_t>(j)] == 2 && b.parent[b.parent[j]] == 0) {
            lo = Vec3(0.0, -0.2, -0.2);  // knee-like hinge
            hi = Vec3(2.2, 0.2, 0.2);
        } else {
            const Scalar w = depth[static_cast<size_t>(j)] <= 1 ? 1.5 : 0.9;
            lo.setConstant(-w);
            hi.setConstant(w);
        }
        const Scalar jitter = 1.0 + 0.1 * (limit_rng.uniform() - 0.5);
        model.angle_limit_lo.row(j) = (lo * jitter).transpose();
        model.angle_limit_hi.row(j) = (hi * jitter).transpose();
    }

    model.finalize();
    return model;
}

}  // namespace meshrec
