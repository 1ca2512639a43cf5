#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "meshrec/camera.hpp"
#include "meshrec/core.hpp"

namespace meshrec {

// ---------------------------------------------------------------------------
// Articulated toy body model: a procedurally generated stand-in for a licensed
// statistical whole-body model. Same interface: M(theta, beta, psi) -> mesh,
// plus a convex linear regressor from vertices to keypoints.
// ---------------------------------------------------------------------------

struct JointTree {
    Eigen::VectorXi parent;           // parent[i] < i; root has -1
    std::vector<JointKind> kind;      // contiguous per kind group
    Points3 rest_offset;              // offset from parent (root: absolute position)

    int n_joints() const { return static_cast<int>(parent.size()); }
    // Absolute rest positions accumulated down the tree.
    Points3 rest_positions() const;

    bool operator==(const JointTree& o) const {
        return exact_equal(parent, o.parent) && kind == o.kind &&
               exact_equal(rest_offset, o.rest_offset);
    }
};

struct ToyModelConfig {
    int n_body_joints = 22;       // root + five chains (spine/head, legs, arms)
    int n_hand_joints = 15;       // per hand
    int n_jaw_joints = 1;
    int n_vertices = 1024;
    int verts_per_ring = 8;
    int rings_per_bone = 2;
    int n_shape_modes = 10;
    int n_expression_modes = 13;  // trailing 3 slots belong to the jaw pose and stay zero
    int n_hand_pca = 6;

    int n_joints() const { return n_body_joints + 2 * n_hand_joints + n_jaw_joints; }
    // Rings every bone must carry, plus one ring at the root.
    int min_vertices() const {
        return verts_per_ring * ((n_joints() - 1) * rings_per_bone + 1);
    }
    bool operator==(const ToyModelConfig&) const = default;
};

struct BodyModel {
    std::uint64_t seed = 0;
    ToyModelConfig config;

    JointTree joint_tree;
    Points3 template_vertices;    // N x 3
    Triangles faces;              // capsule side triangles, kept for mesh export
    MatX shape_basis;             // n_shape_modes x 3N, per-vertex displacements (row-major xyz)
    MatX expression_basis;        // n_expression_modes x 3N, nonzero on jaw-region vertices only
    MatX skin_weights;            // N x K, rows nonnegative, sum to 1
    MatX joint_regressor;         // K x N, rows nonnegative, sum to 1
    MatX hand_pca_left;           // n_hand_pca x (3 * n_hand_joints), orthonormal rows
    MatX hand_pca_right;
    Points3 angle_limit_lo;       // K x 3, radians
    Points3 angle_limit_hi;

    // Derived caches, rebuilt by finalize() after construction or load.
    Points3 rest_joints;                        // K x 3
    MatX shape_joint_delta;                     // n_shape_modes x 3K
    std::vector<std::vector<std::pair<int, Scalar>>> skin_entries;       // per vertex
    std::vector<std::vector<std::pair<int, Scalar>>> regressor_entries;  // per joint
    std::vector<int> regressor_support;         // vertices any keypoint depends on
    Scalar epsilon_regressor = 0;               // measured |P*T - rest| at build time

    void finalize();

    int n_joints() const { return joint_tree.n_joints(); }
    int n_vertices() const { return static_cast<int>(template_vertices.rows()); }
    Part part_of_joint(int j) const { return part_of(joint_tree.kind[static_cast<size_t>(j)]); }
    // Largest axis range of the rest keypoints; the "body extent" scale used by
    // camera sampling and fitter initialization.
    Scalar body_extent() const;

    bool operator==(const BodyModel& other) const;
};

// Hand pose representation: 6 PCA coefficients per hand or the full
// n_hand_joints x 3 axis-angle block.
enum class HandRep : std::uint8_t { Pca = 0, Full = 1 };

struct FullParams {
    Vec3 theta_global = Vec3::Zero();
    MatX theta_body;                    // (n_body_joints - 1) x 3 axis-angle
    HandRep hand_rep = HandRep::Pca;
    VecX hand_left;                     // n_hand_pca (pca) or 3 * n_hand_joints (full)
    VecX hand_right;
    VecX psi_face = VecX::Zero(13);     // [expression(10), jaw axis-angle(3)]
    VecX beta = VecX::Zero(10);
    CameraModel camera = PerspectiveCamera{};

    static FullParams rest(const BodyModel& model);
    bool finite() const;
    bool operator==(const FullParams& o) const;
};

// ---------------------------------------------------------------------------
// Core kinematics
// ---------------------------------------------------------------------------

// Axis-angle to rotation matrix, sinc-stable near zero. No input normalization.
Mat3 rodrigues(const Vec3& axis_angle);

// d(rodrigues)/d(axis_angle component a), a = 0,1,2.
std::array<Mat3, 3> rodrigues_jacobian(const Vec3& axis_angle);

// Rotation matrix to axis-angle (principal branch, |result| <= pi).
Vec3 axis_angle_from_matrix(const Mat3& r);

// Per-hand full pose (3 * n_hand_joints vector, xyz per joint) from params.
VecX expand_hand_pose(const BodyModel& model, const FullParams& params, bool left);

// Local axis-angle of every joint in tree order (root from theta_global, jaw
// from psi_face tail, hands expanded through the PCA basis when needed).
Points3 local_pose(const BodyModel& model, const FullParams& params);

struct FkResult {
    std::vector<Mat4> world;     // A_k: shaped-rest joint frame -> posed world
    std::vector<Mat4> relative;  // G_k = A_k * translate(-shaped_joint_k)
    Points3 joints;              // posed joint positions, K x 3
    Points3 shaped_joints;       // rest joints displaced by the shape basis
};

FkResult forward_kinematics(const BodyModel& model, const FullParams& params);

// Shaped template: template + shape and expression displacements.
Points3 shaped_vertices(const BodyModel& model, const FullParams& params);

// Linear blend skinning of the shaped template through the FK transforms.
Points3 skin(const BodyModel& model, const FullParams& params);

// J = P * vertices; convex combination per keypoint.
Points3 regress_joints(const BodyModel& model, const Points3& vertices);

// ---------------------------------------------------------------------------
// Analytic Jacobian of the regressed keypoints w.r.t. every pose/shape
// parameter, used by the fitter and by regressor training.
//
// Column layout (pca hands): [theta_global(3) | theta_body(3*(B-1)) |
//   hand_left(6) | hand_right(6) | psi_face(13) | beta(10)]
// With HandRep::Full the hand blocks widen to 3 * n_hand_joints each.
// ---------------------------------------------------------------------------

struct ParamLayout {
    int global_off = 0;
    int body_off = 0, body_n = 0;
    int hand_left_off = 0, hand_right_off = 0, hand_n = 0;
    int psi_off = 0;
    int beta_off = 0, beta_n = 0;
    int total = 0;

    static ParamLayout of(const BodyModel& model, const FullParams& params);
    VecX pack(const FullParams& params) const;
    void unpack(const VecX& v, FullParams& params) const;
};

struct JointsJacobian {
    Points3 joints;   // K x 3 regressed from the skinned mesh
    MatX d_joints;    // 3K x layout.total; row order (joint*3 + axis)
    ParamLayout layout;
};

// Column groups to evaluate; skipped groups stay zero. The fitter's staged
// schedule only pays for the parameters it is optimizing.
struct JacobianBlocks {
    bool global = true;
    bool body = true;
    bool hands = true;
    bool face = true;
    bool shape = true;
};

JointsJacobian joints_with_jacobian(const BodyModel& model, const FullParams& params,
                                    const JacobianBlocks& blocks = {});

// ---------------------------------------------------------------------------
// Construction and persistence
// ---------------------------------------------------------------------------

BodyModel build_toy_model(const ToyModelConfig& config, std::uint64_t seed);

// Versioned JSON document; round-trips bit-exactly.
void save_model(const BodyModel& model, const std::string& path);
BodyModel load_model(const std::string& path);

}  // namespace meshrec
