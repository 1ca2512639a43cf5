#pragma once

#include <map>
#include <string>
#include <vector>

#include "meshrec/body_model.hpp"
#include "meshrec/metrics.hpp"
#include "meshrec/projection.hpp"
#include "meshrec/synth.hpp"

namespace meshrec {

// ---------------------------------------------------------------------------
// Loss. The recovery target is scored as a weighted sum of parameter,
// 3D-keypoint, 2D-reprojection, and rationality terms:
//   L_2D: mean absolute error per visible projected coordinate (pixels)
//   L_3D: mean squared error per visible keypoint coordinate (model units)
//   L_pm: mean squared error on parameters, poses compared as rotation
//         matrices through the Rodrigues map
//   L_r : squared hinge violations of the joint angle limits + lambda |beta|^2
// ---------------------------------------------------------------------------

struct FitWeights {
    Scalar w_pm = 20;
    Scalar w_r = 0.5;
    Scalar w_2d = 6;
    Scalar w_3d = 60;
};

struct FitTargets {
    const Keypoints2D* j2d = nullptr;       // raw pixels
    const Keypoints3D* j3d = nullptr;       // centered camera frame
    const FullParams* gt_params = nullptr;
};

struct LossBreakdown {
    Scalar total = 0;
    Scalar l_2d = 0;
    Scalar l_3d = 0;
    Scalar l_pm = 0;
    Scalar l_r = 0;
    FitWeights weights;
};

Scalar rationality_penalty(const BodyModel& model, const FullParams& params,
                           Scalar lambda_beta = 1.0);

LossBreakdown loss_total(const BodyModel& model, const FullParams& params,
                         const FitTargets& targets, const FitWeights& weights,
                         Scalar lambda_beta = 1.0);

// Analytic gradient w.r.t. the body parameters (ParamLayout order) and the
// camera parameters of params.camera (camera_params order).
struct LossGradient {
    LossBreakdown loss;
    VecX d_body;
    VecX d_camera;
    ParamLayout layout;
};

LossGradient loss_gradient(const BodyModel& model, const FullParams& params,
                           const FitTargets& targets, const FitWeights& weights,
                           Scalar lambda_beta = 1.0);

// ---------------------------------------------------------------------------
// Frame fitting: staged descent where each step is proposed by an
// IRLS-weighted, diagonally damped Gauss-Newton solve (first derivatives
// only) and accepted by a backtracking search on the true loss, so the
// residual trace never increases. Positive camera parameters (s, f, d) are
// optimized in log space.
// ---------------------------------------------------------------------------

struct FitStage {
    bool camera = true;
    bool global_rot = true;
    bool body = false;
    bool hands = false;
    bool face = false;
    bool shape = false;
    int max_iters = 150;
};

struct FitConfig {
    CameraKind camera_kind = CameraKind::D2S;
    FitWeights weights;
    Scalar lambda_beta = 1.0;
    std::vector<FitStage> stages;      // empty -> default two-stage schedule
    Scalar tolerance = 1e-7;           // loss decrease per accepted step, x max(1, loss)
    Scalar initial_damping = 1e-3;     // step-size policy: damping of the GN solve
    Scalar damping_decrease = 0.3;     // on an accepted step
    Scalar damping_increase = 4.0;     // on a rejected step
    int max_halvings = 20;             // damping escalations per iteration
    int rotation_starts = 4;           // azimuth multi-start for the global rotation
    int min_body_keypoints = 6;
    Scalar init_jitter = 0;            // radians, applied to the pose init
    std::uint64_t seed = 0;

    std::vector<FitStage> effective_stages() const;
};

struct FitResult {
    FullParams params;
    LossBreakdown final_loss;
    int iterations = 0;
    bool converged = false;
    std::vector<Scalar> residual_trace;  // accepted total losses, non-increasing
    std::string diagnostics;
};

FitResult fit_frame(const Keypoints2D& j2d, const BodyModel& model, const FitConfig& cfg);

// ---------------------------------------------------------------------------
// Sweep: fit every sample under each camera kind and aggregate.
// ---------------------------------------------------------------------------

struct FitSweepConfig {
    FitConfig base;
    std::vector<CameraKind> kinds = {CameraKind::D2S, CameraKind::Weak};
    BucketKey bucket_key = BucketKey::Distance;
    int jobs = 1;
};

struct FitSampleOutcome {
    bool ok = false;
    FitResult result;
    Scalar mpjpe = 0;
    Scalar pa_mpjpe = 0;
    Scalar mean_l2d = 0;
    std::string error;
};

struct FitSweepResult {
    struct PerKind {
        CameraKind kind = CameraKind::D2S;
        std::vector<FitSampleOutcome> outcomes;  // sample order
        EvalReport report;                       // over successful fits
        std::map<std::string, int> failures_by_bucket;
        int failures = 0;
        std::map<std::string, Scalar> mean_l2d_by_bucket;
        Scalar mean_l2d = 0;
    };
    std::vector<PerKind> kinds;

    // columns: camera_kind,bucket,n,mpjpe,pa_mpjpe,mean_L2D,failures
    std::string to_csv() const;
};

FitSweepResult fit_sweep(const BodyModel& model, const std::vector<SyntheticSample>& samples,
                         const FitSweepConfig& cfg);

}  // namespace meshrec
