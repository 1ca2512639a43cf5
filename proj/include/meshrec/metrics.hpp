#pragma once

#include <map>
#include <string>
#include <vector>

#include "meshrec/core.hpp"

namespace meshrec {

// ---------------------------------------------------------------------------
// Pose error metrics: MPJPE and Procrustes-aligned MPJPE, plus bucketed
// aggregation for the distance / viewpoint sweeps.
// ---------------------------------------------------------------------------

// Mean Euclidean distance over visible keypoints.
Scalar mpjpe(const Points3& pred, const Points3& gt, const std::vector<std::uint8_t>& visible);

struct ProcrustesResult {
    Scalar scale = 1;
    Mat3 rotation = Mat3::Identity();   // proper, det = +1
    Vec3 translation = Vec3::Zero();
    Points3 aligned_pred;               // scale * R * pred + t, all keypoints
    Scalar residual = 0;                // sum of squared distances over visible
};

// Similarity transform minimizing sum ||s R pred_i + t - gt_i||^2 over the
// visible keypoints. with_scale = false pins s = 1 (rigid-only variant).
ProcrustesResult procrustes_align(const Points3& pred, const Points3& gt,
                                  const std::vector<std::uint8_t>& visible,
                                  bool with_scale = true);

Scalar pa_mpjpe(const Points3& pred, const Points3& gt,
                const std::vector<std::uint8_t>& visible, bool with_scale = true);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

enum class BucketKey { Distance, Viewpoint };

struct SampleEval {
    Scalar mpjpe = 0;
    Scalar pa_mpjpe = 0;
    std::string distance_bucket;
    std::string viewpoint_bucket;
};

struct EvalReport {
    struct Stats {
        int n = 0;
        Scalar mpjpe = 0;
        Scalar pa_mpjpe = 0;
    };
    std::string units = "model units";
    Stats overall;
    std::map<std::string, Stats> buckets;  // deterministic ordering

    std::string to_csv() const;            // columns: bucket,n,mpjpe,pa_mpjpe
};

// Per-bucket and overall means; pairwise summation keeps the reduction
// independent of evaluation order.
EvalReport bucketed_report(const std::vector<SampleEval>& samples, BucketKey key);

}  // namespace meshrec
