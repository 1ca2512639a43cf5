#pragma once

#include <array>
#include <string>
#include <vector>

#include "meshrec/body_model.hpp"
#include "meshrec/projection.hpp"

namespace meshrec {

// ---------------------------------------------------------------------------
// Synthetic training data: parameter banks, sampling, mesh-to-2D pairing,
// degradation, and the per-part scale normalization layer.
// ---------------------------------------------------------------------------

struct ParameterBank {
    struct BodyPose {
        Vec3 theta_global = Vec3::Zero();
        MatX theta_body;  // (n_body_joints - 1) x 3
        std::string provenance = "procedural";
    };
    struct HandPose {
        VecX theta_hp;  // PCA coefficients
        std::string provenance = "procedural";
    };
    struct Expression {
        VecX psi;  // 13 = [expression(10), jaw(3)]
        std::string provenance = "procedural";
    };
    struct Shape {
        VecX beta;
        std::string provenance = "procedural";
    };

    std::vector<BodyPose> body_poses;
    std::vector<HandPose> hand_poses;
    std::vector<Expression> expressions;
    std::vector<Shape> shapes;
};

struct BankConfig {
    int n_body = 100;
    int n_hand = 50;
    int n_expression = 20;
    int n_shape = 50;
    Scalar angle_fraction = 0.4;     // pose range as a fraction of the angle limits
    Scalar global_lean_sigma = 0.25; // radians on theta_global, scaled by angle_fraction
    Scalar beta_sigma = 1.0;         // clipped to |beta| <= 5
    Scalar expr_sigma = 0.5;
    Scalar hand_pca_sigma = 2.0;     // scaled by angle_fraction; expansion is limit-clamped
};

ParameterBank build_bank(const BodyModel& model, const BankConfig& cfg, std::uint64_t seed);

// File source; entries violating the model's angle limits are rejected with a
// report naming them, or raise BankValidationError in strict mode.
struct BankLoadReport {
    ParameterBank bank;
    std::vector<std::string> rejected;
};
BankLoadReport load_bank(const BodyModel& model, const std::string& path, bool strict);
void save_bank(const ParameterBank& bank, const std::string& path);

// True when every pose entry of `params` lies inside the model's angle limits
// (hands checked after PCA expansion); violations appended to `why` if given.
bool pose_within_limits(const BodyModel& model, const FullParams& params,
                        std::string* why = nullptr);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct CameraSamplerConfig {
    std::vector<Scalar> distance_factors = {2, 5, 30};  // x body extent
    int n_azimuths = 30;                                // evenly spaced viewpoints
    Scalar f_min = 900;                                 // pixels
    Scalar f_max = 1100;
    Scalar center_jitter = 0.05;                        // x body extent, on t_x / t_y
    int forced_azimuth = -1;                            // pin one viewpoint bucket (benches)
};

struct SampledParams {
    FullParams params;           // theta_global has the viewpoint azimuth composed in
    PerspectiveCamera camera;
    std::string distance_bucket;
    std::string viewpoint_bucket;
};

// Independent category draws plus a seeded camera. The azimuth is part of the
// camera draw but lands in params.theta_global, so that the regressed
// keypoints of `params` are the sample's camera-frame keypoints.
SampledParams sample_full_params(const BodyModel& model, const ParameterBank& bank,
                                 const CameraSamplerConfig& cfg, std::uint64_t seed);

struct SyntheticSample {
    FullParams params;
    Keypoints3D j3d;             // camera frame: centered on the keypoint centroid
    Keypoints2D j2d;             // perspective projection of j3d
    PerspectiveCamera camera;
    std::string distance_bucket;
    std::string viewpoint_bucket;
    std::uint64_t rng_seed = 0;

    bool operator==(const SyntheticSample& o) const;
};

struct GenerateConfig {
    CameraSamplerConfig camera;
    int max_retries = 16;  // camera redraws when a keypoint lands behind the plane
};

SyntheticSample generate_sample(const BodyModel& model, const ParameterBank& bank,
                                const GenerateConfig& cfg, std::uint64_t seed);

// Per-sample seeds are hash(dataset_seed, index); output order is canonical.
std::vector<SyntheticSample> generate_dataset(const BodyModel& model, const ParameterBank& bank,
                                              const GenerateConfig& cfg, int n,
                                              std::uint64_t dataset_seed, int jobs = 1);

// Regressed keypoints recentered on their centroid: the camera-frame
// convention shared by generation, fitting, and evaluation.
Points3 centered_joints(const BodyModel& model, const FullParams& params);
Keypoints3D model_keypoints(const BodyModel& model, const Points3& coords);

// ---------------------------------------------------------------------------
// Degradation: Gaussian pixel noise plus per-keypoint dropout with a per-part
// probability, mimicking inaccurate and incomplete detections.
// ---------------------------------------------------------------------------

struct DegradeConfig {
    Scalar keypoint_noise_sigma = 0;             // pixels
    std::array<Scalar, 4> dropout_prob = {0, 0, 0, 0};  // indexed by Part
    std::uint64_t seed = 0;
};

Keypoints2D degrade(const SyntheticSample& sample, const DegradeConfig& cfg);

// ---------------------------------------------------------------------------
// Scale normalization: per part, subtract the visible-keypoint mean and divide
// by the larger half-extent of the visible bounding box (floored at
// kEpsilonBbox). Records are enough to invert the transform exactly.
// ---------------------------------------------------------------------------

inline constexpr Scalar kEpsilonBbox = 1e-6;

struct PartNormalization {
    Vec2 center = Vec2::Zero();
    Scalar half_extent = kEpsilonBbox;
    bool absent = true;
};

struct NormalizedKeypoints {
    Keypoints2D keypoints;                       // invisible keypoints zeroed
    std::array<PartNormalization, 4> parts;      // indexed by Part
};

NormalizedKeypoints scale_normalize(const Keypoints2D& j2d);
Keypoints2D denormalize(const NormalizedKeypoints& norm);

// ---------------------------------------------------------------------------
// Dataset persistence: newline-delimited JSON with a versioned header line.
// ---------------------------------------------------------------------------

void write_dataset(const std::string& path, const std::vector<SyntheticSample>& samples);
std::vector<SyntheticSample> read_dataset(const std::string& path);

}  // namespace meshrec
