#pragma once

#include <string>
#include <vector>

#include "meshrec/body_model.hpp"
#include "meshrec/fit.hpp"
#include "meshrec/metrics.hpp"
#include "meshrec/synth.hpp"

namespace meshrec {

// ---------------------------------------------------------------------------
// Two-branch keypoint regressor. The global branch is an MLP from normalized
// body keypoints to (beta, theta_body, camera); the partial branch runs four
// symmetric-normalized graph convolution layers over each hand (and the face)
// and reads out PCA hand poses / expression. All passes are pure and
// deterministic given the weights; training is hand-rolled reverse mode plus
// adaptive-moment updates.
// ---------------------------------------------------------------------------

struct DenseLayerStack {
    std::vector<MatX> w;  // (in x out) per layer
    std::vector<VecX> b;

    struct Cache {
        std::vector<VecX> x;    // activations, x[0] = input
        std::vector<VecX> pre;  // pre-activations
    };

    int in_dim() const { return static_cast<int>(w.front().rows()); }
    int out_dim() const { return static_cast<int>(w.back().cols()); }

    VecX forward(const VecX& in) const;
    VecX forward(const VecX& in, Cache& cache) const;
    // Accumulates into dw/db; d_in optional.
    void backward(const Cache& cache, const VecX& d_out, std::vector<MatX>& dw,
                  std::vector<VecX>& db, VecX* d_in = nullptr) const;

    static DenseLayerStack glorot(const std::vector<int>& widths, SplitMix64& rng);
};

struct GraphConvStack {
    MatX a_hat;           // symmetric-normalized adjacency with self loops
    std::vector<MatX> w;  // exactly 4 layers, (in x out), shared across nodes
    std::vector<MatX> b;  // per-node bias (n x out), zero-initialized; gives nodes
                          // of an otherwise symmetric skeleton distinct roles

    struct Cache {
        std::vector<MatX> h;    // node features, h[0] = input
        std::vector<MatX> pre;
    };

    MatX forward(const MatX& h0) const;
    MatX forward(const MatX& h0, Cache& cache) const;
    void backward(const Cache& cache, const MatX& d_out, std::vector<MatX>& dw,
                  std::vector<MatX>& db, MatX* d_in = nullptr) const;

    // D^{-1/2} (A + I) D^{-1/2} from a symmetric 0/1 adjacency.
    static MatX normalize_adjacency(const MatX& adjacency);
    static GraphConvStack glorot(const MatX& a_hat, const std::vector<int>& widths,
                                 SplitMix64& rng);
};

struct HandBranch {
    GraphConvStack gcn;
    MatX w_out;  // (feature x n_hand_pca)
    VecX b_out;
};

struct FaceBranch {
    GraphConvStack gcn;
    DenseLayerStack head;  // pooled feature -> 13
};

struct Regressor {
    DenseLayerStack global;  // 2*K_body -> ... -> n_shape + 3*(B-1) + 7
    HandBranch hand_left;
    HandBranch hand_right;
    FaceBranch face;

    int n_body_joints = 0;
    int n_hand_joints = 0;
    int n_hand_pca = 0;
    int n_shape = 0;

    static Regressor init(const BodyModel& model, std::uint64_t seed);
    // Same shapes, all tensors zero; used for gradients and moment state.
    Regressor zeros_like() const;
};

// Trainable tensors in a fixed order; the same order for gradient and moment
// clones, so optimizer state can be zipped positionally.
std::vector<MatX*> mat_tensors(Regressor& r);
std::vector<VecX*> vec_tensors(Regressor& r);

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

struct GlobalOutputs {
    VecX beta;
    MatX theta_body;      // (B-1) x 3
    Scalar cam_s = 0;     // softplus-mapped, always positive
    Vec3 rotation = Vec3::Zero();
    Vec2 cam_t = Vec2::Zero();
    Scalar cam_d = 0;     // softplus-mapped
};

GlobalOutputs forward_global(const Regressor& r, const NormalizedKeypoints& input);

// Hands return PCA coefficients (n_hand_pca); the face returns psi_face (13).
VecX forward_partial(const Regressor& r, const NormalizedKeypoints& input, Part part);

// Both branches assembled into recovery parameters; the camera slot is built
// from (s, t, d) for the requested kind.
FullParams assemble_params(const Regressor& r, const BodyModel& model,
                           const NormalizedKeypoints& input,
                           CameraKind kind = CameraKind::D2S);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Consistency supervision on synthetic pairs: w_pm L_pm + w_3d L_3D, with the
// 3D keypoints recomputed through the body model.
Scalar sts_training_loss(const BodyModel& model, const FullParams& pred,
                         const SyntheticSample& gt, Scalar w_pm = 20, Scalar w_3d = 60);

struct TrainConfig {
    Scalar learning_rate = 1e-4;
    Scalar lr_decay = 1.0;     // per-epoch multiplier (1 = constant)
    int batch_size = 16;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    int phase1_epochs = 30;
    int phase2_epochs = 5;
    int sts_cadence = 5;       // one STS (mesh-consistency) batch every N iterations
    Scalar w_pm = 20;
    Scalar w_3d = 60;
    Scalar val_fraction = 0.1;
    std::uint64_t seed = 0;
};

struct CurvePoint {
    int epoch = 0;
    int phase = 1;
    Scalar train_loss = 0;
    Scalar val_loss = 0;
};

struct TrainResult {
    Regressor regressor;
    std::vector<CurvePoint> curve;

    std::string curve_csv() const;  // epoch,phase,train_loss,val_loss
};

// Adam over one batch; returns the mean batch loss. phase 1 restricts the
// prediction to the partial branches (body/global slots come from the ground
// truth), phase 2 predicts everything; `sts` adds the L_3D consistency term.
struct AdamState {
    Regressor m;
    Regressor v;
    long step = 0;
};

Scalar train_step(Regressor& r, AdamState& adam, const BodyModel& model,
                  const std::vector<const SyntheticSample*>& batch, const TrainConfig& cfg,
                  int phase, bool sts);

TrainResult train(const BodyModel& model, const std::vector<SyntheticSample>& dataset,
                  const TrainConfig& cfg);

// Full-pipeline evaluation: both branches, keypoints through the body model,
// MPJPE / PA-MPJPE against the synthetic ground truth (distance buckets).
EvalReport evaluate(const Regressor& r, const BodyModel& model,
                    const std::vector<SyntheticSample>& dataset);

// Hand-branch isolation: predicted hand poses plugged into otherwise
// ground-truth parameters; mean MPJPE over hand keypoints only.
Scalar evaluate_hand_mpjpe(const Regressor& r, const BodyModel& model,
                           const std::vector<SyntheticSample>& dataset);

// ---------------------------------------------------------------------------
// Persistence: versioned JSON weights file.
// ---------------------------------------------------------------------------

void save_weights(const Regressor& r, const std::string& path);
Regressor load_weights(const std::string& path);

Scalar softplus(Scalar x);
Scalar softplus_grad(Scalar x);

}  // namespace meshrec
