#include "meshrec/regress.hpp"

#include <algorithm>
#include <cmath>

#include "meshrec/json_io.hpp"

namespace meshrec {

Scalar softplus(Scalar x) {
    if (x > 30) return x;
    if (x < -30) return std::exp(x);
    return std::log1p(std::exp(x));
}

Scalar softplus_grad(Scalar x) {
    if (x > 30) return 1;
    if (x < -30) return std::exp(x);
    return 1.0 / (1.0 + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Dense stack
// ---------------------------------------------------------------------------

static MatX glorot_matrix(int in, int out, SplitMix64& rng) {
    const Scalar bound = std::sqrt(6.0 / (in + out));
    MatX w(in, out);
    for (int r = 0; r < in; ++r)
        for (int c = 0; c < out; ++c) w(r, c) = rng.uniform(-bound, bound);
    return w;
}

DenseLayerStack DenseLayerStack::glorot(const std::vector<int>& widths, SplitMix64& rng) {
    DenseLayerStack s;
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        s.w.push_back(glorot_matrix(widths[l], widths[l + 1], rng));
        s.b.push_back(VecX::Zero(widths[l + 1]));
    }
    return s;
}

VecX DenseLayerStack::forward(const VecX& in) const {
    Cache c;
    return forward(in, c);
}

VecX DenseLayerStack::forward(const VecX& in, Cache& cache) const {
    cache.x.clear();
    cache.pre.clear();
    cache.x.push_back(in);
    for (size_t l = 0; l < w.size(); ++l) {
        VecX pre = w[l].transpose() * cache.x.back() + b[l];
        cache.pre.push_back(pre);
        if (l + 1 < w.size()) pre = pre.cwiseMax(0.0);  // rectifier on hidden layers
        cache.x.push_back(std::move(pre));
    }
    return cache.x.back();
}

void DenseLayerStack::backward(const Cache& cache, const VecX& d_out, std::vector<MatX>& dw,
                               std::vector<VecX>& db, VecX* d_in) const {
    VecX d_pre = d_out;  // identity on the output layer
    for (int l = static_cast<int>(w.size()) - 1; l >= 0; --l) {
        dw[static_cast<size_t>(l)] += cache.x[static_cast<size_t>(l)] * d_pre.transpose();
        db[static_cast<size_t>(l)] += d_pre;
        VecX d_x = w[static_cast<size_t>(l)] * d_pre;
        if (l > 0) {
            const VecX& pre = cache.pre[static_cast<size_t>(l - 1)];
            d_pre = d_x.cwiseProduct(
                (pre.array() > 0).cast<Scalar>().matrix());
        } else if (d_in != nullptr) {
            *d_in = std::move(d_x);
        }
    }
}

// ---------------------------------------------------------------------------
// Graph convolution stack
// ---------------------------------------------------------------------------

MatX GraphConvStack::normalize_adjacency(const MatX& adjacency) {
    if (adjacency.rows() != adjacency.cols())
        throw DimensionError("adjacency must be square");
    if (!adjacency.isApprox(adjacency.transpose()))
        throw InvalidConfigError("adjacency must be symmetric");
    const MatX a = adjacency + MatX::Identity(adjacency.rows(), adjacency.cols());
    VecX d = a.rowwise().sum();
    const VecX d_inv_sqrt = d.array().max(1e-12).rsqrt();
    return d_inv_sqrt.asDiagonal() * a * d_inv_sqrt.asDiagonal();
}

GraphConvStack GraphConvStack::glorot(const MatX& a_hat, const std::vector<int>& widths,
                                      SplitMix64& rng) {
    GraphConvStack s;
    s.a_hat = a_hat;
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        s.w.push_back(glorot_matrix(widths[l], widths[l + 1], rng));
        // Small positive spread keeps zero-feature inputs (a fully centered
        // part) off the rectifier kink.
        MatX b(a_hat.rows(), widths[l + 1]);
        for (Eigen::Index r = 0; r < b.rows(); ++r)
            for (Eigen::Index c = 0; c < b.cols(); ++c) b(r, c) = rng.uniform(0.005, 0.03);
        s.b.push_back(b);
    }
    return s;
}

MatX GraphConvStack::forward(const MatX& h0) const {
    Cache c;
    return forward(h0, c);
}

MatX GraphConvStack::forward(const MatX& h0, Cache& cache) const {
    cache.h.clear();
    cache.pre.clear();
    cache.h.push_back(h0);
    for (size_t l = 0; l < w.size(); ++l) {
        MatX pre = a_hat * cache.h.back() * w[l] + b[l];
        cache.pre.push_back(pre);
        cache.h.push_back(pre.cwiseMax(0.0));
    }
    return cache.h.back();
}

void GraphConvStack::backward(const Cache& cache, const MatX& d_out, std::vector<MatX>& dw,
                              std::vector<MatX>& db, MatX* d_in) const {
    MatX d_h = d_out;
    for (int l = static_cast<int>(w.size()) - 1; l >= 0; --l) {
        const MatX d_pre = d_h.cwiseProduct(
            (cache.pre[static_cast<size_t>(l)].array() > 0).cast<Scalar>().matrix());
        dw[static_cast<size_t>(l)] +=
            (a_hat * cache.h[static_cast<size_t>(l)]).transpose() * d_pre;
        db[static_cast<size_t>(l)] += d_pre;
        d_h = a_hat.transpose() * (d_pre * w[static_cast<size_t>(l)].transpose());
    }
    if (d_in != nullptr) *d_in = std::move(d_h);
}

// ---------------------------------------------------------------------------
// Regressor assembly
// ---------------------------------------------------------------------------

namespace {

constexpr int kGcnFeature = 16;

std::vector<int> part_joints(const BodyModel& model, Part part) {
    std::vector<int> out;
    for (int j = 0; j < model.n_joints(); ++j)
        if (model.part_of_joint(j) == part) out.push_back(j);
    return out;
}

MatX part_adjacency(const BodyModel& model, Part part) {
    const std::vector<int> nodes = part_joints(model, part);
    std::vector<int> slot(static_cast<size_t>(model.n_joints()), -1);
    for (size_t i = 0; i < nodes.size(); ++i) slot[static_cast<size_t>(nodes[i])] = static_cast<int>(i);
    MatX a = MatX::Zero(static_cast<Eigen::Index>(nodes.size()), static_cast<Eigen::Index>(nodes.size()));
    for (size_t i = 0; i < nodes.size(); ++i) {
        const int p = model.joint_tree.parent[nodes[i]];
        if (p >= 0 && slot[static_cast<size_t>(p)] >= 0) {
            a(static_cast<Eigen::Index>(i), slot[static_cast<size_t>(p)]) = 1;
            a(slot[static_cast<size_t>(p)], static_cast<Eigen::Index>(i)) = 1;
        }
    }
    return a;
}

// Node features of one part from the normalized keypoints, in keypoint order.
MatX part_features(const NormalizedKeypoints& input, Part part) {
    if (input.parts[static_cast<size_t>(part)].absent)
        throw AbsentPartError(std::string("part '") + to_string(part) + "' is absent");
    int n = 0;
    for (Part p : input.keypoints.part)
        if (p == part) ++n;
    MatX h(n, 2);
    int r = 0;
    for (int i = 0; i < input.keypoints.count(); ++i)
        if (input.keypoints.part[static_cast<size_t>(i)] == part)
            h.row(r++) = input.keypoints.coords.row(i);
    return h;
}

// Global output slots: [beta | theta_body | s | rot | t | d].
struct GlobalSlots {
    int beta, body, s, rot, t, d, total;
    explicit GlobalSlots(int n_shape, int n_body_joints) {
        beta = 0;
        body = beta + n_shape;
        s = body + 3 * (n_body_joints - 1);
        rot = s + 1;
        t = rot + 3;
        d = t + 2;
        total = d + 1;
    }
};

}  // namespace

Regressor Regressor::init(const BodyModel& model, std::uint64_t seed) {
    Regressor r;
    r.n_body_joints = model.config.n_body_joints;
    r.n_hand_joints = model.config.n_hand_joints;
    r.n_hand_pca = model.config.n_hand_pca;
    r.n_shape = model.config.n_shape_modes;

    const GlobalSlots slots(r.n_shape, r.n_body_joints);
    SplitMix64 g_rng(mix_seed(seed, 21));
    r.global = DenseLayerStack::glorot({2 * r.n_body_joints, 256, 256, slots.total}, g_rng);

    const std::vector<int> widths = {2, 32, 32, 32, kGcnFeature};
    SplitMix64 hl_rng(mix_seed(seed, 22));
    r.hand_left.gcn = GraphConvStack::glorot(
        GraphConvStack::normalize_adjacency(part_adjacency(model, Part::LeftHand)), widths,
        hl_rng);
    r.hand_left.w_out = glorot_matrix(kGcnFeature, r.n_hand_pca, hl_rng);
    r.hand_left.b_out = VecX::Zero(r.n_hand_pca);

    SplitMix64 hr_rng(mix_seed(seed, 23));
    r.hand_right.gcn = GraphConvStack::glorot(
        GraphConvStack::normalize_adjacency(part_adjacency(model, Part::RightHand)), widths,
        hr_rng);
    r.hand_right.w_out = glorot_matrix(kGcnFeature, r.n_hand_pca, hr_rng);
    r.hand_right.b_out = VecX::Zero(r.n_hand_pca);

    SplitMix64 f_rng(mix_seed(seed, 24));
    r.face.gcn = GraphConvStack::glorot(
        GraphConvStack::normalize_adjacency(part_adjacency(model, Part::Face)), widths, f_rng);
    r.face.head = DenseLayerStack::glorot({kGcnFeature, 32, 13}, f_rng);
    return r;
}

Regressor Regressor::zeros_like() const {
    Regressor z = *this;
    for (MatX* m : mat_tensors(z)) m->setZero();
    for (VecX* v : vec_tensors(z)) v->setZero();
    return z;
}

std::vector<MatX*> mat_tensors(Regressor& r) {
    std::vector<MatX*> out;
    for (MatX& m : r.global.w) out.push_back(&m);
    for (MatX& m : r.hand_left.gcn.w) out.push_back(&m);
    for (MatX& m : r.hand_left.gcn.b) out.push_back(&m);
    out.push_back(&r.hand_left.w_out);
    for (MatX& m : r.hand_right.gcn.w) out.push_back(&m);
    for (MatX& m : r.hand_right.gcn.b) out.push_back(&m);
    out.push_back(&r.hand_right.w_out);
    for (MatX& m : r.face.gcn.w) out.push_back(&m);
    for (MatX& m : r.face.gcn.b) out.push_back(&m);
    for (MatX& m : r.face.head.w) out.push_back(&m);
    return out;
}

std::vector<VecX*> vec_tensors(Regressor& r) {
    std::vector<VecX*> out;
    for (VecX& v : r.global.b) out.push_back(&v);
    out.push_back(&r.hand_left.b_out);
    out.push_back(&r.hand_right.b_out);
    for (VecX& v : r.face.head.b) out.push_back(&v);
    return out;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

namespace {

VecX body_input(const NormalizedKeypoints& input, int n_body_joints) {
    if (input.parts[static_cast<size_t>(Part::Body)].absent)
        throw AbsentPartError("body part is absent");
    VecX x(2 * n_body_joints);
    int r = 0;
    for (int i = 0; i < input.keypoints.count(); ++i)
        if (input.keypoints.part[static_cast<size_t>(i)] == Part::Body) {
            x[2 * r] = input.keypoints.coords(i, 0);
            x[2 * r + 1] = input.keypoints.coords(i, 1);
            ++r;
        }
    if (r != n_body_joints) throw DimensionError("body keypoint count mismatch");
    return x;
}

GlobalOutputs split_global(const VecX& raw, int n_shape, int n_body_joints) {
    const GlobalSlots slots(n_shape, n_body_joints);
    GlobalOutputs o;
    o.beta = raw.segment(slots.beta, n_shape);
    o.theta_body.resize(n_body_joints - 1, 3);
    for (int j = 0; j < n_body_joints - 1; ++j)
        o.theta_body.row(j) = raw.segment<3>(slots.body + 3 * j).transpose();
    o.cam_s = softplus(raw[slots.s]);
    o.rotation = raw.segment<3>(slots.rot);
    o.cam_t = raw.segment<2>(slots.t);
    o.cam_d = softplus(raw[slots.d]);
    return o;
}

VecX hand_forward(const HandBranch& h, const MatX& h0, GraphConvStack::Cache* cache,
                  MatX* features) {
    GraphConvStack::Cache local;
    GraphConvStack::Cache& c = cache != nullptr ? *cache : local;
    const MatX out = h.gcn.forward(h0, c);
    if (features != nullptr) *features = out;
    const VecX pooled = out.colwise().mean().transpose();
    return h.w_out.transpose() * pooled + h.b_out;
}

}  // namespace

GlobalOutputs forward_global(const Regressor& r, const NormalizedKeypoints& input) {
    const VecX raw = r.global.forward(body_input(input, r.n_body_joints));
    return split_global(raw, r.n_shape, r.n_body_joints);
}

VecX forward_partial(const Regressor& r, const NormalizedKeypoints& input, Part part) {
    switch (part) {
        case Part::LeftHand:
            return hand_forward(r.hand_left, part_features(input, part), nullptr, nullptr);
        case Part::RightHand:
            return hand_forward(r.hand_right, part_features(input, part), nullptr, nullptr);
        case Part::Face: {
            const MatX out = r.face.gcn.forward(part_features(input, part));
            const VecX pooled = out.colwise().mean().transpose();
            return r.face.head.forward(pooled);
        }
        case Part::Body:
            break;
    }
    throw InvalidConfigError("forward_partial handles hands and face only");
}

FullParams assemble_params(const Regressor& r, const BodyModel& model,
                           const NormalizedKeypoints& input, CameraKind kind) {
    const GlobalOutputs g = forward_global(r, input);
    FullParams p = FullParams::rest(model);
    p.beta = g.beta;
    p.theta_body = g.theta_body;
    p.theta_global = g.rotation;
    p.hand_left = forward_partial(r, input, Part::LeftHand);
    p.hand_right = forward_partial(r, input, Part::RightHand);
    p.psi_face = forward_partial(r, input, Part::Face);
    switch (kind) {
        case CameraKind::Weak:
            p.camera = WeakPerspectiveCamera{g.cam_s, g.cam_t.x(), g.cam_t.y()};
            break;
        case CameraKind::D2S:
            p.camera = D2SCamera{g.cam_s, g.cam_t.x(), g.cam_t.y(), g.cam_d};
            break;
        case CameraKind::Perspective: {
            const Scalar f = g.cam_s * g.cam_d;
            p.camera = PerspectiveCamera{f, f, g.cam_t.x() / g.cam_s, g.cam_t.y() / g.cam_s,
                                          g.cam_d};
            break;
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

Scalar sts_training_loss(const BodyModel& model, const FullParams& pred,
                         const SyntheticSample& gt, Scalar w_pm, Scalar w_3d) {
    FitTargets targets;
    targets.gt_params = &gt.params;
    targets.j3d = &gt.j3d;
    FitWeights w;
    w.w_pm = w_pm;
    w.w_3d = w_3d;
    w.w_2d = 0;
    w.w_r = 0;
    return loss_total(model, pred, targets, w).total;
}

namespace {

// Forward + reverse for one sample; gradients accumulate into `grad`.
Scalar backprop_sample(const Regressor& r, const BodyModel& model, const SyntheticSample& sample,
                       const TrainConfig& cfg, int phase, bool sts, Regressor& grad) {
    const NormalizedKeypoints norm = scale_normalize(sample.j2d);

    // Forward with caches.
    DenseLayerStack::Cache g_cache;
    GraphConvStack::Cache hl_cache, hr_cache, f_cache;
    DenseLayerStack::Cache fh_cache;

    VecX raw_global;
    GlobalOutputs g_out;
    const bool use_global = phase >= 2;
    if (use_global) {
        raw_global = r.global.forward(body_input(norm, r.n_body_joints), g_cache);
        g_out = split_global(raw_global, r.n_shape, r.n_body_joints);
    }
    const MatX hl_feat = r.hand_left.gcn.forward(part_features(norm, Part::LeftHand), hl_cache);
    const VecX hl_pooled = hl_feat.colwise().mean().transpose();
    const VecX hl_out = r.hand_left.w_out.transpose() * hl_pooled + r.hand_left.b_out;

    const MatX hr_feat = r.hand_right.gcn.forward(part_features(norm, Part::RightHand), hr_cache);
    const VecX hr_pooled = hr_feat.colwise().mean().transpose();
    const VecX hr_out = r.hand_right.w_out.transpose() * hr_pooled + r.hand_right.b_out;

    const MatX f_feat = r.face.gcn.forward(part_features(norm, Part::Face), f_cache);
    const VecX f_pooled = f_feat.colwise().mean().transpose();
    const VecX f_out = r.face.head.forward(f_pooled, fh_cache);

    FullParams pred = sample.params;  // phase 1 keeps the ground-truth body slots
    pred.hand_left = hl_out;
    pred.hand_right = hr_out;
    pred.psi_face = f_out;
    if (use_global) {
        pred.theta_global = g_out.rotation;
        pred.theta_body = g_out.theta_body;
        pred.beta = g_out.beta;
        pred.camera = D2SCamera{g_out.cam_s, g_out.cam_t.x(), g_out.cam_t.y(), g_out.cam_d};
    }

    FitTargets targets;
    targets.gt_params = &sample.params;
    if (sts) targets.j3d = &sample.j3d;
    FitWeights w;
    w.w_pm = cfg.w_pm;
    w.w_3d = cfg.w_3d;
    w.w_2d = 0;
    w.w_r = 0;
    const LossGradient lg = loss_gradient(model, pred, targets, w);
    const ParamLayout& lay = lg.layout;

    // Route parameter gradients back onto the network outputs.
    const VecX d_hl = lg.d_body.segment(lay.hand_left_off, lay.hand_n);
    const VecX d_hr = lg.d_body.segment(lay.hand_right_off, lay.hand_n);
    const VecX d_face = lg.d_body.segment(lay.psi_off, 13);

    auto hand_backward = [&](const HandBranch& hb, const GraphConvStack::Cache& cache,
                             const VecX& pooled, const VecX& d_out, HandBranch& gb) {
        gb.w_out += pooled * d_out.transpose();
        gb.b_out += d_out;
        const VecX d_pooled = hb.w_out * d_out;
        const int n = static_cast<int>(cache.h.front().rows());
        const MatX d_feat = MatX::Ones(n, 1) * (d_pooled.transpose() / n);
        hb.gcn.backward(cache, d_feat, gb.gcn.w, gb.gcn.b);
    };
    hand_backward(r.hand_left, hl_cache, hl_pooled, d_hl, grad.hand_left);
    hand_backward(r.hand_right, hr_cache, hr_pooled, d_hr, grad.hand_right);

    {
        VecX d_pooled;
        r.face.head.backward(fh_cache, d_face, grad.face.head.w, grad.face.head.b, &d_pooled);
        const int n = static_cast<int>(f_cache.h.front().rows());
        const MatX d_feat = MatX::Ones(n, 1) * (d_pooled.transpose() / n);
        r.face.gcn.backward(f_cache, d_feat, grad.face.gcn.w, grad.face.gcn.b);
    }

    if (use_global) {
        const GlobalSlots slots(r.n_shape, r.n_body_joints);
        VecX d_raw = VecX::Zero(raw_global.size());
        d_raw.segment(slots.beta, r.n_shape) = lg.d_body.segment(lay.beta_off, lay.beta_n);
        for (int j = 0; j < r.n_body_joints - 1; ++j)
            d_raw.segment<3>(slots.body + 3 * j) =
                lg.d_body.segment<3>(lay.body_off + 3 * j);
        d_raw.segment<3>(slots.rot) = lg.d_body.segment<3>(lay.global_off);
        // Camera order for d2s: [s, t_u, t_v, d]; s and d chain through softplus.
        d_raw[slots.s] = lg.d_camera[0] * softplus_grad(raw_global[slots.s]);
        d_raw.segment<2>(slots.t) = lg.d_camera.segment<2>(1);
        d_raw[slots.d] = lg.d_camera[3] * softplus_grad(raw_global[slots.d]);
        r.global.backward(g_cache, d_raw, grad.global.w, grad.global.b);
    }
    return lg.loss.total;
}

void check_finite(const Regressor& grad) {
    Regressor& g = const_cast<Regressor&>(grad);
    for (MatX* m : mat_tensors(g))
        if (!m->allFinite())
            throw TrainingDivergenceError("non-finite gradient in a weight tensor");
    for (VecX* v : vec_tensors(g))
        if (!v->allFinite())
            throw TrainingDivergenceError("non-finite gradient in a bias tensor");
}

}  // namespace

Scalar train_step(Regressor& r, AdamState& adam, const BodyModel& model,
                  const std::vector<const SyntheticSample*>& batch, const TrainConfig& cfg,
                  int phase, bool sts) {
    if (batch.empty()) throw InvalidConfigError("train_step: empty batch");
    Regressor grad = r.zeros_like();
    std::vector<double> losses;
    for (const SyntheticSample* s : batch)
        losses.push_back(backprop_sample(r, model, *s, cfg, phase, sts, grad));
    const Scalar inv = 1.0 / static_cast<Scalar>(batch.size());
    for (MatX* m : mat_tensors(grad)) *m *= inv;
    for (VecX* v : vec_tensors(grad)) *v *= inv;
    check_finite(grad);

    adam.step += 1;
    const Scalar bc1 = 1.0 - std::pow(cfg.beta1, static_cast<Scalar>(adam.step));
    const Scalar bc2 = 1.0 - std::pow(cfg.beta2, static_cast<Scalar>(adam.step));
    auto ws = mat_tensors(r);
    auto gs = mat_tensors(grad);
    auto ms = mat_tensors(adam.m);
    auto vs = mat_tensors(adam.v);
    for (size_t i = 0; i < ws.size(); ++i) {
        *ms[i] = cfg.beta1 * *ms[i] + (1 - cfg.beta1) * *gs[i];
        *vs[i] = cfg.beta2 * *vs[i] + (1 - cfg.beta2) * gs[i]->cwiseProduct(*gs[i]);
        ws[i]->noalias() -=
            cfg.learning_rate *
            (*ms[i] / bc1).cwiseQuotient(((*vs[i] / bc2).cwiseSqrt().array() + 1e-8).matrix());
    }
    auto wv = vec_tensors(r);
    auto gv = vec_tensors(grad);
    auto mv = vec_tensors(adam.m);
    auto vv = vec_tensors(adam.v);
    for (size_t i = 0; i < wv.size(); ++i) {
        *mv[i] = cfg.beta1 * *mv[i] + (1 - cfg.beta1) * *gv[i];
        *vv[i] = cfg.beta2 * *vv[i] + (1 - cfg.beta2) * gv[i]->cwiseProduct(*gv[i]);
        *wv[i] -= cfg.learning_rate *
                  (*mv[i] / bc1).cwiseQuotient(((*vv[i] / bc2).cwiseSqrt().array() + 1e-8).matrix());
    }
    return pairwise_mean(losses);
}

namespace {

Scalar phase_loss(const Regressor& r, const BodyModel& model, const SyntheticSample& sample,
                  const TrainConfig& cfg, int phase) {
    const NormalizedKeypoints norm = scale_normalize(sample.j2d);
    FullParams pred = sample.params;
    pred.hand_left = forward_partial(r, norm, Part::LeftHand);
    pred.hand_right = forward_partial(r, norm, Part::RightHand);
    pred.psi_face = forward_partial(r, norm, Part::Face);
    if (phase >= 2) {
        const GlobalOutputs g = forward_global(r, norm);
        pred.theta_global = g.rotation;
        pred.theta_body = g.theta_body;
        pred.beta = g.beta;
    }
    if (phase >= 2) return sts_training_loss(model, pred, sample, cfg.w_pm, cfg.w_3d);
    FitTargets targets;
    targets.gt_params = &sample.params;
    FitWeights w;
    w.w_pm = cfg.w_pm;
    w.w_3d = 0;
    w.w_2d = 0;
    w.w_r = 0;
    return loss_total(model, pred, targets, w).total;
}

}  // namespace

TrainResult train(const BodyModel& model, const std::vector<SyntheticSample>& dataset,
                  const TrainConfig& cfg) {
    if (dataset.empty()) throw InvalidConfigError("train: empty dataset");
    if (cfg.batch_size < 1 || cfg.sts_cadence < 1)
        throw InvalidConfigError("train: batch_size and sts_cadence must be >= 1");

    // Seeded validation split.
    std::vector<int> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    SplitMix64 split_rng(mix_seed(cfg.seed, 31));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(split_rng.index(i + 1))]);
    int n_val = static_cast<int>(std::llround(cfg.val_fraction * static_cast<double>(dataset.size())));
    n_val = std::min<int>(n_val, static_cast<int>(dataset.size()) - 1);
    n_val = std::max(n_val, 0);
    std::vector<int> val_idx(order.begin(), order.begin() + n_val);
    std::vector<int> train_idx(order.begin() + n_val, order.end());

    TrainResult result;
    result.regressor = Regressor::init(model, mix_seed(cfg.seed, 32));
    AdamState adam{result.regressor.zeros_like(), result.regressor.zeros_like(), 0};

    SplitMix64 shuffle_rng(mix_seed(cfg.seed, 33));
    long iteration = 0;
    int epoch_global = 0;
    auto run_phase = [&](int phase, int epochs) {
        for (int epoch = 0; epoch < epochs; ++epoch, ++epoch_global) {
            TrainConfig step_cfg = cfg;
            step_cfg.learning_rate =
                cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<Scalar>(epoch_global));
            for (int i = static_cast<int>(train_idx.size()) - 1; i > 0; --i)
                std::swap(train_idx[static_cast<size_t>(i)],
                          train_idx[static_cast<size_t>(shuffle_rng.index(i + 1))]);
            std::vector<double> batch_losses;
            for (size_t start = 0; start < train_idx.size();
                 start += static_cast<size_t>(cfg.batch_size)) {
                std::vector<const SyntheticSample*> batch;
                for (size_t i = start;
                     i < std::min(train_idx.size(), start + static_cast<size_t>(cfg.batch_size));
                     ++i)
                    batch.push_back(&dataset[static_cast<size_t>(train_idx[i])]);
                ++iteration;
                const bool sts = phase >= 2 && (iteration % cfg.sts_cadence == 0);
                batch_losses.push_back(
                    train_step(result.regressor, adam, model, batch, step_cfg, phase, sts));
            }
            CurvePoint pt;
            pt.epoch = epoch;
            pt.phase = phase;
            pt.train_loss = pairwise_mean(batch_losses);
            std::vector<double> val_losses;
            const auto& idx = val_idx.empty() ? train_idx : val_idx;
            for (int i : idx)
                val_losses.push_back(
                    phase_loss(result.regressor, model, dataset[static_cast<size_t>(i)], cfg, phase));
            pt.val_loss = pairwise_mean(val_losses);
            result.curve.push_back(pt);
        }
    };
    run_phase(1, cfg.phase1_epochs);
    run_phase(2, cfg.phase2_epochs);
    return result;
}

std::string TrainResult::curve_csv() const {
    std::string out = "epoch,phase,train_loss,val_loss\n";
    for (const CurvePoint& p : curve)
        out += std::to_string(p.epoch) + "," + std::to_string(p.phase) + "," +
               format_double(p.train_loss) + "," + format_double(p.val_loss) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalReport evaluate(const Regressor& r, const BodyModel& model,
                    const std::vector<SyntheticSample>& dataset) {
    if (dataset.empty()) throw EmptyEvaluationError("evaluate: empty dataset");
    std::vector<SampleEval> evals;
    for (const SyntheticSample& s : dataset) {
        const NormalizedKeypoints norm = scale_normalize(s.j2d);
        const FullParams pred = assemble_params(r, model, norm);
        const Points3 joints = centered_joints(model, pred);
        SampleEval e;
        e.mpjpe = mpjpe(joints, s.j3d.coords, s.j3d.visible);
        e.pa_mpjpe = pa_mpjpe(joints, s.j3d.coords, s.j3d.visible);
        e.distance_bucket = s.distance_bucket;
        e.viewpoint_bucket = s.viewpoint_bucket;
        evals.push_back(e);
    }
    return bucketed_report(evals, BucketKey::Distance);
}

Scalar evaluate_hand_mpjpe(const Regressor& r, const BodyModel& model,
                           const std::vector<SyntheticSample>& dataset) {
    if (dataset.empty()) throw EmptyEvaluationError("evaluate_hand_mpjpe: empty dataset");
    std::vector<double> per_sample;
    for (const SyntheticSample& s : dataset) {
        const NormalizedKeypoints norm = scale_normalize(s.j2d);
        FullParams pred = s.params;
        pred.hand_left = forward_partial(r, norm, Part::LeftHand);
        pred.hand_right = forward_partial(r, norm, Part::RightHand);
        const Points3 joints = centered_joints(model, pred);
        std::vector<double> dists;
        for (int j = 0; j < model.n_joints(); ++j) {
            const Part p = model.part_of_joint(j);
            if (p != Part::LeftHand && p != Part::RightHand) continue;
            dists.push_back((joints.row(j) - s.j3d.coords.row(j)).norm());
        }
        per_sample.push_back(pairwise_mean(dists));
    }
    return pairwise_mean(per_sample);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json stack_to_json(const DenseLayerStack& s) {
    json out;
    out["w"] = json::array();
    out["b"] = json::array();
    for (const MatX& m : s.w) out["w"].push_back(rows_to_json(m));
    for (const VecX& v : s.b) out["b"].push_back(vec_to_json(v));
    return out;
}

DenseLayerStack stack_from_json(const json& j, const std::string& what) {
    DenseLayerStack s;
    const json& ws = require(j, "w");
    const json& bs = require(j, "b");
    if (ws.size() != bs.size()) throw MalformedFileError(what + ": w/b layer count mismatch");
    for (size_t l = 0; l < ws.size(); ++l) {
        const json& first = ws[l];
        if (!first.is_array() || first.empty() || !first[0].is_array())
            throw MalformedFileError(what + ": bad weight matrix");
        s.w.push_back(json_to_rows<MatX>(first, static_cast<Eigen::Index>(first[0].size()),
                                         what + ".w"));
        VecX b = json_to_vec(bs[l], what + ".b");
        if (b.size() != s.w.back().cols())
            throw MalformedFileError(what + ": bias width mismatch");
        s.b.push_back(std::move(b));
    }
    return s;
}

json gcn_to_json(const GraphConvStack& s) {
    json out;
    out["a_hat"] = rows_to_json(s.a_hat);
    out["w"] = json::array();
    for (const MatX& m : s.w) out["w"].push_back(rows_to_json(m));
    out["b"] = json::array();
    for (const MatX& m : s.b) out["b"].push_back(rows_to_json(m));
    return out;
}

GraphConvStack gcn_from_json(const json& j, const std::string& what) {
    GraphConvStack s;
    const json& ah = require(j, "a_hat");
    if (!ah.is_array() || ah.empty()) throw MalformedFileError(what + ": bad a_hat");
    s.a_hat = json_to_rows<MatX>(ah, static_cast<Eigen::Index>(ah[0].size()), what + ".a_hat");
    for (const json& m : require(j, "w")) {
        if (!m.is_array() || m.empty() || !m[0].is_array())
            throw MalformedFileError(what + ": bad gcn weight");
        s.w.push_back(
            json_to_rows<MatX>(m, static_cast<Eigen::Index>(m[0].size()), what + ".w"));
    }
    if (s.w.size() != 4) throw MalformedFileError(what + ": expected exactly 4 gcn layers");
    for (const json& v : require(j, "b")) {
        if (!v.is_array() || v.empty() || !v[0].is_array())
            throw MalformedFileError(what + ": bad gcn bias");
        s.b.push_back(
            json_to_rows<MatX>(v, static_cast<Eigen::Index>(v[0].size()), what + ".b"));
    }
    if (s.b.size() != s.w.size())
        throw MalformedFileError(what + ": bias/weight layer count mismatch");
    return s;
}

}  // namespace

void save_weights(const Regressor& r, const std::string& path) {
    json doc;
    doc["version"] = 1;
    doc["n_body_joints"] = r.n_body_joints;
    doc["n_hand_joints"] = r.n_hand_joints;
    doc["n_hand_pca"] = r.n_hand_pca;
    doc["n_shape"] = r.n_shape;
    doc["global"] = stack_to_json(r.global);
    doc["hand_left"] = json{{"gcn", gcn_to_json(r.hand_left.gcn)},
                            {"w_out", rows_to_json(r.hand_left.w_out)},
                            {"b_out", vec_to_json(r.hand_left.b_out)}};
    doc["hand_right"] = json{{"gcn", gcn_to_json(r.hand_right.gcn)},
                             {"w_out", rows_to_json(r.hand_right.w_out)},
                             {"b_out", vec_to_json(r.hand_right.b_out)}};
    doc["face"] = json{{"gcn", gcn_to_json(r.face.gcn)}, {"head", stack_to_json(r.face.head)}};
    write_json_file_atomic(path, doc);
}

Regressor load_weights(const std::string& path) {
    const json doc = read_json_file(path);
    const json& ver = require(doc, "version");
    if (!ver.is_number_integer() || ver.get<int>() != 1)
        throw VersionError("unsupported weights version " + ver.dump());
    Regressor r;
    r.n_body_joints = require(doc, "n_body_joints").get<int>();
    r.n_hand_joints = require(doc, "n_hand_joints").get<int>();
    r.n_hand_pca = require(doc, "n_hand_pca").get<int>();
    r.n_shape = require(doc, "n_shape").get<int>();
    r.global = stack_from_json(require(doc, "global"), "global");
    const json& hl = require(doc, "hand_left");
    r.hand_left.gcn = gcn_from_json(require(hl, "gcn"), "hand_left");
    r.hand_left.w_out = json_to_rows<MatX>(require(hl, "w_out"), r.n_hand_pca, "hand_left.w_out");
    r.hand_left.b_out = json_to_vec(require(hl, "b_out"), "hand_left.b_out");
    const json& hr = require(doc, "hand_right");
    r.hand_right.gcn = gcn_from_json(require(hr, "gcn"), "hand_right");
    r.hand_right.w_out =
        json_to_rows<MatX>(require(hr, "w_out"), r.n_hand_pca, "hand_right.w_out");
    r.hand_right.b_out = json_to_vec(require(hr, "b_out"), "hand_right.b_out");
    const json& f = require(doc, "face");
    r.face.gcn = gcn_from_json(require(f, "gcn"), "face");
    r.face.head = stack_from_json(require(f, "head"), "face.head");
    return r;
}

}  // namespace meshrec
