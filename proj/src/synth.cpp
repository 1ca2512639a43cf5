#include "meshrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "meshrec/parallel.hpp"
#include "meshrec/serialize.hpp"

namespace meshrec {

// ---------------------------------------------------------------------------
// Limits
// ---------------------------------------------------------------------------

bool pose_within_limits(const BodyModel& model, const FullParams& params, std::string* why) {
    const Points3 pose = local_pose(model, params);
    bool ok = true;
    for (int j = 0; j < model.n_joints(); ++j)
        for (int a = 0; a < 3; ++a) {
            const Scalar v = pose(j, a);
            if (v < model.angle_limit_lo(j, a) || v > model.angle_limit_hi(j, a)) {
                ok = false;
                if (why != nullptr)
                    *why += "joint " + std::to_string(j) + " axis " + std::to_string(a) +
                            " = " + std::to_string(v) + " outside [" +
                            std::to_string(model.angle_limit_lo(j, a)) + ", " +
                            std::to_string(model.angle_limit_hi(j, a)) + "]; ";
            }
        }
    return ok;
}

namespace {

// Largest factor c in [0, 1] such that c * expanded hand pose stays in-limit.
Scalar hand_limit_scale(const BodyModel& model, const VecX& theta_h, bool left) {
    const int base = model.config.n_body_joints + model.config.n_jaw_joints +
                     (left ? 0 : model.config.n_hand_joints);
    Scalar c = 1.0;
    for (int h = 0; h < model.config.n_hand_joints; ++h)
        for (int a = 0; a < 3; ++a) {
            const Scalar v = theta_h[3 * h + a];
            const Scalar lo = model.angle_limit_lo(base + h, a);
            const Scalar hi = model.angle_limit_hi(base + h, a);
            if (v > hi) c = std::min(c, hi / v);
            if (v < lo) c = std::min(c, lo / v);
        }
    return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Banks
// ---------------------------------------------------------------------------

ParameterBank build_bank(const BodyModel& model, const BankConfig& cfg, std::uint64_t seed) {
    if (cfg.n_body < 1 || cfg.n_hand < 1 || cfg.n_expression < 1 || cfg.n_shape < 1)
        throw InvalidConfigError("build_bank: every category needs at least one entry");
    if (cfg.angle_fraction < 0 || cfg.angle_fraction > 1)
        throw InvalidConfigError("build_bank: angle_fraction must be in [0, 1]");

    const int n_body_joints = model.config.n_body_joints;
    const int jaw = n_body_joints;
    ParameterBank bank;

    SplitMix64 body_rng(mix_seed(seed, 11));
    for (int i = 0; i < cfg.n_body; ++i) {
        ParameterBank::BodyPose e;
        for (int a = 0; a < 3; ++a)
            e.theta_global[a] = body_rng.normal(0, cfg.global_lean_sigma * cfg.angle_fraction);
        e.theta_body.resize(n_body_joints - 1, 3);
        for (int j = 1; j < n_body_joints; ++j)
            for (int a = 0; a < 3; ++a)
                e.theta_body(j - 1, a) =
                    body_rng.uniform(cfg.angle_fraction * model.angle_limit_lo(j, a),
                                     cfg.angle_fraction * model.angle_limit_hi(j, a));
        bank.body_poses.push_back(std::move(e));
    }

    SplitMix64 hand_rng(mix_seed(seed, 12));
    for (int i = 0; i < cfg.n_hand; ++i) {
        ParameterBank::HandPose e;
        e.theta_hp.resize(model.config.n_hand_pca);
        for (int c = 0; c < e.theta_hp.size(); ++c)
            e.theta_hp[c] = hand_rng.normal(0, cfg.hand_pca_sigma * cfg.angle_fraction);
        // Keep the expansion inside the limits of both hands (the entry may be
        // drawn for either side).
        FullParams probe = FullParams::rest(model);
        probe.hand_left = e.theta_hp;
        probe.hand_right = e.theta_hp;
        Scalar c = std::min(
            hand_limit_scale(model, expand_hand_pose(model, probe, true), true),
            hand_limit_scale(model, expand_hand_pose(model, probe, false), false));
        if (c < 1.0) e.theta_hp *= 0.999 * c;
        bank.hand_poses.push_back(std::move(e));
    }

    SplitMix64 expr_rng(mix_seed(seed, 13));
    for (int i = 0; i < cfg.n_expression; ++i) {
        ParameterBank::Expression e;
        e.psi = VecX::Zero(13);
        for (int c = 0; c < 10; ++c) e.psi[c] = expr_rng.normal(0, cfg.expr_sigma);
        for (int a = 0; a < 3; ++a)
            e.psi[10 + a] = expr_rng.uniform(cfg.angle_fraction * model.angle_limit_lo(jaw, a),
                                             cfg.angle_fraction * model.angle_limit_hi(jaw, a));
        bank.expressions.push_back(std::move(e));
    }

    SplitMix64 shape_rng(mix_seed(seed, 14));
    for (int i = 0; i < cfg.n_shape; ++i) {
        ParameterBank::Shape e;
        e.beta.resize(model.config.n_shape_modes);
        for (int c = 0; c < e.beta.size(); ++c)
            e.beta[c] = std::clamp(shape_rng.normal(0, cfg.beta_sigma), -5.0, 5.0);
        bank.shapes.push_back(std::move(e));
    }
    return bank;
}

void save_bank(const ParameterBank& bank, const std::string& path) {
    json doc;
    doc["format"] = "sts-bank";
    doc["version"] = 1;
    doc["body_poses"] = json::array();
    for (const auto& e : bank.body_poses)
        doc["body_poses"].push_back(json{{"theta_global", vec_to_json(e.theta_global)},
                                         {"theta_body", rows_to_json(e.theta_body)},
                                         {"provenance", e.provenance}});
    doc["hand_poses"] = json::array();
    for (const auto& e : bank.hand_poses)
        doc["hand_poses"].push_back(
            json{{"theta_hp", vec_to_json(e.theta_hp)}, {"provenance", e.provenance}});
    doc["expressions"] = json::array();
    for (const auto& e : bank.expressions)
        doc["expressions"].push_back(
            json{{"psi", vec_to_json(e.psi)}, {"provenance", e.provenance}});
    doc["shapes"] = json::array();
    for (const auto& e : bank.shapes)
        doc["shapes"].push_back(
            json{{"beta", vec_to_json(e.beta)}, {"provenance", e.provenance}});
    write_json_file_atomic(path, doc);
}

BankLoadReport load_bank(const BodyModel& model, const std::string& path, bool strict) {
    const json doc = read_json_file(path);
    if (require(doc, "format").get<std::string>() != "sts-bank")
        throw MalformedFileError("not an sts-bank file");
    if (require(doc, "version").get<int>() != 1)
        throw VersionError("unsupported bank version");

    BankLoadReport report;
    auto reject = [&](const std::string& what, const std::string& why) {
        if (strict) throw BankValidationError(what + ": " + why);
        report.rejected.push_back(what + ": " + why);
    };

    size_t i = 0;
    for (const json& e : require(doc, "body_poses")) {
        ParameterBank::BodyPose b;
        const VecX g = json_to_vec(require(e, "theta_global"), "theta_global");
        if (g.size() != 3) throw MalformedFileError("theta_global must have 3 entries");
        b.theta_global = g.head<3>();
        b.theta_body = json_to_rows<MatX>(require(e, "theta_body"), 3, "theta_body");
        if (b.theta_body.rows() != model.config.n_body_joints - 1)
            throw MalformedFileError("theta_body row count mismatch");
        b.provenance = e.value("provenance", "file");
        FullParams probe = FullParams::rest(model);
        probe.theta_global = b.theta_global;
        probe.theta_body = b.theta_body;
        std::string why;
        if (!pose_within_limits(model, probe, &why))
            reject("body_poses[" + std::to_string(i) + "]", why);
        else
            report.bank.body_poses.push_back(std::move(b));
        ++i;
    }
    i = 0;
    for (const json& e : require(doc, "hand_poses")) {
        ParameterBank::HandPose h;
        h.theta_hp = json_to_vec(require(e, "theta_hp"), "theta_hp");
        if (h.theta_hp.size() != model.config.n_hand_pca)
            throw MalformedFileError("theta_hp length mismatch");
        h.provenance = e.value("provenance", "file");
        FullParams probe = FullParams::rest(model);
        probe.hand_left = h.theta_hp;
        probe.hand_right = h.theta_hp;
        std::string why;
        if (!pose_within_limits(model, probe, &why))
            reject("hand_poses[" + std::to_string(i) + "]", why);
        else
            report.bank.hand_poses.push_back(std::move(h));
        ++i;
    }
    i = 0;
    for (const json& e : require(doc, "expressions")) {
        ParameterBank::Expression x;
        x.psi = json_to_vec(require(e, "psi"), "psi");
        if (x.psi.size() != 13) throw MalformedFileError("psi must have 13 entries");
        x.provenance = e.value("provenance", "file");
        FullParams probe = FullParams::rest(model);
        probe.psi_face = x.psi;
        std::string why;
        if (!pose_within_limits(model, probe, &why))
            reject("expressions[" + std::to_string(i) + "]", why);
        else
            report.bank.expressions.push_back(std::move(x));
        ++i;
    }
    for (const json& e : require(doc, "shapes")) {
        ParameterBank::Shape s;
        s.beta = json_to_vec(require(e, "beta"), "beta");
        if (s.beta.size() != model.config.n_shape_modes)
            throw MalformedFileError("beta length mismatch");
        s.provenance = e.value("provenance", "file");
        report.bank.shapes.push_back(std::move(s));
    }

    if (report.bank.body_poses.empty() || report.bank.hand_poses.empty() ||
        report.bank.expressions.empty() || report.bank.shapes.empty())
        throw BankValidationError("bank has an empty category after validation");
    return report;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

SampledParams sample_full_params(const BodyModel& model, const ParameterBank& bank,
                                 const CameraSamplerConfig& cfg, std::uint64_t seed) {
    if (bank.body_poses.empty() || bank.hand_poses.empty() || bank.expressions.empty() ||
        bank.shapes.empty())
        throw InvalidConfigError("sample_full_params: bank has an empty category");
    if (cfg.distance_factors.empty() || cfg.n_azimuths < 1)
        throw InvalidConfigError("sample_full_params: empty camera configuration");

    SplitMix64 rng(seed);
    const auto& body = bank.body_poses[static_cast<size_t>(rng.index(static_cast<int>(bank.body_poses.size())))];
    const auto& hl = bank.hand_poses[static_cast<size_t>(rng.index(static_cast<int>(bank.hand_poses.size())))];
    const auto& hr = bank.hand_poses[static_cast<size_t>(rng.index(static_cast<int>(bank.hand_poses.size())))];
    const auto& expr = bank.expressions[static_cast<size_t>(rng.index(static_cast<int>(bank.expressions.size())))];
    const auto& shape = bank.shapes[static_cast<size_t>(rng.index(static_cast<int>(bank.shapes.size())))];

    const int fi = rng.index(static_cast<int>(cfg.distance_factors.size()));
    int az_index = rng.index(cfg.n_azimuths);
    if (cfg.forced_azimuth >= 0 && cfg.forced_azimuth < cfg.n_azimuths)
        az_index = cfg.forced_azimuth;
    const Scalar f = rng.uniform(cfg.f_min, cfg.f_max);
    const Scalar extent = model.body_extent();
    const Scalar tx = cfg.center_jitter * extent * (rng.uniform() - 0.5) * 2.0;
    const Scalar ty = cfg.center_jitter * extent * (rng.uniform() - 0.5) * 2.0;

    SampledParams out;
    out.params = FullParams::rest(model);
    out.params.theta_body = body.theta_body;
    out.params.hand_left = hl.theta_hp;
    out.params.hand_right = hr.theta_hp;
    out.params.psi_face = expr.psi;
    out.params.beta = shape.beta;

    // The viewpoint azimuth folds into the body's global rotation, so the
    // regressed keypoints of `params` already live in the camera frame.
    const Scalar az = 2.0 * M_PI * az_index / cfg.n_azimuths;
    const Mat3 r_az = rodrigues(Vec3(0, az, 0));
    out.params.theta_global = axis_angle_from_matrix(r_az * rodrigues(body.theta_global));

    PerspectiveCamera cam;
    cam.f_x = f;
    cam.f_y = f;
    cam.t_x = tx;
    cam.t_y = ty;
    cam.d = cfg.distance_factors[static_cast<size_t>(fi)] * extent;
    out.camera = cam;
    out.params.camera = cam;

    char buf[32];
    std::snprintf(buf, sizeof(buf), "az%02d", az_index);
    out.viewpoint_bucket = buf;
    out.distance_bucket = format_double(cfg.distance_factors[static_cast<size_t>(fi)]) + "x";
    return out;
}

Points3 centered_joints(const BodyModel& model, const FullParams& params) {
    Points3 j = regress_joints(model, skin(model, params));
    const Eigen::RowVector3d mean = j.colwise().mean();
    j.rowwise() -= mean;
    return j;
}

Keypoints3D model_keypoints(const BodyModel& model, const Points3& coords) {
    Keypoints3D k;
    k.coords = coords;
    k.visible.assign(static_cast<size_t>(coords.rows()), 1);
    k.part.resize(static_cast<size_t>(coords.rows()));
    for (int j = 0; j < coords.rows(); ++j)
        k.part[static_cast<size_t>(j)] = model.part_of_joint(j);
    return k;
}

SyntheticSample generate_sample(const BodyModel& model, const ParameterBank& bank,
                                const GenerateConfig& cfg, std::uint64_t seed) {
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        SampledParams sp =
            sample_full_params(model, bank, cfg.camera, mix_seed(seed, static_cast<std::uint64_t>(attempt)));
        const Points3 jc = centered_joints(model, sp.params);
        if (sp.camera.d + jc.col(2).minCoeff() <= kEpsilonDepth) continue;

        SyntheticSample s;
        s.params = std::move(sp.params);
        s.j3d = model_keypoints(model, jc);
        s.j2d = project_perspective(s.j3d, sp.camera);
        s.camera = sp.camera;
        s.distance_bucket = std::move(sp.distance_bucket);
        s.viewpoint_bucket = std::move(sp.viewpoint_bucket);
        s.rng_seed = seed;
        return s;
    }
    throw GenerationError("generate_sample: camera retries exhausted (keypoints behind plane)");
}

std::vector<SyntheticSample> generate_dataset(const BodyModel& model, const ParameterBank& bank,
                                              const GenerateConfig& cfg, int n,
                                              std::uint64_t dataset_seed, int jobs) {
    std::vector<SyntheticSample> out(static_cast<size_t>(n));
    parallel_for(n, jobs, [&](int i) {
        out[static_cast<size_t>(i)] =
            generate_sample(model, bank, cfg, mix_seed(dataset_seed, static_cast<std::uint64_t>(i)));
    });
    return out;
}

// ---------------------------------------------------------------------------
// Degradation
// ---------------------------------------------------------------------------

Keypoints2D degrade(const SyntheticSample& sample, const DegradeConfig& cfg) {
    if (cfg.keypoint_noise_sigma < 0)
        throw InvalidConfigError("degrade: sigma must be nonnegative");
    for (Scalar p : cfg.dropout_prob)
        if (p < 0 || p > 1) throw InvalidConfigError("degrade: dropout prob must be in [0, 1]");

    Keypoints2D out = sample.j2d;
    SplitMix64 rng(cfg.seed);
    for (int i = 0; i < out.count(); ++i) {
        // Fixed three draws per keypoint keeps the stream layout independent
        // of the decisions taken.
        const Scalar u = rng.uniform();
        const Scalar n0 = rng.normal();
        const Scalar n1 = rng.normal();
        if (!out.visible[static_cast<size_t>(i)]) continue;
        if (u < cfg.dropout_prob[static_cast<size_t>(out.part[static_cast<size_t>(i)])]) {
            out.visible[static_cast<size_t>(i)] = 0;
            out.coords.row(i).setZero();
            continue;
        }
        out.coords(i, 0) += cfg.keypoint_noise_sigma * n0;
        out.coords(i, 1) += cfg.keypoint_noise_sigma * n1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scale normalization
// ---------------------------------------------------------------------------

NormalizedKeypoints scale_normalize(const Keypoints2D& j2d) {
    NormalizedKeypoints out;
    out.keypoints.coords = Points2::Zero(j2d.count(), 2);
    out.keypoints.visible = j2d.visible;
    out.keypoints.part = j2d.part;

    for (int pi = 0; pi < 4; ++pi) {
        const Part part = static_cast<Part>(pi);
        Vec2 sum = Vec2::Zero();
        Vec2 lo(std::numeric_limits<Scalar>::infinity(), std::numeric_limits<Scalar>::infinity());
        Vec2 hi = -lo;
        int n = 0;
        for (int i = 0; i < j2d.count(); ++i) {
            if (!j2d.visible[static_cast<size_t>(i)] || j2d.part[static_cast<size_t>(i)] != part)
                continue;
            const Vec2 p = j2d.coords.row(i).transpose();
            sum += p;
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
            ++n;
        }
        PartNormalization& rec = out.parts[static_cast<size_t>(pi)];
        if (n == 0) {
            rec = PartNormalization{};  // absent; keypoints stay zero
            continue;
        }
        rec.absent = false;
        rec.center = sum / static_cast<Scalar>(n);
        rec.half_extent = std::max({(hi.x() - lo.x()) / 2, (hi.y() - lo.y()) / 2, kEpsilonBbox});
        for (int i = 0; i < j2d.count(); ++i) {
            if (!j2d.visible[static_cast<size_t>(i)] || j2d.part[static_cast<size_t>(i)] != part)
                continue;
            out.keypoints.coords(i, 0) = (j2d.coords(i, 0) - rec.center.x()) / rec.half_extent;
            out.keypoints.coords(i, 1) = (j2d.coords(i, 1) - rec.center.y()) / rec.half_extent;
        }
    }
    return out;
}

Keypoints2D denormalize(const NormalizedKeypoints& norm) {
    Keypoints2D out = norm.keypoints;
    for (int i = 0; i < out.count(); ++i) {
        const PartNormalization& rec =
            norm.parts[static_cast<size_t>(out.part[static_cast<size_t>(i)])];
        if (rec.absent || !out.visible[static_cast<size_t>(i)]) {
            out.coords.row(i).setZero();
            continue;
        }
        out.coords(i, 0) = out.coords(i, 0) * rec.half_extent + rec.center.x();
        out.coords(i, 1) = out.coords(i, 1) * rec.half_extent + rec.center.y();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

bool SyntheticSample::operator==(const SyntheticSample& o) const {
    return params == o.params && j3d == o.j3d && j2d == o.j2d && camera == o.camera &&
           distance_bucket == o.distance_bucket && viewpoint_bucket == o.viewpoint_bucket &&
           rng_seed == o.rng_seed;
}

void write_dataset(const std::string& path, const std::vector<SyntheticSample>& samples) {
    std::string text;
    text += json{{"format", "sts-dataset"}, {"version", 1}, {"n", samples.size()}}.dump();
    text += "\n";
    for (const SyntheticSample& s : samples) {
        text += sample_to_json(s).dump();
        text += "\n";
    }
    write_text_file_atomic(path, text);
}

std::vector<SyntheticSample> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MalformedFileError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line))
        throw MalformedFileError("dataset '" + path + "' is empty (missing header)");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw MalformedFileError("dataset header: " + std::string(e.what()));
    }
    if (require(header, "format").get<std::string>() != "sts-dataset")
        throw MalformedFileError("not an sts-dataset file");
    if (require(header, "version").get<int>() != 1)
        throw VersionError("unsupported dataset version");

    std::vector<SyntheticSample> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(sample_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw MalformedFileError("dataset line " + std::to_string(line_no) + ": " + e.what());
        } catch (const MalformedFileError& e) {
            throw MalformedFileError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace meshrec
