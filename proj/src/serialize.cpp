#include "meshrec/serialize.hpp"

#include "meshrec/fit.hpp"
#include "meshrec/regress.hpp"

namespace meshrec {

Part part_from_string(const std::string& s) {
    if (s == "body") return Part::Body;
    if (s == "left_hand") return Part::LeftHand;
    if (s == "right_hand") return Part::RightHand;
    if (s == "face") return Part::Face;
    throw MalformedFileError("unknown part '" + s + "'");
}

json camera_to_json(const CameraModel& cam) {
    return std::visit([](const auto& c) -> json {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, PerspectiveCamera>)
            return json{{"kind", "perspective"}, {"f_x", c.f_x}, {"f_y", c.f_y},
                        {"t_x", c.t_x},          {"t_y", c.t_y}, {"d", c.d}};
        else if constexpr (std::is_same_v<T, WeakPerspectiveCamera>)
            return json{{"kind", "weak"}, {"s", c.s}, {"t_u", c.t_u}, {"t_v", c.t_v}};
        else
            return json{{"kind", "d2s"}, {"s", c.s}, {"t_u", c.t_u}, {"t_v", c.t_v}, {"d", c.d}};
    }, cam);
}

CameraModel camera_from_json(const json& j) {
    const std::string kind = require(j, "kind").get<std::string>();
    if (kind == "perspective")
        return PerspectiveCamera{require(j, "f_x").get<Scalar>(), require(j, "f_y").get<Scalar>(),
                                 require(j, "t_x").get<Scalar>(), require(j, "t_y").get<Scalar>(),
                                 require(j, "d").get<Scalar>()};
    if (kind == "weak")
        return WeakPerspectiveCamera{require(j, "s").get<Scalar>(),
                                     require(j, "t_u").get<Scalar>(),
                                     require(j, "t_v").get<Scalar>()};
    if (kind == "d2s")
        return D2SCamera{require(j, "s").get<Scalar>(), require(j, "t_u").get<Scalar>(),
                         require(j, "t_v").get<Scalar>(), require(j, "d").get<Scalar>()};
    throw MalformedFileError("unknown camera kind '" + kind + "'");
}

json params_to_json(const FullParams& p) {
    return json{{"theta_global", vec_to_json(p.theta_global)},
                {"theta_body", rows_to_json(p.theta_body)},
                {"hand_rep", p.hand_rep == HandRep::Pca ? "pca" : "full"},
                {"hand_left", vec_to_json(p.hand_left)},
                {"hand_right", vec_to_json(p.hand_right)},
                {"psi_face", vec_to_json(p.psi_face)},
                {"beta", vec_to_json(p.beta)},
                {"camera", camera_to_json(p.camera)}};
}

FullParams params_from_json(const json& j) {
    FullParams p;
    const VecX g = json_to_vec(require(j, "theta_global"), "theta_global");
    if (g.size() != 3) throw MalformedFileError("theta_global must have 3 entries");
    p.theta_global = g.head<3>();
    p.theta_body = json_to_rows<MatX>(require(j, "theta_body"), 3, "theta_body");
    const std::string rep = require(j, "hand_rep").get<std::string>();
    if (rep == "pca")
        p.hand_rep = HandRep::Pca;
    else if (rep == "full")
        p.hand_rep = HandRep::Full;
    else
        throw MalformedFileError("hand_rep must be 'pca' or 'full'");
    p.hand_left = json_to_vec(require(j, "hand_left"), "hand_left");
    p.hand_right = json_to_vec(require(j, "hand_right"), "hand_right");
    p.psi_face = json_to_vec(require(j, "psi_face"), "psi_face");
    if (p.psi_face.size() != 13) throw MalformedFileError("psi_face must have 13 entries");
    p.beta = json_to_vec(require(j, "beta"), "beta");
    p.camera = camera_from_json(require(j, "camera"));
    return p;
}

namespace {

json visibility_to_json(const std::vector<std::uint8_t>& v) {
    json out = json::array();
    for (std::uint8_t b : v) out.push_back(b != 0);
    return out;
}

json parts_to_json(const std::vector<Part>& v) {
    json out = json::array();
    for (Part p : v) out.push_back(to_string(p));
    return out;
}

template <typename KP>
void tags_from_json(const json& j, KP& k, const std::string& what) {
    const json& vis = require(j, "visible");
    const json& parts = require(j, "parts");
    if (!vis.is_array() || !parts.is_array() ||
        static_cast<Eigen::Index>(vis.size()) != k.coords.rows() ||
        static_cast<Eigen::Index>(parts.size()) != k.coords.rows())
        throw MalformedFileError(what + ": visible/parts length mismatch");
    k.visible.resize(vis.size());
    k.part.resize(parts.size());
    for (size_t i = 0; i < vis.size(); ++i) {
        k.visible[i] = vis[i].get<bool>() ? 1 : 0;
        k.part[i] = part_from_string(parts[i].get<std::string>());
    }
}

}  // namespace

json keypoints2_to_json(const Keypoints2D& k) {
    return json{{"coords", rows_to_json(k.coords)},
                {"visible", visibility_to_json(k.visible)},
                {"parts", parts_to_json(k.part)}};
}

Keypoints2D keypoints2_from_json(const json& j) {
    Keypoints2D k;
    k.coords = json_to_rows<Points2>(require(j, "coords"), 2, "keypoints2d.coords");
    tags_from_json(j, k, "keypoints2d");
    return k;
}

json keypoints3_to_json(const Keypoints3D& k) {
    return json{{"coords", rows_to_json(k.coords)},
                {"visible", visibility_to_json(k.visible)},
                {"parts", parts_to_json(k.part)}};
}

Keypoints3D keypoints3_from_json(const json& j) {
    Keypoints3D k;
    k.coords = json_to_rows<Points3>(require(j, "coords"), 3, "keypoints3d.coords");
    tags_from_json(j, k, "keypoints3d");
    return k;
}

json sample_to_json(const SyntheticSample& s) {
    return json{{"params", params_to_json(s.params)},
                {"j3d", keypoints3_to_json(s.j3d)},
                {"j2d", keypoints2_to_json(s.j2d)},
                {"camera", camera_to_json(s.camera)},
                {"distance_bucket", s.distance_bucket},
                {"viewpoint_bucket", s.viewpoint_bucket},
                {"rng_seed", s.rng_seed}};
}

SyntheticSample sample_from_json(const json& j) {
    SyntheticSample s;
    s.params = params_from_json(require(j, "params"));
    s.j3d = keypoints3_from_json(require(j, "j3d"));
    s.j2d = keypoints2_from_json(require(j, "j2d"));
    const CameraModel cam = camera_from_json(require(j, "camera"));
    if (!std::holds_alternative<PerspectiveCamera>(cam))
        throw MalformedFileError("sample camera must be perspective");
    s.camera = std::get<PerspectiveCamera>(cam);
    s.distance_bucket = require(j, "distance_bucket").get<std::string>();
    s.viewpoint_bucket = require(j, "viewpoint_bucket").get<std::string>();
    s.rng_seed = require(j, "rng_seed").get<std::uint64_t>();
    return s;
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

json fit_config_to_json(const FitConfig& c) {
    json stages = json::array();
    for (const FitStage& s : c.effective_stages())
        stages.push_back(json{{"camera", s.camera},
                              {"global_rot", s.global_rot},
                              {"body", s.body},
                              {"hands", s.hands},
                              {"face", s.face},
                              {"shape", s.shape},
                              {"max_iters", s.max_iters}});
    return json{{"camera_kind", to_string(c.camera_kind)},
                {"weights",
                 json{{"w_pm", c.weights.w_pm},
                      {"w_r", c.weights.w_r},
                      {"w_2d", c.weights.w_2d},
                      {"w_3d", c.weights.w_3d}}},
                {"lambda_beta", c.lambda_beta},
                {"stages", stages},
                {"tolerance", c.tolerance},
                {"initial_damping", c.initial_damping},
                {"damping_decrease", c.damping_decrease},
                {"damping_increase", c.damping_increase},
                {"max_halvings", c.max_halvings},
                {"rotation_starts", c.rotation_starts},
                {"min_body_keypoints", c.min_body_keypoints},
                {"init_jitter", c.init_jitter},
                {"seed", c.seed}};
}

FitConfig fit_config_from_json(const json& j) {
    FitConfig c;
    if (j.contains("camera_kind"))
        c.camera_kind = camera_kind_from_string(j["camera_kind"].get<std::string>());
    if (j.contains("weights")) {
        const json& w = j["weights"];
        c.weights.w_pm = w.value("w_pm", c.weights.w_pm);
        c.weights.w_r = w.value("w_r", c.weights.w_r);
        c.weights.w_2d = w.value("w_2d", c.weights.w_2d);
        c.weights.w_3d = w.value("w_3d", c.weights.w_3d);
    }
    c.lambda_beta = j.value("lambda_beta", c.lambda_beta);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.initial_damping = j.value("initial_damping", c.initial_damping);
    c.damping_decrease = j.value("damping_decrease", c.damping_decrease);
    c.damping_increase = j.value("damping_increase", c.damping_increase);
    c.max_halvings = j.value("max_halvings", c.max_halvings);
    c.rotation_starts = j.value("rotation_starts", c.rotation_starts);
    c.min_body_keypoints = j.value("min_body_keypoints", c.min_body_keypoints);
    c.init_jitter = j.value("init_jitter", c.init_jitter);
    c.seed = j.value("seed", c.seed);
    if (j.contains("stages")) {
        c.stages.clear();
        for (const json& s : j["stages"]) {
            FitStage st;
            st.camera = s.value("camera", st.camera);
            st.global_rot = s.value("global_rot", st.global_rot);
            st.body = s.value("body", st.body);
            st.hands = s.value("hands", st.hands);
            st.face = s.value("face", st.face);
            st.shape = s.value("shape", st.shape);
            st.max_iters = s.value("max_iters", st.max_iters);
            c.stages.push_back(st);
        }
    }
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"lr_decay", c.lr_decay},
                {"batch_size", c.batch_size},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"phase1_epochs", c.phase1_epochs},
                {"phase2_epochs", c.phase2_epochs},
                {"sts_cadence", c.sts_cadence},
                {"w_pm", c.w_pm},
                {"w_3d", c.w_3d},
                {"val_fraction", c.val_fraction},
                {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.phase1_epochs = j.value("phase1_epochs", c.phase1_epochs);
    c.phase2_epochs = j.value("phase2_epochs", c.phase2_epochs);
    c.sts_cadence = j.value("sts_cadence", c.sts_cadence);
    c.w_pm = j.value("w_pm", c.w_pm);
    c.w_3d = j.value("w_3d", c.w_3d);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.seed = j.value("seed", c.seed);
    return c;
}

json fit_result_to_json(const FitResult& r) {
    json trace = json::array();
    for (Scalar v : r.residual_trace) trace.push_back(v);
    return json{{"params", params_to_json(r.params)},
                {"final_loss",
                 json{{"total", r.final_loss.total},
                      {"l_2d", r.final_loss.l_2d},
                      {"l_3d", r.final_loss.l_3d},
                      {"l_pm", r.final_loss.l_pm},
                      {"l_r", r.final_loss.l_r},
                      {"weights",
                       json{{"w_pm", r.final_loss.weights.w_pm},
                            {"w_r", r.final_loss.weights.w_r},
                            {"w_2d", r.final_loss.weights.w_2d},
                            {"w_3d", r.final_loss.weights.w_3d}}}}},
                {"iterations", r.iterations},
                {"converged", r.converged},
                {"residual_trace", trace},
                {"diagnostics", r.diagnostics}};
}

}  // namespace meshrec
