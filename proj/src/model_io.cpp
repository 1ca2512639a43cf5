#include "meshrec/body_model.hpp"
#include "meshrec/json_io.hpp"

namespace meshrec {

namespace {

constexpr int kModelFormatVersion = 1;

JointKind joint_kind_from_string(const std::string& s) {
    if (s == "body") return JointKind::Body;
    if (s == "left_hand") return JointKind::LeftHand;
    if (s == "right_hand") return JointKind::RightHand;
    if (s == "jaw") return JointKind::Jaw;
    throw MalformedFileError("unknown joint kind '" + s + "'");
}

json config_to_json(const ToyModelConfig& c) {
    return json{{"n_body_joints", c.n_body_joints},
                {"n_hand_joints", c.n_hand_joints},
                {"n_jaw_joints", c.n_jaw_joints},
                {"n_vertices", c.n_vertices},
                {"verts_per_ring", c.verts_per_ring},
                {"rings_per_bone", c.rings_per_bone},
                {"n_shape_modes", c.n_shape_modes},
                {"n_expression_modes", c.n_expression_modes},
                {"n_hand_pca", c.n_hand_pca}};
}

ToyModelConfig config_from_json(const json& j) {
    ToyModelConfig c;
    c.n_body_joints = require(j, "n_body_joints").get<int>();
    c.n_hand_joints = require(j, "n_hand_joints").get<int>();
    c.n_jaw_joints = require(j, "n_jaw_joints").get<int>();
    c.n_vertices = require(j, "n_vertices").get<int>();
    c.verts_per_ring = require(j, "verts_per_ring").get<int>();
    c.rings_per_bone = require(j, "rings_per_bone").get<int>();
    c.n_shape_modes = require(j, "n_shape_modes").get<int>();
    c.n_expression_modes = require(j, "n_expression_modes").get<int>();
    c.n_hand_pca = require(j, "n_hand_pca").get<int>();
    return c;
}

}  // namespace

void save_model(const BodyModel& model, const std::string& path) {
    json tree;
    tree["parents"] = json::array();
    tree["kinds"] = json::array();
    for (int k = 0; k < model.n_joints(); ++k) {
        tree["parents"].push_back(model.joint_tree.parent[k]);
        tree["kinds"].push_back(to_string(model.joint_tree.kind[static_cast<size_t>(k)]));
    }
    tree["rest_offsets"] = rows_to_json(model.joint_tree.rest_offset);

    json doc;
    doc["version"] = kModelFormatVersion;
    doc["seed"] = model.seed;
    doc["config"] = config_to_json(model.config);
    doc["joint_tree"] = std::move(tree);
    doc["template_vertices"] = rows_to_json(model.template_vertices);
    doc["faces"] = rows_to_json(model.faces);
    doc["shape_basis"] = rows_to_json(model.shape_basis);
    doc["expression_basis"] = rows_to_json(model.expression_basis);
    doc["skin_weights"] = rows_to_json(model.skin_weights);
    doc["joint_regressor"] = rows_to_json(model.joint_regressor);
    doc["hand_pca_basis"] =
        json{{"left", rows_to_json(model.hand_pca_left)}, {"right", rows_to_json(model.hand_pca_right)}};
    doc["angle_limits"] = json{{"lo", rows_to_json(model.angle_limit_lo)},
                               {"hi", rows_to_json(model.angle_limit_hi)}};
    write_json_file_atomic(path, doc);
}

BodyModel load_model(const std::string& path) {
    const json doc = read_json_file(path);
    if (!doc.is_object()) throw MalformedFileError("model file is not a JSON object");
    const json& ver = require(doc, "version");
    if (!ver.is_number_integer() || ver.get<int>() != kModelFormatVersion)
        throw VersionError("unsupported model format version " + ver.dump());

    BodyModel m;
    m.seed = require(doc, "seed").get<std::uint64_t>();
    m.config = config_from_json(require(doc, "config"));

    const json& tree = require(doc, "joint_tree");
    const json& parents = require(tree, "parents");
    const json& kinds = require(tree, "kinds");
    if (!parents.is_array() || !kinds.is_array() || parents.size() != kinds.size())
        throw MalformedFileError("joint_tree parents/kinds mismatch");
    const int k_joints = static_cast<int>(parents.size());
    m.joint_tree.parent.resize(k_joints);
    m.joint_tree.kind.resize(static_cast<size_t>(k_joints));
    for (int k = 0; k < k_joints; ++k) {
        m.joint_tree.parent[k] = parents[static_cast<size_t>(k)].get<int>();
        if (m.joint_tree.parent[k] >= k)
            throw MalformedFileError("joint_tree is not topologically ordered");
        m.joint_tree.kind[static_cast<size_t>(k)] =
            joint_kind_from_string(kinds[static_cast<size_t>(k)].get<std::string>());
    }
    m.joint_tree.rest_offset = json_to_rows<Points3>(require(tree, "rest_offsets"), 3, "rest_offsets");
    if (m.joint_tree.rest_offset.rows() != k_joints)
        throw MalformedFileError("rest_offsets row count mismatch");

    m.template_vertices =
        json_to_rows<Points3>(require(doc, "template_vertices"), 3, "template_vertices");
    m.faces = json_to_rows<Triangles>(require(doc, "faces"), 3, "faces");
    const Eigen::Index n = m.template_vertices.rows();
    m.shape_basis = json_to_rows<MatX>(require(doc, "shape_basis"), 3 * n, "shape_basis");
    m.expression_basis =
        json_to_rows<MatX>(require(doc, "expression_basis"), 3 * n, "expression_basis");
    m.skin_weights = json_to_rows<MatX>(require(doc, "skin_weights"), k_joints, "skin_weights");
    if (m.skin_weights.rows() != n) throw MalformedFileError("skin_weights row count mismatch");
    m.joint_regressor = json_to_rows<MatX>(require(doc, "joint_regressor"), n, "joint_regressor");
    if (m.joint_regressor.rows() != k_joints)
        throw MalformedFileError("joint_regressor row count mismatch");

    const json& pca = require(doc, "hand_pca_basis");
    m.hand_pca_left =
        json_to_rows<MatX>(require(pca, "left"), 3 * m.config.n_hand_joints, "hand_pca_basis.left");
    m.hand_pca_right = json_to_rows<MatX>(require(pca, "right"), 3 * m.config.n_hand_joints,
                                          "hand_pca_basis.right");

    const json& limits = require(doc, "angle_limits");
    m.angle_limit_lo = json_to_rows<Points3>(require(limits, "lo"), 3, "angle_limits.lo");
    m.angle_limit_hi = json_to_rows<Points3>(require(limits, "hi"), 3, "angle_limits.hi");
    if (m.angle_limit_lo.rows() != k_joints || m.angle_limit_hi.rows() != k_joints)
        throw MalformedFileError("angle_limits row count mismatch");

    m.finalize();
    return m;
}

}  // namespace meshrec
