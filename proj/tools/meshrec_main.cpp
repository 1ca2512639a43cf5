#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "meshrec/fit.hpp"
#include "meshrec/manifest.hpp"
#include "meshrec/regress.hpp"
#include "meshrec/serialize.hpp"

namespace fs = std::filesystem;
using namespace meshrec;

namespace {

std::string default_out_dir() {
    const char* env = std::getenv("MESHREC_OUT_DIR");
    return env != nullptr && *env != '\0' ? std::string(env) : std::string(".");
}

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::vector<Scalar> parse_scalar_list(const std::string& csv) {
    std::vector<Scalar> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (out.empty()) throw InvalidConfigError("expected a comma-separated list of numbers");
    return out;
}

std::vector<CameraKind> parse_kinds(const std::string& csv) {
    std::vector<CameraKind> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(camera_kind_from_string(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (out.empty()) throw InvalidConfigError("expected a comma-separated list of camera kinds");
    return out;
}

BankConfig bank_config_from_json(const json& j) {
    BankConfig c;
    c.n_body = j.value("n_body", c.n_body);
    c.n_hand = j.value("n_hand", c.n_hand);
    c.n_expression = j.value("n_expression", c.n_expression);
    c.n_shape = j.value("n_shape", c.n_shape);
    c.angle_fraction = j.value("angle_fraction", c.angle_fraction);
    c.global_lean_sigma = j.value("global_lean_sigma", c.global_lean_sigma);
    c.beta_sigma = j.value("beta_sigma", c.beta_sigma);
    c.expr_sigma = j.value("expr_sigma", c.expr_sigma);
    c.hand_pca_sigma = j.value("hand_pca_sigma", c.hand_pca_sigma);
    return c;
}

json bank_config_to_json(const BankConfig& c) {
    return json{{"n_body", c.n_body},
                {"n_hand", c.n_hand},
                {"n_expression", c.n_expression},
                {"n_shape", c.n_shape},
                {"angle_fraction", c.angle_fraction},
                {"global_lean_sigma", c.global_lean_sigma},
                {"beta_sigma", c.beta_sigma},
                {"expr_sigma", c.expr_sigma},
                {"hand_pca_sigma", c.hand_pca_sigma}};
}

CameraSamplerConfig camera_config_from_json(const json& j) {
    CameraSamplerConfig c;
    if (j.contains("distance_factors"))
        c.distance_factors = j["distance_factors"].get<std::vector<Scalar>>();
    c.n_azimuths = j.value("n_azimuths", c.n_azimuths);
    c.f_min = j.value("f_min", c.f_min);
    c.f_max = j.value("f_max", c.f_max);
    c.center_jitter = j.value("center_jitter", c.center_jitter);
    c.forced_azimuth = j.value("forced_azimuth", c.forced_azimuth);
    return c;
}

json camera_config_to_json(const CameraSamplerConfig& c) {
    return json{{"distance_factors", c.distance_factors},
                {"n_azimuths", c.n_azimuths},
                {"f_min", c.f_min},
                {"f_max", c.f_max},
                {"center_jitter", c.center_jitter},
                {"forced_azimuth", c.forced_azimuth}};
}

ParameterBank make_bank(const BodyModel& model, const json& cfg, std::uint64_t seed) {
    const std::string file = cfg.value("bank_file", std::string());
    if (!file.empty()) {
        BankLoadReport rep = load_bank(model, file, cfg.value("bank_strict", false));
        for (const std::string& r : rep.rejected)
            std::cerr << "bank: rejected " << r << "\n";
        return std::move(rep.bank);
    }
    return build_bank(model, bank_config_from_json(cfg.value("bank", json::object())), seed);
}

struct Timed {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void finish(const std::string& command, const json& cfg, const std::string& manifest_path,
            std::vector<std::string> inputs, std::vector<std::string> outputs,
            const Timed& timer) {
    RunManifest m;
    m.command = command;
    m.config = cfg;
    m.inputs = std::move(inputs);
    m.outputs = std::move(outputs);
    m.duration_seconds = timer.seconds();
    write_run_manifest(manifest_path, m);
}

// ---------------------------------------------------------------------------
// Command runners. Each consumes a fully resolved JSON config so that `rerun`
// can replay a manifest byte-for-byte.
// ---------------------------------------------------------------------------

void run_model(const json& cfg) {
    Timed timer;
    ToyModelConfig mc;
    mc.n_body_joints = cfg.value("n_body_joints", mc.n_body_joints);
    mc.n_hand_joints = cfg.value("n_hand_joints", mc.n_hand_joints);
    mc.n_vertices = cfg.value("n_vertices", mc.n_vertices);
    mc.verts_per_ring = cfg.value("verts_per_ring", mc.verts_per_ring);
    mc.rings_per_bone = cfg.value("rings_per_bone", mc.rings_per_bone);
    mc.n_shape_modes = cfg.value("n_shape_modes", mc.n_shape_modes);
    mc.n_hand_pca = cfg.value("n_hand_pca", mc.n_hand_pca);
    const auto seed = cfg.value("seed", std::uint64_t{0});
    const std::string out = cfg.value("out", join(default_out_dir(), "model.json"));

    const BodyModel model = build_toy_model(mc, seed);
    save_model(model, out);
    std::cout << "model: K=" << model.n_joints() << " N=" << model.n_vertices()
              << " epsilon_regressor=" << format_double(model.epsilon_regressor) << " -> " << out
              << "\n";
    finish("model", cfg, out + ".manifest.json", {}, {out}, timer);
}

void run_gen(const json& cfg) {
    Timed timer;
    const std::string model_path = require(cfg, "model").get<std::string>();
    const std::string out = cfg.value("out", join(default_out_dir(), "dataset.ndjson"));
    const int n = cfg.value("n", 100);
    const auto seed = cfg.value("seed", std::uint64_t{0});
    const int jobs = cfg.value("jobs", 1);

    const BodyModel model = load_model(model_path);
    const ParameterBank bank = make_bank(model, cfg, mix_seed(seed, 101));
    GenerateConfig gc;
    gc.camera = camera_config_from_json(cfg.value("camera", json::object()));
    gc.max_retries = cfg.value("max_retries", gc.max_retries);
    const auto samples = generate_dataset(model, bank, gc, n, mix_seed(seed, 102), jobs);
    write_dataset(out, samples);
    std::cout << "gen: " << samples.size() << " samples -> " << out << "\n";
    finish("gen", cfg, out + ".manifest.json", {model_path}, {out}, timer);
}

void run_fit(const json& cfg) {
    Timed timer;
    const std::string model_path = require(cfg, "model").get<std::string>();
    const std::string dataset_path = require(cfg, "dataset").get<std::string>();
    const std::string out = cfg.value("out", join(default_out_dir(), "fit"));
    const int index = cfg.value("index", -1);
    const int jobs = cfg.value("jobs", 1);

    FitConfig fc = fit_config_from_json(cfg.value("fit_config", json::object()));
    fc.camera_kind = camera_kind_from_string(cfg.value("camera_kind", "d2s"));

    const BodyModel model = load_model(model_path);
    std::vector<SyntheticSample> samples = read_dataset(dataset_path);
    if (samples.empty()) throw EmptyEvaluationError("fit: dataset has no samples");
    if (index >= 0) {
        if (index >= static_cast<int>(samples.size()))
            throw InvalidConfigError("fit: --index out of range");
        samples = {samples[static_cast<size_t>(index)]};
    }

    fs::create_directories(out);
    FitSweepConfig sc;
    sc.base = fc;
    sc.kinds = {fc.camera_kind};
    sc.jobs = jobs;
    const FitSweepResult sweep = fit_sweep(model, samples, sc);

    std::vector<std::string> outputs;
    const auto& outcomes = sweep.kinds.front().outcomes;
    for (size_t i = 0; i < outcomes.size(); ++i) {
        const int sample_index = index >= 0 ? index : static_cast<int>(i);
        const std::string path =
            join(out, "fit_" + std::to_string(sample_index) + "_" +
                          to_string(fc.camera_kind) + ".json");
        json doc;
        if (outcomes[i].ok) {
            doc = fit_result_to_json(outcomes[i].result);
            doc["mpjpe"] = outcomes[i].mpjpe;
            doc["pa_mpjpe"] = outcomes[i].pa_mpjpe;
        } else {
            doc["error"] = outcomes[i].error;
        }
        doc["sample_index"] = sample_index;
        doc["camera_kind"] = to_string(fc.camera_kind);
        write_json_file_atomic(path, doc, 2);
        outputs.push_back(path);
    }
    const std::string csv_path = join(out, "fit_summary.csv");
    write_text_file_atomic(csv_path, sweep.to_csv());
    outputs.push_back(csv_path);
    std::cout << "fit: " << outcomes.size() << " samples (" << to_string(fc.camera_kind)
              << ") -> " << out << "\n";
    finish("fit", cfg, join(out, "manifest.json"), {model_path, dataset_path}, outputs, timer);
}

void run_train(const json& cfg) {
    Timed timer;
    const std::string model_path = require(cfg, "model").get<std::string>();
    const std::string dataset_path = require(cfg, "dataset").get<std::string>();
    const std::string out = cfg.value("out", join(default_out_dir(), "train"));
    const TrainConfig tc = train_config_from_json(cfg.value("train_config", json::object()));

    const BodyModel model = load_model(model_path);
    const auto dataset = read_dataset(dataset_path);
    const TrainResult result = train(model, dataset, tc);

    fs::create_directories(out);
    const std::string weights_path = join(out, "weights.json");
    const std::string curves_path = join(out, "curves.csv");
    save_weights(result.regressor, weights_path);
    write_text_file_atomic(curves_path, result.curve_csv());
    std::cout << "train: " << result.curve.size() << " epochs -> " << out << "\n";
    finish("train", cfg, join(out, "manifest.json"), {model_path, dataset_path},
           {weights_path, curves_path}, timer);
}

json report_to_json(const EvalReport& r) {
    json buckets = json::object();
    for (const auto& [label, st] : r.buckets)
        buckets[label] = json{{"n", st.n}, {"mpjpe", st.mpjpe}, {"pa_mpjpe", st.pa_mpjpe}};
    return json{{"units", r.units},
                {"overall",
                 json{{"n", r.overall.n},
                      {"mpjpe", r.overall.mpjpe},
                      {"pa_mpjpe", r.overall.pa_mpjpe}}},
                {"buckets", buckets}};
}

void run_eval(const json& cfg) {
    Timed timer;
    const std::string model_path = require(cfg, "model").get<std::string>();
    const std::string dataset_path = require(cfg, "dataset").get<std::string>();
    const std::string out = cfg.value("out", join(default_out_dir(), "eval"));
    const std::string weights_path = cfg.value("weights", std::string());
    const std::string fit_results = cfg.value("fit_results", std::string());

    const BodyModel model = load_model(model_path);
    const auto dataset = read_dataset(dataset_path);
    std::vector<std::string> inputs = {model_path, dataset_path};

    EvalReport report;
    if (!weights_path.empty()) {
        inputs.push_back(weights_path);
        const Regressor reg = load_weights(weights_path);
        report = evaluate(reg, model, dataset);
    } else if (!fit_results.empty()) {
        inputs.push_back(fit_results);
        std::vector<SampleEval> evals;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(fit_results)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("fit_", 0) == 0 && entry.path().extension() == ".json")
                files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const fs::path& p : files) {
            const json doc = read_json_file(p.string());
            if (doc.contains("error")) continue;
            const int idx = require(doc, "sample_index").get<int>();
            if (idx < 0 || idx >= static_cast<int>(dataset.size()))
                throw MalformedFileError("fit result index out of dataset range");
            const SyntheticSample& s = dataset[static_cast<size_t>(idx)];
            const FullParams params = params_from_json(require(doc, "params"));
            const Points3 joints = centered_joints(model, params);
            SampleEval e;
            e.mpjpe = mpjpe(joints, s.j3d.coords, s.j3d.visible);
            e.pa_mpjpe = pa_mpjpe(joints, s.j3d.coords, s.j3d.visible);
            e.distance_bucket = s.distance_bucket;
            e.viewpoint_bucket = s.viewpoint_bucket;
            evals.push_back(e);
        }
        if (evals.empty()) throw EmptyEvaluationError("eval: no successful fit results found");
        report = bucketed_report(evals, BucketKey::Distance);
    } else {
        throw InvalidConfigError("eval: pass --weights or --fit-results");
    }

    fs::create_directories(out);
    const std::string csv_path = join(out, "report.csv");
    const std::string json_path = join(out, "report.json");
    write_text_file_atomic(csv_path, report.to_csv());
    write_json_file_atomic(json_path, report_to_json(report), 2);
    std::cout << "eval: n=" << report.overall.n
              << " mpjpe=" << format_double(report.overall.mpjpe)
              << " pa_mpjpe=" << format_double(report.overall.pa_mpjpe) << " -> " << out << "\n";
    finish("eval", cfg, join(out, "manifest.json"), inputs, {csv_path, json_path}, timer);
}

void run_bench_distance(const json& cfg) {
    Timed timer;
    const std::string model_path = require(cfg, "model").get<std::string>();
    const std::string out = cfg.value("out", join(default_out_dir(), "bench_distance"));
    const auto seed = cfg.value("seed", std::uint64_t{0});
    const int n_per = cfg.value("n_per_bucket", 20);
    const int jobs = cfg.value("jobs", 1);
    const std::vector<Scalar> distances =
        cfg.contains("distances") ? cfg["distances"].get<std::vector<Scalar>>()
                                  : std::vector<Scalar>{2, 5, 30};
    std::vector<CameraKind> kinds = {CameraKind::D2S, CameraKind::Weak};
    if (cfg.contains("camera_kinds")) {
        kinds.clear();
        for (const auto& k : cfg["camera_kinds"])
            kinds.push_back(camera_kind_from_string(k.get<std::string>()));
    }

    const BodyModel model = load_model(model_path);
    const ParameterBank bank = make_bank(model, cfg, mix_seed(seed, 101));
    GenerateConfig gc;
    gc.camera = camera_config_from_json(cfg.value("camera", json::object()));

    std::vector<SyntheticSample> samples;
    for (size_t b = 0; b < distances.size(); ++b) {
        gc.camera.distance_factors = {distances[b]};
        const auto bucket = generate_dataset(model, bank, gc, n_per,
                                             mix_seed(seed, 200 + b), jobs);
        samples.insert(samples.end(), bucket.begin(), bucket.end());
    }

    fs::create_directories(out);
    const std::string data_path = join(out, "dataset.ndjson");
    write_dataset(data_path, samples);

    FitSweepConfig sc;
    sc.base = fit_config_from_json(cfg.value("fit_config", json::object()));
    sc.kinds = kinds;
    sc.bucket_key = BucketKey::Distance;
    sc.jobs = jobs;
    const FitSweepResult sweep = fit_sweep(model, samples, sc);
    const std::string csv_path = join(out, "bench_distance.csv");
    write_text_file_atomic(csv_path, sweep.to_csv());
    std::cout << sweep.to_csv();
    finish("bench-distance", cfg, join(out, "manifest.json"), {model_path},
           {data_path, csv_path}, timer);
}

void run_bench_viewpoint(const json& cfg) {
    Timed timer;
    const std::string model_path = require(cfg, "model").get<std::string>();
    const std::string out = cfg.value("out", join(default_out_dir(), "bench_viewpoint"));
    const auto seed = cfg.value("seed", std::uint64_t{0});
    const int n_viewpoints = cfg.value("n_viewpoints", 30);
    const int n_per = cfg.value("n_per_bucket", 10);
    const Scalar distance = cfg.value("distance", 3.0);
    const int jobs = cfg.value("jobs", 1);
    std::vector<CameraKind> kinds = {CameraKind::D2S, CameraKind::Weak};
    if (cfg.contains("camera_kinds")) {
        kinds.clear();
        for (const auto& k : cfg["camera_kinds"])
            kinds.push_back(camera_kind_from_string(k.get<std::string>()));
    }

    const BodyModel model = load_model(model_path);
    const ParameterBank bank = make_bank(model, cfg, mix_seed(seed, 101));
    GenerateConfig gc;
    gc.camera = camera_config_from_json(cfg.value("camera", json::object()));
    gc.camera.distance_factors = {distance};
    gc.camera.n_azimuths = n_viewpoints;

    std::vector<SyntheticSample> samples;
    for (int v = 0; v < n_viewpoints; ++v) {
        gc.camera.forced_azimuth = v;
        const auto bucket = generate_dataset(
            model, bank, gc, n_per, mix_seed(seed, 300 + static_cast<std::uint64_t>(v)), jobs);
        samples.insert(samples.end(), bucket.begin(), bucket.end());
    }

    fs::create_directories(out);
    const std::string data_path = join(out, "dataset.ndjson");
    write_dataset(data_path, samples);

    FitSweepConfig sc;
    sc.base = fit_config_from_json(cfg.value("fit_config", json::object()));
    sc.kinds = kinds;
    sc.bucket_key = BucketKey::Viewpoint;
    sc.jobs = jobs;
    const FitSweepResult sweep = fit_sweep(model, samples, sc);
    const std::string csv_path = join(out, "bench_viewpoint.csv");
    write_text_file_atomic(csv_path, sweep.to_csv());
    std::cout << sweep.to_csv();
    finish("bench-viewpoint", cfg, join(out, "manifest.json"), {model_path},
           {data_path, csv_path}, timer);
}

void dispatch(const std::string& command, const json& cfg) {
    if (command == "model") run_model(cfg);
    else if (command == "gen") run_gen(cfg);
    else if (command == "fit") run_fit(cfg);
    else if (command == "train") run_train(cfg);
    else if (command == "eval") run_eval(cfg);
    else if (command == "bench-distance") run_bench_distance(cfg);
    else if (command == "bench-viewpoint") run_bench_viewpoint(cfg);
    else throw InvalidConfigError("unknown command '" + command + "' in manifest");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"whole-body mesh recovery toolkit"};
    app.require_subcommand(1);

    // ---- model ----
    auto* c_model = app.add_subcommand("model", "build and save a toy body model");
    std::uint64_t m_seed = 0;
    std::string m_out;
    ToyModelConfig m_cfg;
    c_model->add_option("--seed", m_seed, "generation seed");
    c_model->add_option("--out", m_out, "output model JSON path");
    c_model->add_option("--n-vertices", m_cfg.n_vertices, "mesh vertex budget");
    c_model->add_option("--verts-per-ring", m_cfg.verts_per_ring, "vertices per capsule ring");
    c_model->add_option("--rings-per-bone", m_cfg.rings_per_bone, "rings per bone");
    c_model->add_option("--n-body-joints", m_cfg.n_body_joints, "body joint count");
    c_model->add_option("--n-hand-joints", m_cfg.n_hand_joints, "joints per hand");
    c_model->add_option("--n-shape-modes", m_cfg.n_shape_modes, "shape basis size");
    c_model->add_option("--n-hand-pca", m_cfg.n_hand_pca, "hand PCA coefficients");

    // ---- gen ----
    auto* c_gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string g_model, g_out, g_bank_file, g_distances, g_config;
    std::uint64_t g_seed = 0;
    int g_n = 100, g_jobs = 1, g_azimuths = 30;
    bool g_strict = false;
    BankConfig g_bank;
    c_gen->add_option("--model", g_model, "model JSON path")->required();
    c_gen->add_option("--out", g_out, "output NDJSON path");
    c_gen->add_option("--n", g_n, "sample count");
    c_gen->add_option("--seed", g_seed, "dataset seed");
    c_gen->add_option("--jobs", g_jobs, "parallel workers");
    c_gen->add_option("--bank-file", g_bank_file, "load the parameter bank from a file");
    c_gen->add_flag("--bank-strict", g_strict, "reject the whole bank on a limit violation");
    c_gen->add_option("--bank-body", g_bank.n_body, "procedural bank: body poses");
    c_gen->add_option("--bank-hand", g_bank.n_hand, "procedural bank: hand poses");
    c_gen->add_option("--bank-expression", g_bank.n_expression, "procedural bank: expressions");
    c_gen->add_option("--bank-shape", g_bank.n_shape, "procedural bank: shapes");
    c_gen->add_option("--angle-fraction", g_bank.angle_fraction,
                      "pose range as a fraction of the angle limits");
    c_gen->add_option("--distances", g_distances, "distance factors, e.g. 2,5,30");
    c_gen->add_option("--azimuths", g_azimuths, "number of viewpoints");

    // ---- fit ----
    auto* c_fit = app.add_subcommand("fit", "fit parameters to 2D keypoints");
    std::string f_model, f_dataset, f_out, f_kind = "d2s", f_config;
    int f_index = -1, f_jobs = 1;
    std::uint64_t f_seed = 0;
    c_fit->add_option("--model", f_model, "model JSON path")->required();
    c_fit->add_option("--dataset", f_dataset, "dataset NDJSON path")->required();
    c_fit->add_option("--out", f_out, "output directory");
    c_fit->add_option("--camera-kind", f_kind, "perspective | weak | d2s");
    c_fit->add_option("--index", f_index, "fit a single sample (default: all)");
    c_fit->add_option("--jobs", f_jobs, "parallel workers");
    c_fit->add_option("--config", f_config, "fit config JSON file");
    c_fit->add_option("--seed", f_seed, "initialization seed");

    // ---- train ----
    auto* c_train = app.add_subcommand("train", "two-phase regressor training");
    std::string t_model, t_dataset, t_out, t_config;
    std::uint64_t t_seed = 0;
    int t_epochs1 = -1, t_epochs2 = -1;
    double t_lr = -1;
    c_train->add_option("--model", t_model, "model JSON path")->required();
    c_train->add_option("--dataset", t_dataset, "dataset NDJSON path")->required();
    c_train->add_option("--out", t_out, "output directory");
    c_train->add_option("--config", t_config, "train config JSON file");
    c_train->add_option("--seed", t_seed, "training seed");
    c_train->add_option("--phase1-epochs", t_epochs1, "phase 1 epoch count");
    c_train->add_option("--phase2-epochs", t_epochs2, "phase 2 epoch count");
    c_train->add_option("--learning-rate", t_lr, "Adam learning rate");

    // ---- eval ----
    auto* c_eval = app.add_subcommand("eval", "evaluate weights or fit results");
    std::string e_model, e_dataset, e_out, e_weights, e_fit_results;
    c_eval->add_option("--model", e_model, "model JSON path")->required();
    c_eval->add_option("--dataset", e_dataset, "dataset NDJSON path")->required();
    c_eval->add_option("--out", e_out, "output directory");
    c_eval->add_option("--weights", e_weights, "regressor weights JSON");
    c_eval->add_option("--fit-results", e_fit_results, "directory of fit result JSONs");

    // ---- bench-distance ----
    auto* c_bd = app.add_subcommand("bench-distance", "distance sweep of the projection models");
    std::string bd_model, bd_out, bd_distances = "2,5,30", bd_kinds = "d2s,weak", bd_config;
    std::uint64_t bd_seed = 0;
    int bd_n = 20, bd_jobs = 1;
    c_bd->add_option("--model", bd_model, "model JSON path")->required();
    c_bd->add_option("--out", bd_out, "output directory");
    c_bd->add_option("--distances", bd_distances, "distance factors, e.g. 2,5,30");
    c_bd->add_option("--n", bd_n, "samples per distance bucket");
    c_bd->add_option("--camera-kinds", bd_kinds, "kinds to compare, e.g. d2s,weak");
    c_bd->add_option("--seed", bd_seed, "sweep seed");
    c_bd->add_option("--jobs", bd_jobs, "parallel workers");
    c_bd->add_option("--config", bd_config, "fit config JSON file");

    // ---- bench-viewpoint ----
    auto* c_bv = app.add_subcommand("bench-viewpoint", "viewpoint sweep of the projection models");
    std::string bv_model, bv_out, bv_kinds = "d2s,weak", bv_config;
    std::uint64_t bv_seed = 0;
    int bv_viewpoints = 30, bv_n = 10, bv_jobs = 1;
    double bv_distance = 3.0;
    c_bv->add_option("--model", bv_model, "model JSON path")->required();
    c_bv->add_option("--out", bv_out, "output directory");
    c_bv->add_option("--viewpoints", bv_viewpoints, "number of azimuth buckets");
    c_bv->add_option("--n", bv_n, "samples per viewpoint");
    c_bv->add_option("--distance", bv_distance, "distance factor of the sweep");
    c_bv->add_option("--camera-kinds", bv_kinds, "kinds to compare");
    c_bv->add_option("--seed", bv_seed, "sweep seed");
    c_bv->add_option("--jobs", bv_jobs, "parallel workers");
    c_bv->add_option("--config", bv_config, "fit config JSON file");

    // ---- rerun ----
    auto* c_rerun = app.add_subcommand("rerun", "replay a command from its manifest");
    std::string r_manifest;
    c_rerun->add_option("manifest", r_manifest, "manifest JSON path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_model->parsed()) {
            json cfg{{"seed", m_seed},
                     {"n_vertices", m_cfg.n_vertices},
                     {"verts_per_ring", m_cfg.verts_per_ring},
                     {"rings_per_bone", m_cfg.rings_per_bone},
                     {"n_body_joints", m_cfg.n_body_joints},
                     {"n_hand_joints", m_cfg.n_hand_joints},
                     {"n_shape_modes", m_cfg.n_shape_modes},
                     {"n_hand_pca", m_cfg.n_hand_pca}};
            if (!m_out.empty()) cfg["out"] = m_out;
            run_model(cfg);
        } else if (c_gen->parsed()) {
            CameraSamplerConfig cam;
            if (!g_distances.empty()) cam.distance_factors = parse_scalar_list(g_distances);
            cam.n_azimuths = g_azimuths;
            json cfg{{"model", g_model},
                     {"n", g_n},
                     {"seed", g_seed},
                     {"jobs", g_jobs},
                     {"bank", bank_config_to_json(g_bank)},
                     {"camera", camera_config_to_json(cam)}};
            if (!g_out.empty()) cfg["out"] = g_out;
            if (!g_bank_file.empty()) cfg["bank_file"] = g_bank_file;
            if (g_strict) cfg["bank_strict"] = true;
            run_gen(cfg);
        } else if (c_fit->parsed()) {
            json fit_cfg = f_config.empty() ? json::object() : read_json_file(f_config);
            if (f_seed != 0) fit_cfg["seed"] = f_seed;
            json cfg{{"model", f_model},
                     {"dataset", f_dataset},
                     {"camera_kind", f_kind},
                     {"index", f_index},
                     {"jobs", f_jobs},
                     {"fit_config", fit_config_to_json(fit_config_from_json(fit_cfg))}};
            if (!f_out.empty()) cfg["out"] = f_out;
            run_fit(cfg);
        } else if (c_train->parsed()) {
            json train_cfg = t_config.empty() ? json::object() : read_json_file(t_config);
            if (t_seed != 0) train_cfg["seed"] = t_seed;
            if (t_epochs1 >= 0) train_cfg["phase1_epochs"] = t_epochs1;
            if (t_epochs2 >= 0) train_cfg["phase2_epochs"] = t_epochs2;
            if (t_lr > 0) train_cfg["learning_rate"] = t_lr;
            json cfg{{"model", t_model},
                     {"dataset", t_dataset},
                     {"train_config", train_config_to_json(train_config_from_json(train_cfg))}};
            if (!t_out.empty()) cfg["out"] = t_out;
            run_train(cfg);
        } else if (c_eval->parsed()) {
            json cfg{{"model", e_model}, {"dataset", e_dataset}};
            if (!e_out.empty()) cfg["out"] = e_out;
            if (!e_weights.empty()) cfg["weights"] = e_weights;
            if (!e_fit_results.empty()) cfg["fit_results"] = e_fit_results;
            run_eval(cfg);
        } else if (c_bd->parsed()) {
            json fit_cfg = bd_config.empty() ? json::object() : read_json_file(bd_config);
            json kinds = json::array();
            for (CameraKind k : parse_kinds(bd_kinds)) kinds.push_back(to_string(k));
            json cfg{{"model", bd_model},
                     {"distances", parse_scalar_list(bd_distances)},
                     {"n_per_bucket", bd_n},
                     {"camera_kinds", kinds},
                     {"seed", bd_seed},
                     {"jobs", bd_jobs},
                     {"fit_config", fit_config_to_json(fit_config_from_json(fit_cfg))}};
            if (!bd_out.empty()) cfg["out"] = bd_out;
            run_bench_distance(cfg);
        } else if (c_bv->parsed()) {
            json fit_cfg = bv_config.empty() ? json::object() : read_json_file(bv_config);
            json kinds = json::array();
            for (CameraKind k : parse_kinds(bv_kinds)) kinds.push_back(to_string(k));
            json cfg{{"model", bv_model},
                     {"n_viewpoints", bv_viewpoints},
                     {"n_per_bucket", bv_n},
                     {"distance", bv_distance},
                     {"camera_kinds", kinds},
                     {"seed", bv_seed},
                     {"jobs", bv_jobs},
                     {"fit_config", fit_config_to_json(fit_config_from_json(fit_cfg))}};
            if (!bv_out.empty()) cfg["out"] = bv_out;
            run_bench_viewpoint(cfg);
        } else if (c_rerun->parsed()) {
            const RunManifest m = read_run_manifest(r_manifest);
            dispatch(m.command, m.config);
        }
    } catch (const Error& e) {
        std::cerr << json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    }
    return 0;
}
