#include <doctest.h>

#include <fstream>

#include "meshrec/serialize.hpp"
#include "meshrec/synth.hpp"
#include "support.hpp"

using namespace meshrec;
using meshrec::testing::default_model;

namespace {

BankConfig tiny_bank_config() {
    BankConfig cfg;
    cfg.n_body = 6;
    cfg.n_hand = 5;
    cfg.n_expression = 4;
    cfg.n_shape = 3;
    return cfg;
}

// Singleton rest bank: one entry per category, everything at rest.
BankConfig rest_bank_config() {
    BankConfig cfg;
    cfg.n_body = cfg.n_hand = cfg.n_expression = cfg.n_shape = 1;
    cfg.angle_fraction = 0;
    cfg.expr_sigma = 0;
    cfg.beta_sigma = 0;
    return cfg;
}

}  // namespace

TEST_CASE("procedural bank respects limits and the seed") {
    const BodyModel& m = default_model();
    const ParameterBank a = build_bank(m, tiny_bank_config(), 3);
    const ParameterBank b = build_bank(m, tiny_bank_config(), 3);
    REQUIRE(a.body_poses.size() == 6);
    REQUIRE(a.hand_poses.size() == 5);
    for (size_t i = 0; i < a.body_poses.size(); ++i) {
        CHECK(exact_equal(a.body_poses[i].theta_body, b.body_poses[i].theta_body));
        FullParams probe = FullParams::rest(m);
        probe.theta_global = a.body_poses[i].theta_global;
        probe.theta_body = a.body_poses[i].theta_body;
        CHECK(pose_within_limits(m, probe));
    }
    for (const auto& h : a.hand_poses) {
        FullParams probe = FullParams::rest(m);
        probe.hand_left = h.theta_hp;
        probe.hand_right = h.theta_hp;
        CHECK(pose_within_limits(m, probe));
    }
}

TEST_CASE("angle fraction zero degenerates the bank to rest poses") {
    const BodyModel& m = default_model();
    BankConfig cfg = tiny_bank_config();
    cfg.angle_fraction = 0;
    const ParameterBank bank = build_bank(m, cfg, 9);
    for (const auto& e : bank.body_poses) {
        CHECK(e.theta_global.cwiseAbs().maxCoeff() == 0.0);
        CHECK(e.theta_body.cwiseAbs().maxCoeff() == 0.0);
    }
    for (const auto& e : bank.hand_poses) CHECK(e.theta_hp.cwiseAbs().maxCoeff() == 0.0);
    for (const auto& e : bank.expressions)
        CHECK(e.psi.tail<3>().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bank file validation") {
    const BodyModel& m = default_model();
    testing::TempDir dir("bank");
    ParameterBank bank = build_bank(m, tiny_bank_config(), 4);
    // Poison one body pose beyond the limits.
    bank.body_poses[2].theta_body(0, 0) = 100.0;
    bank.body_poses[2].provenance = "poisoned";
    const std::string path = dir.file("bank.json");
    save_bank(bank, path);

    CHECK_THROWS_AS(load_bank(m, path, true), BankValidationError);

    const BankLoadReport rep = load_bank(m, path, false);
    REQUIRE(rep.rejected.size() == 1);
    CHECK(rep.rejected[0].find("body_poses[2]") != std::string::npos);
    CHECK(rep.bank.body_poses.size() == bank.body_poses.size() - 1);
}

TEST_CASE("sample_full_params draws categories independently of the camera seed") {
    const BodyModel& m = default_model();
    const ParameterBank bank = build_bank(m, rest_bank_config(), 0);
    CameraSamplerConfig cam;
    cam.distance_factors = {2.0};
    cam.n_azimuths = 1;  // pins the viewpoint, so theta_global is deterministic too
    const SampledParams a = sample_full_params(m, bank, cam, 1);
    const SampledParams b = sample_full_params(m, bank, cam, 2);
    CHECK(exact_equal(a.params.theta_body, b.params.theta_body));
    CHECK(exact_equal(a.params.theta_global, b.params.theta_global));
    CHECK(exact_equal(a.params.beta, b.params.beta));
    CHECK(a.camera.f_x != b.camera.f_x);  // camera stays seeded

    const SampledParams c = sample_full_params(m, bank, cam, 1);
    CHECK(c.params == a.params);
    CHECK(c.camera == a.camera);
}

TEST_CASE("sample_full_params category frequencies are uniform") {
    const BodyModel& m = default_model();
    BankConfig cfg = tiny_bank_config();
    const ParameterBank bank = build_bank(m, cfg, 17);
    CameraSamplerConfig cam;
    cam.distance_factors = {2, 5, 30};
    cam.n_azimuths = 6;

    const int n = 10000;
    std::vector<int> shape_counts(static_cast<size_t>(cfg.n_shape), 0);
    std::map<std::string, int> dist_counts, az_counts;
    for (int i = 0; i < n; ++i) {
        const SampledParams sp = sample_full_params(m, bank, cam, mix_seed(999, static_cast<std::uint64_t>(i)));
        for (size_t k = 0; k < bank.shapes.size(); ++k)
            if (exact_equal(sp.params.beta, bank.shapes[k].beta)) {
                ++shape_counts[k];
                break;
            }
        ++dist_counts[sp.distance_bucket];
        ++az_counts[sp.viewpoint_bucket];
    }
    auto check_uniform = [&](double count, double p) {
        const double sigma = std::sqrt(n * p * (1 - p));
        CHECK(std::abs(count - n * p) <= 3 * sigma);
    };
    for (int c : shape_counts) check_uniform(c, 1.0 / cfg.n_shape);
    for (const auto& [k, c] : dist_counts) check_uniform(c, 1.0 / 3);
    for (const auto& [k, c] : az_counts) check_uniform(c, 1.0 / 6);
    CHECK(az_counts.size() == 6);
}

TEST_CASE("generate_sample invariants") {
    const BodyModel& m = default_model();
    const ParameterBank bank = build_bank(m, tiny_bank_config(), 5);
    GenerateConfig gc;
    gc.camera.distance_factors = {2.0};

    const SyntheticSample s = generate_sample(m, bank, gc, 77);
    // The 2D pairing is exactly the perspective projection of j3d.
    const Keypoints2D reproj = project_perspective(s.j3d, s.camera);
    CHECK(exact_equal(reproj.coords, s.j2d.coords));
    // j3d is the body-centered regression of the sample parameters.
    CHECK((s.j3d.coords - centered_joints(m, s.params)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(s.j3d.coords.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);

    const SyntheticSample again = generate_sample(m, bank, gc, 77);
    CHECK(again == s);
}

TEST_CASE("generate_sample projects rest joints per the pinhole formula") {
    const BodyModel& m = default_model();
    const ParameterBank bank = build_bank(m, rest_bank_config(), 0);
    GenerateConfig gc;
    gc.camera.distance_factors = {3.0};
    gc.camera.n_azimuths = 1;
    gc.camera.center_jitter = 0;

    const SyntheticSample s = generate_sample(m, bank, gc, 3);
    // Rest pose, azimuth zero: j3d equals centered rest-pose keypoints.
    Points3 centered = regress_joints(m, skin(m, FullParams::rest(m)));
    centered.rowwise() -= centered.colwise().mean().eval();
    CHECK((s.j3d.coords - centered).cwiseAbs().maxCoeff() < 1e-12);
    for (int i = 0; i < s.j3d.count(); ++i) {
        const Scalar denom = s.camera.d + s.j3d.coords(i, 2);
        CHECK(s.j2d.coords(i, 0) ==
              doctest::Approx(s.camera.f_x * (s.j3d.coords(i, 0) + s.camera.t_x) / denom)
                  .epsilon(1e-12));
        CHECK(s.j2d.coords(i, 1) ==
              doctest::Approx(s.camera.f_y * (s.j3d.coords(i, 1) + s.camera.t_y) / denom)
                  .epsilon(1e-12));
    }
}

TEST_CASE("generate_sample exhausts retries when the camera sits inside the body") {
    const BodyModel& m = default_model();
    const ParameterBank bank = build_bank(m, rest_bank_config(), 0);
    GenerateConfig gc;
    gc.camera.distance_factors = {0.01};
    gc.max_retries = 4;
    CHECK_THROWS_AS(generate_sample(m, bank, gc, 1), GenerationError);
}

TEST_CASE("dataset generation is canonical across worker counts") {
    const BodyModel& m = default_model();
    const ParameterBank bank = build_bank(m, tiny_bank_config(), 5);
    GenerateConfig gc;
    gc.camera.distance_factors = {2.0, 5.0};
    const auto serial = generate_dataset(m, bank, gc, 12, 1234, 1);
    const auto parallel = generate_dataset(m, bank, gc, 12, 1234, 3);
    REQUIRE(serial.size() == parallel.size());
    for (size_t i = 0; i < serial.size(); ++i) CHECK(serial[i] == parallel[i]);
}

TEST_CASE("degrade") {
    const BodyModel& m = default_model();
    const ParameterBank bank = build_bank(m, tiny_bank_config(), 5);
    GenerateConfig gc;
    gc.camera.distance_factors = {3.0};
    const SyntheticSample s = generate_sample(m, bank, gc, 9);

    SUBCASE("identity with zero noise and dropout") {
        const Keypoints2D out = degrade(s, DegradeConfig{});
        CHECK(out == s.j2d);
    }
    SUBCASE("hand dropout with probability one hides every hand keypoint") {
        DegradeConfig cfg;
        cfg.dropout_prob[static_cast<size_t>(Part::LeftHand)] = 1.0;
        cfg.dropout_prob[static_cast<size_t>(Part::RightHand)] = 1.0;
        const Keypoints2D out = degrade(s, cfg);
        for (int i = 0; i < out.count(); ++i) {
            const Part p = out.part[static_cast<size_t>(i)];
            if (p == Part::LeftHand || p == Part::RightHand)
                CHECK(out.visible[static_cast<size_t>(i)] == 0);
            else
                CHECK(out.visible[static_cast<size_t>(i)] == 1);
        }
    }
    SUBCASE("noise displacement magnitude follows the Rayleigh mean") {
        DegradeConfig cfg;
        cfg.keypoint_noise_sigma = 2.0;
        std::vector<double> disp;
        int seed = 0;
        while (disp.size() < 10000) {
            cfg.seed = static_cast<std::uint64_t>(++seed);
            const Keypoints2D out = degrade(s, cfg);
            for (int i = 0; i < out.count(); ++i)
                disp.push_back((out.coords.row(i) - s.j2d.coords.row(i)).norm());
        }
        const double mean = pairwise_mean(disp);
        const double expect = cfg.keypoint_noise_sigma * std::sqrt(M_PI / 2);
        const double sd = cfg.keypoint_noise_sigma * std::sqrt((4 - M_PI) / 2);
        CHECK(std::abs(mean - expect) <= 3 * sd / std::sqrt(static_cast<double>(disp.size())));
    }
    SUBCASE("config validation") {
        DegradeConfig bad;
        bad.keypoint_noise_sigma = -1;
        CHECK_THROWS_AS(degrade(s, bad), InvalidConfigError);
        DegradeConfig bad2;
        bad2.dropout_prob[0] = 1.5;
        CHECK_THROWS_AS(degrade(s, bad2), InvalidConfigError);
    }
}

namespace {

Keypoints2D square_keypoints() {
    Keypoints2D k;
    k.coords.resize(4, 2);
    k.coords << 0, 0, 2, 0, 2, 2, 0, 2;
    k.visible.assign(4, 1);
    k.part.assign(4, Part::Body);
    return k;
}

}  // namespace

TEST_CASE("scale normalization of a unit square") {
    const NormalizedKeypoints norm = scale_normalize(square_keypoints());
    const PartNormalization& rec = norm.parts[static_cast<size_t>(Part::Body)];
    CHECK_FALSE(rec.absent);
    CHECK(rec.center.x() == doctest::Approx(1.0));
    CHECK(rec.center.y() == doctest::Approx(1.0));
    CHECK(rec.half_extent == doctest::Approx(1.0));
    Points2 expect(4, 2);
    expect << -1, -1, 1, -1, 1, 1, -1, 1;
    CHECK((norm.keypoints.coords - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("scale normalization similarity invariance and inversion") {
    const BodyModel& m = default_model();
    const ParameterBank bank = build_bank(m, tiny_bank_config(), 5);
    GenerateConfig gc;
    gc.camera.distance_factors = {2.0};
    const SyntheticSample s = generate_sample(m, bank, gc, 30);

    SUBCASE("bitwise invariance for power-of-two scalings") {
        // Scaling by a power of two commutes with every rounding step, so the
        // normalized output is bit-identical; general similarity transforms
        // are covered by the 1e-12 subcase below.
        for (const Scalar a : {2.0, 0.25, 1024.0}) {
            Keypoints2D moved = s.j2d;
            moved.coords = a * s.j2d.coords;
            const NormalizedKeypoints na = scale_normalize(s.j2d);
            const NormalizedKeypoints nb = scale_normalize(moved);
            CHECK(exact_equal(na.keypoints.coords, nb.keypoints.coords));
        }
    }
    SUBCASE("near-exact invariance for arbitrary positive scalings") {
        SplitMix64 rng(31);
        for (int trial = 0; trial < 20; ++trial) {
            const Scalar a = rng.uniform(0.1, 10);
            const Vec2 b(rng.uniform(-100, 100), rng.uniform(-100, 100));
            Keypoints2D moved = s.j2d;
            moved.coords = a * s.j2d.coords;
            moved.coords.col(0).array() += b.x();
            moved.coords.col(1).array() += b.y();
            const NormalizedKeypoints na = scale_normalize(s.j2d);
            const NormalizedKeypoints nb = scale_normalize(moved);
            CHECK((na.keypoints.coords - nb.keypoints.coords).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SUBCASE("denormalization inverts the transform") {
        const NormalizedKeypoints norm = scale_normalize(s.j2d);
        const Keypoints2D back = denormalize(norm);
        CHECK((back.coords - s.j2d.coords).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("normalized visible keypoints stay within [-2, 2]") {
        SplitMix64 rng(32);
        for (int trial = 0; trial < 200; ++trial) {
            Keypoints2D k;
            const int n = 2 + rng.index(20);
            k.coords.resize(n, 2);
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < 2; ++c) k.coords(i, c) = rng.uniform(-500, 500);
            k.visible.assign(static_cast<size_t>(n), 1);
            k.part.assign(static_cast<size_t>(n), Part::Body);
            const NormalizedKeypoints norm = scale_normalize(k);
            CHECK(norm.keypoints.coords.cwiseAbs().maxCoeff() <= 2.0 + 1e-12);
        }
    }
}

TEST_CASE("scale normalization degenerate parts") {
    Keypoints2D k;
    k.coords.resize(2, 2);
    k.coords << 40, -7, 3, 3;
    k.visible = {1, 0};
    k.part = {Part::Body, Part::LeftHand};

    const NormalizedKeypoints norm = scale_normalize(k);
    // Single visible body point: zero output, floored half extent.
    CHECK(norm.keypoints.coords.row(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(norm.parts[static_cast<size_t>(Part::Body)].half_extent == kEpsilonBbox);
    CHECK_FALSE(norm.parts[static_cast<size_t>(Part::Body)].absent);
    // Fully invisible part is flagged absent with zeros emitted.
    CHECK(norm.parts[static_cast<size_t>(Part::LeftHand)].absent);
    CHECK(norm.keypoints.coords.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dataset files round trip") {
    const BodyModel& m = default_model();
    const ParameterBank bank = build_bank(m, tiny_bank_config(), 5);
    GenerateConfig gc;
    gc.camera.distance_factors = {2.0, 30.0};
    const auto samples = generate_dataset(m, bank, gc, 6, 55, 1);

    testing::TempDir dir("dataset");
    const std::string path = dir.file("data.ndjson");
    write_dataset(path, samples);
    const auto loaded = read_dataset(path);
    REQUIRE(loaded.size() == samples.size());
    for (size_t i = 0; i < samples.size(); ++i) CHECK(loaded[i] == samples[i]);

    SUBCASE("empty dataset is valid") {
        const std::string empty_path = dir.file("empty.ndjson");
        write_dataset(empty_path, {});
        CHECK(read_dataset(empty_path).empty());
    }
    SUBCASE("corrupted line is reported with its number") {
        std::ifstream in(path);
        std::string text((std::istreambuf_iterator<char>(in)), {});
        in.close();
        // Break the second sample (file line 3).
        size_t pos = 0;
        for (int i = 0; i < 2; ++i) pos = text.find('\n', pos) + 1;
        text.insert(pos, "{broken");
        std::ofstream out(path);
        out << text;
        out.close();
        try {
            read_dataset(path);
            FAIL("expected MalformedFileError");
        } catch (const MalformedFileError& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }
}
