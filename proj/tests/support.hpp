#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "meshrec/body_model.hpp"
#include "meshrec/projection.hpp"

namespace meshrec::testing {

// One shared default model; building it is cheap but not free.
inline const BodyModel& default_model() {
    static const BodyModel model = build_toy_model(ToyModelConfig{}, 7);
    return model;
}

inline Scalar rel_err(Scalar analytic, Scalar numeric, Scalar floor = 1e-6) {
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Random keypoints with coordinates in [-extent/2, extent/2].
inline Keypoints3D random_keypoints(SplitMix64& rng, int k, Scalar extent) {
    Keypoints3D out;
    out.coords.resize(k, 3);
    for (int i = 0; i < k; ++i)
        for (int c = 0; c < 3; ++c) out.coords(i, c) = rng.uniform(-extent / 2, extent / 2);
    out.visible.assign(static_cast<size_t>(k), 1);
    out.part.assign(static_cast<size_t>(k), Part::Body);
    return out;
}

// Random in-limit parameters for gradient probes.
inline FullParams random_params(const BodyModel& model, SplitMix64& rng, Scalar pose_scale = 0.3,
                                Scalar beta_scale = 0.8) {
    FullParams p = FullParams::rest(model);
    for (int a = 0; a < 3; ++a) p.theta_global[a] = rng.uniform(-0.5, 0.5);
    for (int j = 0; j < p.theta_body.rows(); ++j)
        for (int a = 0; a < 3; ++a)
            p.theta_body(j, a) = pose_scale * rng.uniform(model.angle_limit_lo(j + 1, a),
                                                          model.angle_limit_hi(j + 1, a));
    for (int c = 0; c < p.hand_left.size(); ++c) {
        p.hand_left[c] = rng.uniform(-0.3, 0.3);
        p.hand_right[c] = rng.uniform(-0.3, 0.3);
    }
    for (int c = 0; c < 13; ++c) p.psi_face[c] = rng.uniform(-0.2, 0.2);
    for (int c = 0; c < p.beta.size(); ++c) p.beta[c] = beta_scale * rng.uniform(-1, 1);
    return p;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("meshrec_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace meshrec::testing
