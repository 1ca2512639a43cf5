#pragma once

#include "meshrec/json_io.hpp"
#include "meshrec/synth.hpp"

namespace meshrec {

// JSON forms of the pipeline records. Field names are part of the file
// contracts (datasets, fit results, manifests).

json camera_to_json(const CameraModel& cam);
CameraModel camera_from_json(const json& j);

json params_to_json(const FullParams& p);
FullParams params_from_json(const json& j);

json keypoints2_to_json(const Keypoints2D& k);
Keypoints2D keypoints2_from_json(const json& j);
json keypoints3_to_json(const Keypoints3D& k);
Keypoints3D keypoints3_from_json(const json& j);

json sample_to_json(const SyntheticSample& s);
SyntheticSample sample_from_json(const json& j);

Part part_from_string(const std::string& s);

// CLI-facing config files; missing keys keep their defaults.
struct FitConfig;
struct TrainConfig;
json fit_config_to_json(const FitConfig& c);
FitConfig fit_config_from_json(const json& j);
json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);

json fit_result_to_json(const struct FitResult& r);

}  // namespace meshrec
