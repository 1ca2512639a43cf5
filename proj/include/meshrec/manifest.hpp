#pragma once

#include <string>
#include <vector>

#include "meshrec/json_io.hpp"

namespace meshrec {

inline constexpr const char* kArtifactVersion = "0.1.0";

// Written atomically alongside every CLI output; re-running a command from its
// manifest reproduces the outputs bit-identically (the duration excepted).
struct RunManifest {
    std::string command;
    json config;  // full resolved configuration, flag overrides applied
    std::string artifact_version = kArtifactVersion;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double duration_seconds = 0;
};

json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const json& j);

void write_run_manifest(const std::string& path, const RunManifest& m);
RunManifest read_run_manifest(const std::string& path);

}  // namespace meshrec
