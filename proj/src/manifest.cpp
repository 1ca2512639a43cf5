#include "meshrec/manifest.hpp"

namespace meshrec {

json manifest_to_json(const RunManifest& m) {
    return json{{"command", m.command},
                {"config", m.config},
                {"artifact_version", m.artifact_version},
                {"inputs", m.inputs},
                {"outputs", m.outputs},
                {"duration_seconds", m.duration_seconds}};
}

RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    m.command = require(j, "command").get<std::string>();
    m.config = require(j, "config");
    m.artifact_version = require(j, "artifact_version").get<std::string>();
    m.inputs = require(j, "inputs").get<std::vector<std::string>>();
    m.outputs = require(j, "outputs").get<std::vector<std::string>>();
    m.duration_seconds = require(j, "duration_seconds").get<double>();
    return m;
}

void write_run_manifest(const std::string& path, const RunManifest& m) {
    write_json_file_atomic(path, manifest_to_json(m), 2);
}

RunManifest read_run_manifest(const std::string& path) {
    return manifest_from_json(read_json_file(path));
}

}  // namespace meshrec
