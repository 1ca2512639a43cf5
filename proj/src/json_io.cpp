#include "meshrec/json_io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace meshrec {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MalformedFileError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw MalformedFileError("cannot parse '" + path + "': " + e.what());
    }
}

void write_json_file(const std::string& path, const json& j, int indent) {
    std::ofstream out(path);
    if (!out) throw MalformedFileError("cannot open '" + path + "' for writing");
    out << j.dump(indent) << "\n";
    if (!out) throw MalformedFileError("write failed for '" + path + "'");
}

void write_text_file_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw MalformedFileError("cannot open '" + tmp + "' for writing");
        out << text;
        if (!out) throw MalformedFileError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw MalformedFileError("cannot move '" + tmp + "' to '" + path + "'");
}

void write_json_file_atomic(const std::string& path, const json& j, int indent) {
    write_text_file_atomic(path, j.dump(indent) + "\n");
}

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace meshrec
