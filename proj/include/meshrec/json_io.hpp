#pragma once

#include <string>

#include <json.hpp>

#include "meshrec/core.hpp"

namespace meshrec {

using json = nlohmann::json;

// Row-major nested arrays for matrices; plain arrays for vectors. nlohmann
// serializes doubles shortest-round-trip, so files are bit-exact under
// save/load.

template <typename Derived>
json rows_to_json(const Eigen::MatrixBase<Derived>& m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(std::move(row));
    }
    return out;
}

template <typename Derived>
json vec_to_json(const Eigen::MatrixBase<Derived>& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

template <typename Mat>
Mat json_to_rows(const json& j, Eigen::Index cols, const std::string& what) {
    if (!j.is_array()) throw MalformedFileError(what + ": expected an array of rows");
    Mat m(static_cast<Eigen::Index>(j.size()), cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const json& row = j[static_cast<size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw MalformedFileError(what + ": row " + std::to_string(r) + " has wrong width");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = row[static_cast<size_t>(c)].template get<typename Mat::Scalar>();
    }
    return m;
}

inline VecX json_to_vec(const json& j, const std::string& what) {
    if (!j.is_array()) throw MalformedFileError(what + ": expected an array");
    VecX v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<size_t>(i)].get<Scalar>();
    return v;
}

inline const json& require(const json& j, const std::string& key) {
    const auto it = j.find(key);
    if (it == j.end()) throw MalformedFileError("missing field '" + key + "'");
    return *it;
}

// Whole-file helpers; both throw MalformedFileError with context.
json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j, int indent = -1);
// Write to a temp file in the same directory, then rename into place.
void write_json_file_atomic(const std::string& path, const json& j, int indent = -1);
void write_text_file_atomic(const std::string& path, const std::string& text);

// Shortest round-trip decimal for CSV output (matches JSON number formatting).
std::string format_double(double v);

}  // namespace meshrec
