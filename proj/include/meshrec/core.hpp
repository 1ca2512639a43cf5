#pragma once

#include <cstdint>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace meshrec {

using Scalar = double;

using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Point clouds are stored one point per row, like most mesh tooling.
using Points3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points2 = Eigen::Matrix<Scalar, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Triangles = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Joint groups of the articulated model; keypoints carry the matching part
// tags (Jaw joints surface as Face keypoints).
enum class JointKind : std::uint8_t { Body = 0, LeftHand = 1, RightHand = 2, Jaw = 3 };
enum class Part : std::uint8_t { Body = 0, LeftHand = 1, RightHand = 2, Face = 3 };

const char* to_string(JointKind k);
const char* to_string(Part p);
Part part_of(JointKind k);

// ---------------------------------------------------------------------------
// Errors. Every failure mode carries a stable machine-readable kind string so
// the CLI can emit structured error JSON.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct InvalidConfigError : Error {
    explicit InvalidConfigError(const std::string& m) : Error("invalid-config", m) {}
};
struct NumericInputError : Error {
    explicit NumericInputError(const std::string& m) : Error("numeric-input", m) {}
};
struct DimensionError : Error {
    explicit DimensionError(const std::string& m) : Error("shape", m) {}
};
struct BehindCameraError : Error {
    explicit BehindCameraError(const std::string& m, std::vector<int> idx = {})
        : Error("behind-camera", m), indices(std::move(idx)) {}
    std::vector<int> indices;
};
struct MalformedFileError : Error {
    explicit MalformedFileError(const std::string& m) : Error("malformed-file", m) {}
};
struct VersionError : Error {
    explicit VersionError(const std::string& m) : Error("version", m) {}
};
struct EmptyEvaluationError : Error {
    explicit EmptyEvaluationError(const std::string& m) : Error("empty-evaluation", m) {}
};
struct DegenerateAlignmentError : Error {
    explicit DegenerateAlignmentError(const std::string& m) : Error("degenerate-alignment", m) {}
};
struct LabelingError : Error {
    explicit LabelingError(const std::string& m) : Error("labeling", m) {}
};
struct BankValidationError : Error {
    explicit BankValidationError(const std::string& m) : Error("bank-validation", m) {}
};
struct GenerationError : Error {
    explicit GenerationError(const std::string& m) : Error("generation", m) {}
};
struct InsufficientKeypointsError : Error {
    explicit InsufficientKeypointsError(const std::string& m)
        : Error("insufficient-keypoints", m) {}
};
struct AbsentPartError : Error {
    explicit AbsentPartError(const std::string& m) : Error("absent-part", m) {}
};
struct TrainingDivergenceError : Error {
    explicit TrainingDivergenceError(const std::string& m)
        : Error("training-divergence", m) {}
};

// ---------------------------------------------------------------------------
// Seeded randomness. std::random distributions are not pinned by the standard,
// so everything random in this project flows through SplitMix64: one fully
// specified stream per (seed, purpose), reproducible bit-for-bit.
// ---------------------------------------------------------------------------

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit mantissa.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Index in [0, n).
    int index(int n) {
        return std::min(n - 1, static_cast<int>(uniform() * static_cast<double>(n)));
    }

    // Box-Muller; two uniforms per draw, no cached state.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::uint64_t state_;
};

// Stable seed fan-out: hash(seed, i) keyed substreams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key) {
    SplitMix64 r(seed ^ (0x9E3779B97F4A7C15ull + (key << 6) + (key >> 2) + key));
    return r.next();
}

// ---------------------------------------------------------------------------
// Numeric helpers
// ---------------------------------------------------------------------------

// Order-stable summation: recursive pairwise, so parallel map + serial reduce
// over the canonical order gives the same result regardless of worker count.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t h = v.size() / 2;
    return pairwise_sum(v.subspan(0, h)) + pairwise_sum(v.subspan(h));
}

inline double pairwise_mean(std::span<const double> v) {
    return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

// Bit-exact equality with dimension check (Eigen's operator== is element-wise).
template <typename A, typename B>
bool exact_equal(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (a.size() == 0) return true;
    return (a.derived().array() == b.derived().array()).all();
}

}  // namespace meshrec
