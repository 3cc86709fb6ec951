#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace phom {

/// Small fixed-capacity vector and matrix types; dimension is at most 3.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

inline constexpr int kMaxDim = 3;
inline constexpr double kPi = 3.14159265358979323846264338327950288;
inline constexpr double kTwoPi = 6.283185307179586476925286766559;

enum class ErrorCode {
    ConfigInvalid,
    ModelInvalid,
    StepInvalid,
    DomainInvalid,
    NotSpd,
    SingularStationary,
    SingularSystem,
    CenteringViolated,
    Censored,
    NoContraction,
    NewtonDiverged,
    Resolution,
    Io,
};

inline std::string_view to_string(ErrorCode c) {
    switch (c) {
        case ErrorCode::ConfigInvalid: return "CONFIG_INVALID";
        case ErrorCode::ModelInvalid: return "MODEL_INVALID";
        case ErrorCode::StepInvalid: return "STEP_INVALID";
        case ErrorCode::DomainInvalid: return "DOMAIN_INVALID";
        case ErrorCode::NotSpd: return "NOT_SPD";
        case ErrorCode::SingularStationary: return "SINGULAR_STATIONARY";
        case ErrorCode::SingularSystem: return "SINGULAR_SYSTEM";
        case ErrorCode::CenteringViolated: return "CENTERING_VIOLATED";
        case ErrorCode::Censored: return "CENSORED";
        case ErrorCode::NoContraction: return "NO_CONTRACTION";
        case ErrorCode::NewtonDiverged: return "NEWTON_DIVERGED";
        case ErrorCode::Resolution: return "RESOLUTION";
        case ErrorCode::Io: return "IO_ERROR";
    }
    return "UNKNOWN";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

    ErrorCode code() const noexcept { return code_; }
    /// The message without the code prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorCode code_;
    std::string message_;
};

/// Monte Carlo scalar estimate with its provenance.
struct McEstimate {
    double value = 0.0;
    double se = 0.0;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    double h = 0.0;
    std::size_t censored = 0;
};

inline Vec wrap_torus(const Vec& x) {
    Vec y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double v = x[i] - std::floor(x[i]);
        // floor can round up to exactly 1.0 for tiny negative inputs
        y[i] = v >= 1.0 ? 0.0 : v;
    }
    return y;
}

}  // namespace phom
