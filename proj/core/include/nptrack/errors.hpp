#pragma once

#include <stdexcept>
#include <string>

namespace nptrack {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// terrain
struct DegenerateCloud : Error { using Error::Error; };
struct NonFiniteInput : Error { using Error::Error; };
struct UnknownProfile : Error { using Error::Error; };
struct InvalidBounds : Error { using Error::Error; };
struct OutOfBounds : Error { using Error::Error; };
struct NonUnitNormal : Error { using Error::Error; };

// dynamics
struct NonFiniteState : Error { using Error::Error; };

// sparse GP
struct SingularKernelMatrix : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct NonPositiveGain : Error { using Error::Error; };

// mppi / plant
struct AllRolloutsFailed : Error { using Error::Error; };
struct UnknownShape : Error { using Error::Error; };

// config / io
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

} // namespace nptrack
