#pragma once

#include <stdexcept>

namespace mcgkt {

// Error taxonomy shared by every module. The CLI maps these onto process
// exit codes: usage/shape/config/mapping -> 1, io/format -> 2, numeric -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct MappingError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };

}  // namespace mcgkt
