#pragma once

#include <stdexcept>
#include <string>

namespace fadp {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 2, DataError -> 3, NumericalError -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

#define FADP_CHECK_SHAPE(cond, msg)                   \
  do {                                                \
    if (!(cond)) throw ::fadp::ShapeError(msg);       \
  } while (0)

}  // namespace fadp
