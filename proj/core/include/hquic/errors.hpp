#pragma once

#include <stdexcept>
#include <string>

namespace hquic {

struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IncompatibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hquic
