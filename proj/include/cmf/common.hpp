#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmf {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

/// Raised when operand shapes violate an operation's contract.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a computation produces or receives non-finite values.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised on misuse of an API contract (wrong mode, consumed tape, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised by dataset generation / parsing failures.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised on malformed config, checkpoint or dump files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Index numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace cmf
