#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sac {

using Dim = std::int64_t;
using Shape = std::vector<Dim>;

// Error taxonomy. The CLI maps these onto exit codes, so keep the
// categories stable: ConfigError -> 2, DataError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct GeometryError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

inline Dim numel_of(const Shape& shape) {
  Dim n = 1;
  for (Dim d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Minimal printf-style formatter (libstdc++ 11 lacks <format>).
template <typename... Args>
std::string strf(const char* fmt, Args... args) {
  int n = std::snprintf(nullptr, 0, fmt, args...);
  std::string s(static_cast<size_t>(n), '\0');
  std::snprintf(s.data(), s.size() + 1, fmt, args...);
  return s;
}

}  // namespace sac
