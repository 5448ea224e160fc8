#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scpvis {

enum class ErrorKind {
  parse,
  empty_map,
  resource,
  construction,
  infeasible_route,
  unreachable,
  seed_in_collision,
  corridor_failure,
  optimization_failure,
  io,
  domain,
  input,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::empty_map: return "empty_map";
    case ErrorKind::resource: return "resource";
    case ErrorKind::construction: return "construction";
    case ErrorKind::infeasible_route: return "infeasible_route";
    case ErrorKind::unreachable: return "unreachable";
    case ErrorKind::seed_in_collision: return "seed_in_collision";
    case ErrorKind::corridor_failure: return "corridor_failure";
    case ErrorKind::optimization_failure: return "optimization_failure";
    case ErrorKind::io: return "io";
    case ErrorKind::domain: return "domain";
    case ErrorKind::input: return "input";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace scpvis
