#pragma once

#include <stdexcept>
#include <string>

namespace fte {

enum class ErrorCode {
  contract,
  invalid_dimension,
  numerical,
  singular_matrix,
  degenerate_graph,
  isolated_node,
  config,
  data,
  protocol,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Process exit status for an error: 2 config, 3 data, 4 numerical failure.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::invalid_dimension:
      return 2;
    case ErrorCode::data:
    case ErrorCode::protocol:
      return 3;
    case ErrorCode::numerical:
    case ErrorCode::singular_matrix:
    case ErrorCode::degenerate_graph:
    case ErrorCode::isolated_node:
      return 4;
    case ErrorCode::contract:
      break;
  }
  return 1;
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::contract, what);
}

}  // namespace fte
