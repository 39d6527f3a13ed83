#pragma once

#include <stdexcept>
#include <string>

namespace privest {

/// Coarse failure category, used by callers (and the CLI) to map errors
/// onto exit codes without parsing message text.
enum class ErrorKind {
  invalid_input,    // malformed arguments, non-finite entries, wrong-case calls
  model_invalid,    // parse/dimension/invariant failures while loading a model
  infeasible,       // requested thresholds or budgets cannot be met
  solver_failure,   // numerical solver did not reach the requested status
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace privest
