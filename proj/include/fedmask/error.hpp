#pragma once

#include <stdexcept>
#include <string>

namespace fedmask {

enum class ErrorKind {
  contract,            // caller broke a precondition
  degenerate_rescale,  // maximum observed distance is zero
  configuration,       // infeasible scenario / experiment parameters
  aggregation_stuck,   // no comparable pair left to merge
  structural,          // scenario lacks the structure an operation needs
  parse,               // malformed input file
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::contract: return "contract-violation";
    case ErrorKind::degenerate_rescale: return "degenerate-rescale";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::aggregation_stuck: return "aggregation-stuck";
    case ErrorKind::structural: return "structural";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

// Process exit code used by the CLI for each error class.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::contract: return 10;
    case ErrorKind::degenerate_rescale: return 11;
    case ErrorKind::configuration: return 12;
    case ErrorKind::aggregation_stuck: return 13;
    case ErrorKind::structural: return 14;
    case ErrorKind::parse: return 15;
    case ErrorKind::io: return 16;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw Error(ErrorKind::contract, what);
}

}  // namespace fedmask
