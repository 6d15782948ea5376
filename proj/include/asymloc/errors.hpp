#pragma once

#include <stdexcept>
#include <string>

namespace asymloc {

// Error classes named after the failure they report. Everything derives from
// std::runtime_error so callers that do not care can catch one type.

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CorruptionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegeneracyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Non-finite value met during optimization.
struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace asymloc
