#pragma once

#include <stdexcept>
#include <string>

namespace unifine {

// Bad or unreadable input data: missing files, malformed records, empty text.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (dimension mismatch, NaN score...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A model backend failed while producing an output.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace unifine
