#pragma once

#include <stdexcept>
#include <string>

namespace dmas {

// Error taxonomy shared by the library and the CLI.
// The CLI maps these to process exit codes:
//   param_error    -> 1 (bad usage or parameter values)
//   io_error       -> 2 (missing/corrupt files, malformed formats)
//   internal_error -> 3 (invariant breach; always a bug)
struct param_error : std::invalid_argument {
    explicit param_error(const std::string& msg) : std::invalid_argument(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct internal_error : std::logic_error {
    explicit internal_error(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace dmas
