#pragma once

#include <stdexcept>
#include <string>

namespace ladder {

// Error categories map onto CLI exit codes: validation -> 2, backend -> 3,
// state -> 4. Anything else is a plain Error (exit 1).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

struct BackendError : Error {
    explicit BackendError(const std::string& msg) : Error(msg) {}
};

struct StateError : Error {
    explicit StateError(const std::string& msg) : Error(msg) {}
};

struct CacheError : BackendError {
    explicit CacheError(const std::string& msg) : BackendError(msg) {}
};

}  // namespace ladder
