#pragma once

#include <stdexcept>
#include <string>

namespace rowflow {

/* Thrown for malformed configs, incompatible shapes and bad parameter values.
 * The CLI maps this family to exit code 2. */
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/* Anything that goes wrong after configuration was accepted (I/O failures,
 * capacity overruns, numeric poison). CLI exit code 3. */
class RunError : public std::runtime_error {
public:
    explicit RunError(const std::string& what) : std::runtime_error(what) {}
};

/* On-chip buffer cannot hold a layer's live set. */
class CapacityError : public RunError {
public:
    explicit CapacityError(const std::string& what) : RunError(what) {}
};

} // namespace rowflow
