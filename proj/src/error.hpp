#pragma once

#include <stdexcept>
#include <string>

namespace echomem {

// Bad user input: configs, parameter invariants, infeasible sequences.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures during a run: non-convergence, I/O, internal limits.
class EngineError : public std::runtime_error {
 public:
  explicit EngineError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace echomem
