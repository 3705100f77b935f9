#pragma once

#include <stdexcept>
#include <string>

namespace mgcnn {

// Thrown when an operation needs topology the complex does not have
// (e.g. kernel offsets on an unstructured mesh).
struct topology_error : std::runtime_error {
  explicit topology_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct duplicate_entry_error : std::runtime_error {
  explicit duplicate_entry_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct singular_degree_error : std::runtime_error {
  explicit singular_degree_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Integrator non-convergence, NaN propagation, zero-variance statistics.
struct numerical_error : std::runtime_error {
  explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mgcnn
