#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace dynreg {

// Process exit codes surfaced by the CLI. Library code throws; the CLI maps
// the caught error back to one of these.
enum class errc : int {
  validation = 2,  // bad inputs, configs, or contract violations
  numerical = 3,   // degeneracy, instability, non-convergence
  io = 4,          // file system failures
};

// Base error type. `tag` is a short machine-readable identifier; it is also
// what lands in the `status` column of benchmark trial records.
class error : public std::runtime_error {
 public:
  error(errc code, std::string tag, const std::string& what)
      : std::runtime_error(what), code_(code), tag_(std::move(tag)) {}

  errc code() const noexcept { return code_; }
  const std::string& tag() const noexcept { return tag_; }

 private:
  errc code_;
  std::string tag_;
};

class validation_error : public error {
 public:
  validation_error(std::string tag, const std::string& what)
      : error(errc::validation, std::move(tag), what) {}
};

class numerical_error : public error {
 public:
  numerical_error(std::string tag, const std::string& what)
      : error(errc::numerical, std::move(tag), what) {}
};

class io_error : public error {
 public:
  explicit io_error(const std::string& what) : error(errc::io, "io", what) {}
};

}  // namespace dynreg
