#pragma once

#include <stdexcept>
#include <string>

namespace scorelab {

// Exit-code taxonomy shared by the library and the CLI:
//   2 usage, 3 missing/corrupt artifact, 4 fingerprint mismatch, 5 numeric failure.
class Error : public std::runtime_error {
 public:
  Error(std::string msg, int exit_code) : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg, 2) {}
};

class ArtifactError : public Error {
 public:
  explicit ArtifactError(const std::string& msg) : Error(msg, 3) {}
};

class FingerprintError : public Error {
 public:
  explicit FingerprintError(const std::string& msg) : Error(msg, 4) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg, 5) {}
};

}  // namespace scorelab
