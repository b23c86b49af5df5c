#pragma once

#include <stdexcept>
#include <string>

namespace unitscope {

// Library failure surfaced to callers; the CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Unusable configuration or input; the CLI maps these to exit code 2.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what) {}
};

}  // namespace unitscope
