#pragma once

#include <stdexcept>
#include <string>

namespace lfg {

// Values double as CLI exit codes.
enum class ErrorKind {
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kNumeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] void throw_config(const std::string& what);
[[noreturn]] void throw_data(const std::string& what);
[[noreturn]] void throw_numeric(const std::string& what);
[[noreturn]] void throw_usage(const std::string& what);

}  // namespace lfg
