#pragma once

#include <stdexcept>
#include <string>

namespace gbs {

// Error classes map one-to-one onto CLI exit codes.
enum class ErrorKind {
  kParameter = 2,   // invalid numeric parameter or spec
  kShape = 3,       // dimension mismatch
  kConfig = 4,      // configuration / contract violation
  kData = 5,        // malformed or missing input data
  kCheckpoint = 6,  // unreadable or incompatible checkpoint
  kNumeric = 7,     // non-finite values during training
  kIo = 8,          // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

const char* error_kind_name(ErrorKind kind);

#define GBS_CHECK(cond, kind, msg)                                  \
  do {                                                              \
    if (!(cond)) throw ::gbs::Error(::gbs::ErrorKind::kind, (msg)); \
  } while (0)

}  // namespace gbs
