#pragma once

#include <stdexcept>
#include <string>

namespace deblur {

enum class ErrorKind {
  kDimension = 1,
  kConfig,
  kParameter,
  kState,
  kNumeric,
  kConvergence,
  kIo,
  kEmptyDataset,
};

// Base of every error thrown by the library. The kind maps one-to-one onto the
// C API status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define DEBLUR_DEFINE_ERROR(Name, Kind)                                         \
  class Name : public Error {                                                   \
   public:                                                                      \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}    \
  };

DEBLUR_DEFINE_ERROR(DimensionError, kDimension)
DEBLUR_DEFINE_ERROR(ConfigError, kConfig)
DEBLUR_DEFINE_ERROR(ParameterError, kParameter)
DEBLUR_DEFINE_ERROR(StateError, kState)
DEBLUR_DEFINE_ERROR(NumericError, kNumeric)
DEBLUR_DEFINE_ERROR(ConvergenceError, kConvergence)
DEBLUR_DEFINE_ERROR(IoError, kIo)
DEBLUR_DEFINE_ERROR(EmptyDatasetError, kEmptyDataset)

#undef DEBLUR_DEFINE_ERROR

}  // namespace deblur
