#pragma once

#include <stdexcept>
#include <string>

namespace qnbm {

enum class ErrorKind {
  Shape,
  Parameter,
  Data,
  Schema,
  Config,
  Numeric,
  Integrity,
  Incompatible,
  Contract,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

/// Base class of every error raised by the library. The kind drives the CLI
/// exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define QNBM_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(Kind, message) {} \
  }

QNBM_DEFINE_ERROR(ShapeError, ErrorKind::Shape);
QNBM_DEFINE_ERROR(ParameterError, ErrorKind::Parameter);
QNBM_DEFINE_ERROR(DataError, ErrorKind::Data);
QNBM_DEFINE_ERROR(SchemaError, ErrorKind::Schema);
QNBM_DEFINE_ERROR(ConfigError, ErrorKind::Config);
QNBM_DEFINE_ERROR(NumericError, ErrorKind::Numeric);
QNBM_DEFINE_ERROR(IntegrityError, ErrorKind::Integrity);
QNBM_DEFINE_ERROR(IncompatibleError, ErrorKind::Incompatible);
QNBM_DEFINE_ERROR(ContractError, ErrorKind::Contract);
QNBM_DEFINE_ERROR(IoError, ErrorKind::Io);

#undef QNBM_DEFINE_ERROR

}  // namespace qnbm
