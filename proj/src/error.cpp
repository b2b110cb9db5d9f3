#include "qnbm/error.hpp"

namespace qnbm {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Schema: return "schema error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Numeric: return "numeric failure";
    case ErrorKind::Integrity: return "integrity error";
    case ErrorKind::Incompatible: return "incompatible checkpoint";
    case ErrorKind::Contract: return "contract violation";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

}  // namespace qnbm
