#include "nga/error.hpp"

namespace nga {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kArgument: return "argument error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kInfeasible: return "infeasible";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kContract: return "contract violation";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kRuntime: return "runtime error";
  }
  return "unknown error";
}

}  // namespace nga
