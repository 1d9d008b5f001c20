#include "peel/error.hpp"

namespace peel {

std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kEmptyDataset: return "empty_dataset";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kBudgetInfeasible: return "budget_infeasible";
    case ErrorKind::kNumerical: return "numerical";
    case ErrorKind::kSchemaMismatch: return "schema_mismatch";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
  }
  return "unknown";
}

}  // namespace peel
