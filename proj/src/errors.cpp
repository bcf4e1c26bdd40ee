#include "advcast/errors.hpp"

namespace advcast {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NonSymmetric: return "NonSymmetric";
    case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::MaxIterations: return "MaxIterations";
    case ErrorCode::SingularReducedSystem: return "SingularReducedSystem";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::MissingChannels: return "MissingChannels";
    case ErrorCode::GeneratorRequired: return "GeneratorRequired";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimsHeaderMismatch: return "DimsHeaderMismatch";
    case ErrorCode::AllZeroDifferences: return "AllZeroDifferences";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonPositiveBaseline: return "NonPositiveBaseline";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::MissingInput: return "MissingInput";
  }
  return "Unknown";
}

}  // namespace advcast
