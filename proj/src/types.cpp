#include "proxops/types.hpp"

namespace proxops {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidMatrix: return "InvalidMatrix";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::Undefined: return "Undefined";
    case ErrorCode::NotInitialized: return "NotInitialized";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::CorruptModel: return "CorruptModel";
    case ErrorCode::CorruptDataset: return "CorruptDataset";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::HardInfeasible: return "HardInfeasible";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MissingAsset: return "MissingAsset";
  }
  return "Unknown";
}

}  // namespace proxops
