#include "calibdb/errors.hpp"

namespace calibdb {

auto to_string(ErrorCode code) -> const char* {
    switch (code) {
        case ErrorCode::PreconditionViolation:
            return "PreconditionViolation";
        case ErrorCode::NonConvergence:
            return "NonConvergence";
        case ErrorCode::BehindCamera:
            return "BehindCamera";
        case ErrorCode::DegenerateConfiguration:
            return "DegenerateConfiguration";
        case ErrorCode::DegenerateMotion:
            return "DegenerateMotion";
        case ErrorCode::NumericalFailure:
            return "NumericalFailure";
        case ErrorCode::InsufficientData:
            return "InsufficientData";
        case ErrorCode::InfeasibleTarget:
            return "InfeasibleTarget";
        case ErrorCode::SessionNotCapturing:
            return "SessionNotCapturing";
        case ErrorCode::StorageFailure:
            return "StorageFailure";
        case ErrorCode::ProtocolError:
            return "ProtocolError";
    }
    return "Unknown";
}

}  // namespace calibdb
