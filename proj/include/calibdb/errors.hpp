#pragma once

#include <stdexcept>
#include <string>

namespace calibdb {

enum class ErrorCode {
    PreconditionViolation,
    NonConvergence,
    BehindCamera,
    DegenerateConfiguration,
    DegenerateMotion,
    NumericalFailure,
    InsufficientData,
    InfeasibleTarget,
    SessionNotCapturing,
    StorageFailure,
    ProtocolError,
};

[[nodiscard]] auto to_string(ErrorCode code) -> const char*;

class CalibError : public std::runtime_error {
  public:
    CalibError(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    [[nodiscard]] auto code() const noexcept -> ErrorCode { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw CalibError(code, what);
}

inline void require(bool condition, const std::string& what) {
    if (!condition) {
        fail(ErrorCode::PreconditionViolation, what);
    }
}

}  // namespace calibdb
